#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

using namespace foundry;
namespace ft = foundry::testing;

TEST_SUITE("kernel_image") {

TEST_CASE("round trip preserves every field") {
    KernelImage image;
    image.link_tag = 42;
    image.requires_device_init = true;
    KernelEntry entry;
    entry.name = "nvjet_tst_168x128_64x5_1x2_h_bz_TNN";
    entry.arg_buffer_size = 1720;
    entry.hidden_offsets = {16, 24, 1704};
    entry.attrs.max_dynamic_shared_size_bytes = 206044;
    entry.attrs.preferred_shared_memory_carveout = -1;
    image.entrypoints.push_back(entry);
    image.aux = {1, 2, 3, 4};

    const auto payload = encode_kernel_image(image);
    CHECK(parse_kernel_image(payload) == image);
}

TEST_CASE("malformed payloads are rejected") {
    CHECK_THROWS_AS(parse_kernel_image(std::vector<uint8_t>{'X', 'X', 'X', 'X'}), Error);

    auto payload = ft::tiny_image("k0");
    SUBCASE("bad magic") {
        payload[0] = 'Z';
        CHECK_THROWS_WITH_AS(parse_kernel_image(payload),
                             doctest::Contains("bad magic"), Error);
    }
    SUBCASE("truncation") {
        payload.resize(payload.size() - 3);
        CHECK_THROWS_AS(parse_kernel_image(payload), Error);
    }
    SUBCASE("trailing garbage") {
        payload.push_back(0);
        CHECK_THROWS_AS(parse_kernel_image(payload), Error);
    }
    SUBCASE("error code is binary-format") {
        payload[0] = 'Z';
        try {
            parse_kernel_image(payload);
            FAIL("expected a throw");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::binary_format);
        }
    }
}

TEST_CASE("hidden offsets must fit the declared argument buffer") {
    KernelImage image;
    KernelEntry entry;
    entry.name = "k0";
    entry.arg_buffer_size = 16;
    entry.hidden_offsets = {9};  // 9 + 8 > 16
    image.entrypoints.push_back(entry);
    CHECK_THROWS_WITH_AS(parse_kernel_image(encode_kernel_image(image)),
                         doctest::Contains("hidden offset"), Error);
}

TEST_CASE("duplicate entrypoints in one image are rejected") {
    KernelImage image;
    KernelEntry entry;
    entry.name = "k0";
    entry.arg_buffer_size = 16;
    image.entrypoints.push_back(entry);
    image.entrypoints.push_back(entry);
    CHECK_THROWS_WITH_AS(parse_kernel_image(encode_kernel_image(image)),
                         doctest::Contains("duplicate entrypoint"), Error);
}

TEST_CASE("linking a single segment is the identity on its contents") {
    KernelImage segment;
    segment.relocatable = true;
    segment.link_tag = 7;
    KernelEntry entry;
    entry.name = "k0";
    entry.arg_buffer_size = 32;
    entry.hidden_offsets = {8};
    segment.entrypoints.push_back(entry);

    const auto linked = link_segments({encode_kernel_image(segment)});
    const KernelImage parsed = parse_kernel_image(linked);
    CHECK_FALSE(parsed.relocatable);
    CHECK(parsed.link_tag == 7);
    REQUIRE(parsed.entrypoints.size() == 1);
    CHECK(parsed.entrypoints[0] == entry);
}

TEST_CASE("linking merges entrypoints across segments") {
    auto a = ft::tiny_image("k0", 64, {8}, false, 7);
    auto b = ft::tiny_image("k1", 64, {16}, false, 7);
    const KernelImage merged = parse_kernel_image(link_segments({a, b}));
    REQUIRE(merged.entrypoints.size() == 2);
    CHECK(merged.entrypoints[0].name == "k0");
    CHECK(merged.entrypoints[1].name == "k1");
}

TEST_CASE("linking rejects mismatched tags and name conflicts") {
    CHECK_THROWS_WITH_AS(
        link_segments({ft::tiny_image("k0", 64, {8}, false, 1),
                       ft::tiny_image("k1", 64, {8}, false, 2)}),
        doctest::Contains("link tag"), Error);
    CHECK_THROWS_WITH_AS(
        link_segments({ft::tiny_image("k0", 64, {8}, false, 1),
                       ft::tiny_image("k0", 64, {8}, false, 1)}),
        doctest::Contains("conflicting entrypoint"), Error);
}

}  // TEST_SUITE
