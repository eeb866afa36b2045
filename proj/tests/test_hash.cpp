#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>

#include "support.hpp"

using namespace foundry;
namespace ft = foundry::testing;

TEST_SUITE("hash") {

TEST_CASE("crc64 matches the standard check value") {
    const char* check = "123456789";
    CHECK(crc64(check, 9) == 0x995DC9BBDF1939FAull);
}

TEST_CASE("crc64 table implementation agrees with the bitwise oracle") {
    SplitMix64 rng(42);
    for (int round = 0; round < 50; ++round) {
        std::vector<uint8_t> data(rng.below(512));
        for (auto& byte : data) {
            byte = static_cast<uint8_t>(rng.next() & 0xFF);
        }
        CHECK(crc64(data) == ft::crc64_bitwise(data));
    }
}

TEST_CASE("crc64 streaming equals one-shot") {
    std::vector<uint8_t> data(1000);
    SplitMix64 rng(7);
    for (auto& byte : data) byte = static_cast<uint8_t>(rng.next() & 0xFF);
    Crc64 streaming;
    streaming.update(data.data(), 100);
    streaming.update(data.data() + 100, 900);
    CHECK(streaming.finish() == crc64(data));
}

TEST_CASE("crc64 tail forging hits arbitrary targets") {
    SplitMix64 rng(99);
    for (int round = 0; round < 20; ++round) {
        std::vector<uint8_t> prefix(16 + rng.below(200));
        for (auto& byte : prefix) byte = static_cast<uint8_t>(rng.next() & 0xFF);
        const uint64_t target = rng.next();
        const auto tail = ft::forge_crc64_tail(prefix, target);
        std::vector<uint8_t> full = prefix;
        full.insert(full.end(), tail.begin(), tail.end());
        CHECK(crc64(full) == target);
    }
}

TEST_CASE("murmur3 128 is deterministic and length-sensitive") {
    const std::string a = "deterministic input";
    CHECK(murmur3_128(a.data(), a.size()) == murmur3_128(a.data(), a.size()));
    CHECK(murmur3_128(a.data(), a.size()) != murmur3_128(a.data(), a.size() - 1));
    CHECK(murmur3_128(a.data(), a.size(), 1) != murmur3_128(a.data(), a.size(), 2));
}

TEST_CASE("murmur3 flips on single-bit changes") {
    SplitMix64 rng(5);
    std::vector<uint8_t> data(64);
    for (auto& byte : data) byte = static_cast<uint8_t>(rng.next() & 0xFF);
    const Digest128 base = murmur3_128(data);
    for (size_t bit = 0; bit < data.size() * 8; bit += 17) {
        auto copy = data;
        copy[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
        CHECK(murmur3_128(copy) != base);
    }
}

TEST_CASE("hex round trip") {
    CHECK(to_hex(0x1234ABCDull) == "000000001234abcd");
    CHECK(parse_hex_u64("000000001234abcd") == 0x1234ABCDull);
    CHECK(parse_hex_u64("ffffffffffffffff") == ~0ull);
    CHECK_THROWS_AS(parse_hex_u64("xyz"), Error);
    CHECK(Digest128{1, 2}.hex() == "00000000000000010000000000000002");
}

}  // TEST_SUITE
