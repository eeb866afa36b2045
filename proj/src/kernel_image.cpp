#include "foundry/kernel_image.hpp"

#include <unordered_set>

#include "foundry/io.hpp"

namespace foundry {

namespace {
constexpr char kMagic[5] = "FNDB";
constexpr uint8_t kFlagRelocatable = 0x01;
constexpr uint8_t kFlagRequiresDeviceInit = 0x02;
}  // namespace

std::vector<uint8_t> encode_kernel_image(const KernelImage& image) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(KernelImage::kFormatVersion);
    uint8_t flags = 0;
    if (image.relocatable) flags |= kFlagRelocatable;
    if (image.requires_device_init) flags |= kFlagRequiresDeviceInit;
    w.u8(flags);
    w.u32(image.link_tag);
    w.u32(static_cast<uint32_t>(image.entrypoints.size()));
    for (const auto& entry : image.entrypoints) {
        w.str(entry.name);
        w.u32(entry.arg_buffer_size);
        w.u32(static_cast<uint32_t>(entry.hidden_offsets.size()));
        for (uint32_t off : entry.hidden_offsets) {
            w.u32(off);
        }
        w.i32(entry.attrs.max_dynamic_shared_size_bytes);
        w.i32(entry.attrs.preferred_shared_memory_carveout);
        w.i32(entry.attrs.cluster_scheduling_policy_preference);
        w.i32(entry.attrs.required_cluster_width);
        w.i32(entry.attrs.required_cluster_height);
        w.i32(entry.attrs.required_cluster_depth);
    }
    w.u32(static_cast<uint32_t>(image.aux.size()));
    w.bytes(image.aux);
    return w.take();
}

KernelImage parse_kernel_image(std::span<const uint8_t> payload) {
    ByteReader r(payload, Errc::binary_format);
    r.expect_magic(kMagic);
    const uint16_t version = r.u16();
    FOUNDRY_CHECK(version == KernelImage::kFormatVersion, Errc::binary_format,
                  "unsupported image version " + std::to_string(version));

    KernelImage image;
    const uint8_t flags = r.u8();
    image.relocatable = (flags & kFlagRelocatable) != 0;
    image.requires_device_init = (flags & kFlagRequiresDeviceInit) != 0;
    image.link_tag = r.u32();

    const uint32_t count = r.u32();
    image.entrypoints.reserve(count);
    std::unordered_set<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        KernelEntry entry;
        entry.name = r.str();
        FOUNDRY_CHECK(!entry.name.empty(), Errc::binary_format, "empty entrypoint name");
        FOUNDRY_CHECK(seen.insert(entry.name).second, Errc::binary_format,
                      "duplicate entrypoint '" + entry.name + "'");
        entry.arg_buffer_size = r.u32();
        const uint32_t offsets = r.u32();
        entry.hidden_offsets.reserve(offsets);
        for (uint32_t j = 0; j < offsets; ++j) {
            const uint32_t off = r.u32();
            FOUNDRY_CHECK(static_cast<uint64_t>(off) + 8 <= entry.arg_buffer_size,
                          Errc::binary_format,
                          "hidden offset " + std::to_string(off) + " out of range in '" +
                              entry.name + "'");
            entry.hidden_offsets.push_back(off);
        }
        entry.attrs.max_dynamic_shared_size_bytes = r.i32();
        entry.attrs.preferred_shared_memory_carveout = r.i32();
        entry.attrs.cluster_scheduling_policy_preference = r.i32();
        entry.attrs.required_cluster_width = r.i32();
        entry.attrs.required_cluster_height = r.i32();
        entry.attrs.required_cluster_depth = r.i32();
        image.entrypoints.push_back(std::move(entry));
    }

    const uint32_t aux_size = r.u32();
    image.aux = r.bytes(aux_size);
    FOUNDRY_CHECK(r.done(), Errc::binary_format, "trailing bytes after image");
    return image;
}

std::vector<uint8_t> link_segments(const std::vector<std::vector<uint8_t>>& segments) {
    FOUNDRY_CHECK(!segments.empty(), Errc::invalid_argument, "no segments to link");

    KernelImage merged;
    std::unordered_set<std::string> names;
    bool first = true;
    for (const auto& payload : segments) {
        KernelImage segment = parse_kernel_image(payload);
        if (first) {
            merged.link_tag = segment.link_tag;
            merged.requires_device_init = segment.requires_device_init;
            first = false;
        } else {
            FOUNDRY_CHECK(segment.link_tag == merged.link_tag, Errc::binary_format,
                          "link tag mismatch across segments");
            merged.requires_device_init |= segment.requires_device_init;
        }
        for (auto& entry : segment.entrypoints) {
            FOUNDRY_CHECK(names.insert(entry.name).second, Errc::binary_format,
                          "conflicting entrypoint '" + entry.name + "' across segments");
            merged.entrypoints.push_back(std::move(entry));
        }
    }
    merged.relocatable = false;
    return encode_kernel_image(merged);
}

}  // namespace foundry
