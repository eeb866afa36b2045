#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace foundry {

// Per-kernel function attributes, mirroring what a driver reports for a
// loaded function handle.
struct FuncAttrs {
    int32_t max_dynamic_shared_size_bytes = 0;
    int32_t preferred_shared_memory_carveout = -1;
    int32_t cluster_scheduling_policy_preference = 0;
    int32_t required_cluster_width = 0;
    int32_t required_cluster_height = 0;
    int32_t required_cluster_depth = 0;

    bool operator==(const FuncAttrs&) const = default;
};

// One kernel entrypoint inside a simulated device binary. The hidden
// offsets name the byte positions inside the launch argument buffer that
// the simulated hardware dereferences as 8-byte device addresses. They are
// consumed by the sim-driver only; tooling layers never read them.
struct KernelEntry {
    std::string name;
    uint32_t arg_buffer_size = 0;
    std::vector<uint32_t> hidden_offsets;
    FuncAttrs attrs;

    bool operator==(const KernelEntry&) const = default;
};

// Parsed form of the simulated binary container ("FNDB"). A relocatable
// segment cannot be loaded directly; it must be pre-linked with its
// sibling segments (same link tag) into a loadable image first.
struct KernelImage {
    static constexpr uint16_t kFormatVersion = 1;

    bool relocatable = false;
    bool requires_device_init = false;
    uint32_t link_tag = 0;
    std::vector<KernelEntry> entrypoints;
    std::vector<uint8_t> aux;  // opaque trailing bytes, hashed but never interpreted

    bool operator==(const KernelImage&) const = default;
};

std::vector<uint8_t> encode_kernel_image(const KernelImage& image);

// Throws Errc::binary_format on malformed payloads, including hidden
// offsets that do not fit the declared argument buffer.
KernelImage parse_kernel_image(std::span<const uint8_t> payload);

// Merges relocatable segments with a common link tag into one loadable
// image. Duplicate entrypoint names across segments are an error.
std::vector<uint8_t> link_segments(const std::vector<std::vector<uint8_t>>& segments);

}  // namespace foundry
