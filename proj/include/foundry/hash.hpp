#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace foundry {

// CRC-64/XZ (poly 0x42F0E1EBA9EA3693, reflected, init/xorout all-ones).
// Used as the content hash for kernel binaries and per-record checksums.
// Pinned in archive manifests as hash algorithm id 1.
inline constexpr uint8_t kContentHashAlgorithm = 1;

class Crc64 {
public:
    Crc64() = default;

    void update(const void* data, size_t length);
    uint64_t finish() const { return state_ ^ 0xFFFFFFFFFFFFFFFFull; }

private:
    uint64_t state_ = 0xFFFFFFFFFFFFFFFFull;
};

uint64_t crc64(const void* data, size_t length);
uint64_t crc64(std::span<const uint8_t> data);

struct Digest128 {
    uint64_t hi = 0;
    uint64_t lo = 0;

    bool operator==(const Digest128&) const = default;
    auto operator<=>(const Digest128&) const = default;

    std::string hex() const;
};

// MurmurHash3 x64 128-bit, used for topology fingerprints.
Digest128 murmur3_128(const void* data, size_t length, uint64_t seed = 0);
Digest128 murmur3_128(std::span<const uint8_t> data, uint64_t seed = 0);

std::string to_hex(uint64_t value);
uint64_t parse_hex_u64(const std::string& text);

struct Digest128Hash {
    size_t operator()(const Digest128& d) const noexcept {
        return static_cast<size_t>(d.hi ^ (d.lo * 0x9E3779B97F4A7C15ull));
    }
};

}  // namespace foundry
