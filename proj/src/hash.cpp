#include "foundry/hash.hpp"

#include <array>
#include <cstdio>
#include <cstring>

#include "foundry/errors.hpp"

namespace foundry {

namespace {

std::array<uint64_t, 256> make_crc64_table() {
    // Reflected form of poly 0x42F0E1EBA9EA3693.
    constexpr uint64_t poly = 0xC96C5795D7870F42ull;
    std::array<uint64_t, 256> table{};
    for (uint64_t i = 0; i < 256; ++i) {
        uint64_t crc = i;
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 1) ? (crc >> 1) ^ poly : crc >> 1;
        }
        table[i] = crc;
    }
    return table;
}

const std::array<uint64_t, 256>& crc64_table() {
    static const std::array<uint64_t, 256> table = make_crc64_table();
    return table;
}

inline uint64_t rotl64(uint64_t x, int8_t r) {
    return (x << r) | (x >> (64 - r));
}

inline uint64_t fmix64(uint64_t k) {
    k ^= k >> 33;
    k *= 0xFF51AFD7ED558CCDull;
    k ^= k >> 33;
    k *= 0xC4CEB9FE1A85EC53ull;
    k ^= k >> 33;
    return k;
}

inline uint64_t load_u64(const uint8_t* p) {
    uint64_t v;
    std::memcpy(&v, p, sizeof(v));
    return v;  // little-endian hosts only, matching the on-disk formats
}

}  // namespace

void Crc64::update(const void* data, size_t length) {
    const auto& table = crc64_table();
    const auto* bytes = static_cast<const uint8_t*>(data);
    uint64_t crc = state_;
    for (size_t i = 0; i < length; ++i) {
        crc = (crc >> 8) ^ table[(crc ^ bytes[i]) & 0xFF];
    }
    state_ = crc;
}

uint64_t crc64(const void* data, size_t length) {
    Crc64 crc;
    crc.update(data, length);
    return crc.finish();
}

uint64_t crc64(std::span<const uint8_t> data) {
    return crc64(data.data(), data.size());
}

Digest128 murmur3_128(const void* data, size_t length, uint64_t seed) {
    const auto* bytes = static_cast<const uint8_t*>(data);
    const size_t nblocks = length / 16;

    uint64_t h1 = seed;
    uint64_t h2 = seed;
    constexpr uint64_t c1 = 0x87C37B91114253D5ull;
    constexpr uint64_t c2 = 0x4CF5AD432745937Full;

    for (size_t i = 0; i < nblocks; ++i) {
        uint64_t k1 = load_u64(bytes + i * 16);
        uint64_t k2 = load_u64(bytes + i * 16 + 8);

        k1 *= c1;
        k1 = rotl64(k1, 31);
        k1 *= c2;
        h1 ^= k1;
        h1 = rotl64(h1, 27);
        h1 += h2;
        h1 = h1 * 5 + 0x52DCE729;

        k2 *= c2;
        k2 = rotl64(k2, 33);
        k2 *= c1;
        h2 ^= k2;
        h2 = rotl64(h2, 31);
        h2 += h1;
        h2 = h2 * 5 + 0x38495AB5;
    }

    const uint8_t* tail = bytes + nblocks * 16;
    uint64_t k1 = 0;
    uint64_t k2 = 0;
    switch (length & 15) {
        case 15: k2 ^= static_cast<uint64_t>(tail[14]) << 48; [[fallthrough]];
        case 14: k2 ^= static_cast<uint64_t>(tail[13]) << 40; [[fallthrough]];
        case 13: k2 ^= static_cast<uint64_t>(tail[12]) << 32; [[fallthrough]];
        case 12: k2 ^= static_cast<uint64_t>(tail[11]) << 24; [[fallthrough]];
        case 11: k2 ^= static_cast<uint64_t>(tail[10]) << 16; [[fallthrough]];
        case 10: k2 ^= static_cast<uint64_t>(tail[9]) << 8; [[fallthrough]];
        case 9:
            k2 ^= static_cast<uint64_t>(tail[8]);
            k2 *= c2;
            k2 = rotl64(k2, 33);
            k2 *= c1;
            h2 ^= k2;
            [[fallthrough]];
        case 8: k1 ^= static_cast<uint64_t>(tail[7]) << 56; [[fallthrough]];
        case 7: k1 ^= static_cast<uint64_t>(tail[6]) << 48; [[fallthrough]];
        case 6: k1 ^= static_cast<uint64_t>(tail[5]) << 40; [[fallthrough]];
        case 5: k1 ^= static_cast<uint64_t>(tail[4]) << 32; [[fallthrough]];
        case 4: k1 ^= static_cast<uint64_t>(tail[3]) << 24; [[fallthrough]];
        case 3: k1 ^= static_cast<uint64_t>(tail[2]) << 16; [[fallthrough]];
        case 2: k1 ^= static_cast<uint64_t>(tail[1]) << 8; [[fallthrough]];
        case 1:
            k1 ^= static_cast<uint64_t>(tail[0]);
            k1 *= c1;
            k1 = rotl64(k1, 31);
            k1 *= c2;
            h1 ^= k1;
            break;
        default:
            break;
    }

    h1 ^= static_cast<uint64_t>(length);
    h2 ^= static_cast<uint64_t>(length);
    h1 += h2;
    h2 += h1;
    h1 = fmix64(h1);
    h2 = fmix64(h2);
    h1 += h2;
    h2 += h1;

    return Digest128{h1, h2};
}

Digest128 murmur3_128(std::span<const uint8_t> data, uint64_t seed) {
    return murmur3_128(data.data(), data.size(), seed);
}

std::string Digest128::hex() const {
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                  static_cast<unsigned long long>(hi), static_cast<unsigned long long>(lo));
    return std::string(buf);
}

std::string to_hex(uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

uint64_t parse_hex_u64(const std::string& text) {
    FOUNDRY_CHECK(!text.empty() && text.size() <= 16, Errc::invalid_argument,
                  "bad hex literal '" + text + "'");
    uint64_t value = 0;
    for (char c : text) {
        value <<= 4;
        if (c >= '0' && c <= '9') {
            value |= static_cast<uint64_t>(c - '0');
        } else if (c >= 'a' && c <= 'f') {
            value |= static_cast<uint64_t>(c - 'a' + 10);
        } else if (c >= 'A' && c <= 'F') {
            value |= static_cast<uint64_t>(c - 'A' + 10);
        } else {
            throw Error(Errc::invalid_argument, "bad hex digit in '" + text + "'");
        }
    }
    return value;
}

}  // namespace foundry
