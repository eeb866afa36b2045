#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "foundry/errors.hpp"

namespace foundry {

// All multi-byte on-disk integers are little-endian.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { append(&v, 2); }
    void u32(uint32_t v) { append(&v, 4); }
    void u64(uint64_t v) { append(&v, 8); }
    void i32(int32_t v) { append(&v, 4); }

    void bytes(const void* data, size_t length) {
        const auto* p = static_cast<const uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + length);
    }
    void bytes(std::span<const uint8_t> data) { bytes(data.data(), data.size()); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    size_t size() const { return buf_.size(); }
    // Patches a u64 written earlier (offset tables).
    void patch_u64(size_t at, uint64_t v) { std::memcpy(buf_.data() + at, &v, 8); }

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

private:
    void append(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const uint8_t> data, Errc overrun_error = Errc::binary_format)
        : data_(data), overrun_error_(overrun_error) {}

    uint8_t u8() { return read<uint8_t>(); }
    uint16_t u16() { return read<uint16_t>(); }
    uint32_t u32() { return read<uint32_t>(); }
    uint64_t u64() { return read<uint64_t>(); }
    int32_t i32() { return read<int32_t>(); }

    std::vector<uint8_t> bytes(size_t n) {
        require(n);
        std::vector<uint8_t> out(data_.begin() + pos_, data_.begin() + pos_ + n);
        pos_ += n;
        return out;
    }

    std::string str() {
        uint32_t n = u32();
        require(n);
        std::string out(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return out;
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

    void expect_magic(const char (&magic)[5]) {
        require(4);
        if (std::memcmp(data_.data() + pos_, magic, 4) != 0) {
            throw Error(overrun_error_, std::string("bad magic, expected '") + magic + "'");
        }
        pos_ += 4;
    }

private:
    template <typename T>
    T read() {
        require(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void require(size_t n) {
        if (pos_ + n > data_.size()) {
            throw Error(overrun_error_, "truncated input");
        }
    }

    std::span<const uint8_t> data_;
    size_t pos_ = 0;
    Errc overrun_error_;
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> data);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace foundry
