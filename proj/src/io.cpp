#include "foundry/io.hpp"

#include <fstream>

namespace foundry {

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    FOUNDRY_CHECK(in.good(), Errc::archive_corruption, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> data(size);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
    FOUNDRY_CHECK(in.good() || size == 0, Errc::archive_corruption, "short read on " + path.string());
    return data;
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    FOUNDRY_CHECK(out.good(), Errc::invalid_argument, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    FOUNDRY_CHECK(out.good(), Errc::invalid_argument, "short write on " + path.string());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span<const uint8_t>(
                         reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

}  // namespace foundry
