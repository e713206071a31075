#include "taet/digest.hpp"

#include <openssl/sha.h>

#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

namespace taet {

Sha256 sha256(std::span<const std::uint8_t> bytes) {
    Sha256 out{};
    SHA256(bytes.data(), bytes.size(), out.data());
    return out;
}

std::string to_hex(const Sha256& digest) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (std::uint8_t b : digest) {
        s.push_back(kHex[b >> 4]);
        s.push_back(kHex[b & 0xf]);
    }
    return s;
}

std::string sha256_hex(std::string_view text) {
    return to_hex(sha256({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

std::string sha256_file_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return to_hex(sha256(bytes));
}

}  // namespace taet
