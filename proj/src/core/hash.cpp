#include "cxrcf/core/hash.hpp"

#include <array>
#include <fstream>
#include <iterator>
#include <memory>

#include <openssl/evp.h>

#include "cxrcf/core/errors.hpp"

namespace cxrcf {
namespace {

using Digest = std::array<unsigned char, 32>;

Digest sha256_raw(const void* data, std::size_t size) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(data, size, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw Error("SHA-256 computation failed");
    return out;
}

std::string to_hex(const Digest& d) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(d.size() * 2);
    for (unsigned char b : d) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

} // namespace

std::string sha256_hex(std::string_view bytes) { return to_hex(sha256_raw(bytes.data(), bytes.size())); }

std::string sha256_hex(std::span<const unsigned char> bytes) {
    return to_hex(sha256_raw(bytes.data(), bytes.size()));
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

std::uint64_t stable_hash64(std::initializer_list<std::string_view> parts) {
    std::string joined;
    bool first = true;
    for (auto p : parts) {
        if (!first) joined.push_back('\x1f');
        joined.append(p);
        first = false;
    }
    const Digest d = sha256_raw(joined.data(), joined.size());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
    return v;
}

} // namespace cxrcf
