#include "storyreel/assets.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <array>
#include <cstdio>

namespace storyreel {

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest.data());
    std::string hex;
    hex.reserve(digest.size() * 2);
    static constexpr char kDigits[] = "0123456789abcdef";
    for (unsigned char b : digest) {
        hex.push_back(kDigits[b >> 4u]);
        hex.push_back(kDigits[b & 0x0fu]);
    }
    return hex;
}

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw Error("base64 payload length is not a multiple of 4");
    }
    std::string out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) {
        throw Error("malformed base64 payload");
    }
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    std::size_t len = static_cast<std::size_t>(n);
    if (!text.empty() && text.back() == '=') {
        --len;
        if (text.size() >= 2 && text[text.size() - 2] == '=') {
            --len;
        }
    }
    out.resize(len);
    return out;
}

AssetRef AssetStore::put(std::string_view bytes, std::string_view ext) {
    AssetRef ref = "assets/" + sha256_hex(bytes) + "." + std::string(ext);
    const auto path = root_ / ref;
    if (!std::filesystem::exists(path)) {
        write_text_file(path, bytes);
    }
    return ref;
}

bool AssetStore::exists(const AssetRef& ref) const {
    if (ref.rfind("assets/", 0) != 0) {
        return false;
    }
    return std::filesystem::is_regular_file(root_ / ref);
}

std::filesystem::path AssetStore::path_of(const AssetRef& ref) const { return root_ / ref; }

std::string AssetStore::read(const AssetRef& ref) const { return read_text_file(root_ / ref); }

}  // namespace storyreel
