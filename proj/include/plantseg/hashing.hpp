#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <openssl/evp.h>
#include <opencv2/core.hpp>

#include "plantseg/error.hpp"

namespace plantseg {

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw BackendError("sha256: OpenSSL digest initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::uint8_t> bytes) {
    EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
    return *this;
  }
  Sha256& update(std::string_view s) {
    EVP_DigestUpdate(ctx_, s.data(), s.size());
    return *this;
  }
  Sha256& update(const cv::Mat& m) {
    const std::int32_t header[3] = {m.rows, m.cols, m.type()};
    EVP_DigestUpdate(ctx_, header, sizeof(header));
    for (int r = 0; r < m.rows; ++r) {
      EVP_DigestUpdate(ctx_, m.ptr(r), m.cols * m.elemSize());
    }
    return *this;
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 15]);
    }
    return out;
  }

private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Sha256().update(s).hex(); }
inline std::string sha256_hex(const cv::Mat& m) { return Sha256().update(m).hex(); }

/// First 64 bits of a digest, handy as an RNG seed.
inline std::uint64_t digest_seed(const std::string& hex_digest) {
  return std::stoull(hex_digest.substr(0, 16), nullptr, 16);
}

}  // namespace plantseg
