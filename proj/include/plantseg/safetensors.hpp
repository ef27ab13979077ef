#pragma once

// Reader for the safetensors format: u64 LE header size, JSON header mapping
// tensor names to {dtype, shape, data_offsets}, then one flat byte buffer.
// Tensors are converted to float on access.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plantseg/error.hpp"

namespace plantseg {

struct TensorInfo {
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::size_t begin = 0, end = 0;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

namespace detail {

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t man = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (man == 0) {
      bits = sign;
    } else {  // subnormal
      exp = 127 - 15 + 1;
      while ((man & 0x400u) == 0) {
        man <<= 1;
        --exp;
      }
      bits = sign | (exp << 23) | ((man & 0x3ffu) << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (man << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (man << 13);
  }
  return std::bit_cast<float>(bits);
}

inline float bf16_to_float(std::uint16_t h) { return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16); }

}  // namespace detail

class SafeTensors {
public:
  explicit SafeTensors(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BackendError("cannot open weights file '" + path.string() + "'");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ull << 30)) throw BackendError("'" + path.string() + "' is not a safetensors file");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw BackendError("truncated safetensors header in '" + path.string() + "'");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("bad safetensors header in '" + path.string() + "': " + e.what());
    }
    in.seekg(0, std::ios::end);
    const auto total = static_cast<std::uint64_t>(in.tellg());
    const std::uint64_t base = 8 + len;
    data_.resize(total - base);
    in.seekg(static_cast<std::streamoff>(base));
    in.read(data_.data(), static_cast<std::streamsize>(data_.size()));
    for (const auto& [name, v] : header.items()) {
      if (name == "__metadata__") continue;
      TensorInfo t;
      t.dtype = v.at("dtype").get<std::string>();
      t.shape = v.at("shape").get<std::vector<std::int64_t>>();
      t.begin = v.at("data_offsets")[0].get<std::size_t>();
      t.end = v.at("data_offsets")[1].get<std::size_t>();
      if (t.end > data_.size() || t.begin > t.end)
        throw BackendError("tensor '" + name + "' runs past the end of '" + path.string() + "'");
      tensors_[name] = t;
    }
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const std::map<std::string, TensorInfo>& tensors() const { return tensors_; }

  const TensorInfo& info(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw BackendError("'" + path_.string() + "' has no tensor '" + name + "'");
    return it->second;
  }

  /// Flat row-major float copy of a tensor.
  std::vector<float> floats(const std::string& name) const {
    const auto& t = info(name);
    const auto n = static_cast<std::size_t>(t.numel());
    std::vector<float> out(n);
    const char* src = data_.data() + t.begin;
    const std::size_t bytes = t.end - t.begin;
    auto need = [&](std::size_t width) {
      if (bytes != n * width) throw BackendError("tensor '" + name + "' has an inconsistent byte size");
    };
    if (t.dtype == "F32") {
      need(4);
      std::memcpy(out.data(), src, bytes);
    } else if (t.dtype == "F16" || t.dtype == "BF16") {
      need(2);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        out[i] = t.dtype == "F16" ? detail::half_to_float(h) : detail::bf16_to_float(h);
      }
    } else {
      throw BackendError("tensor '" + name + "' has unsupported dtype " + t.dtype);
    }
    return out;
  }

private:
  std::filesystem::path path_;
  std::vector<char> data_;
  std::map<std::string, TensorInfo> tensors_;
};

}  // namespace plantseg
