#pragma once

// Binary container shared by cached features, PCA models and checkpoints:
//
//   8 bytes   magic (format tag, e.g. "PSFEAT1\n")
//   8 bytes   little-endian uint64 header length N
//   N bytes   UTF-8 JSON header (shape, dtype, provenance)
//   ...       raw little-endian payload described by the header

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "plantseg/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "container payloads are written as native little-endian");

namespace plantseg {

struct Container {
  nlohmann::json header;
  std::vector<char> payload;
};

/// Writes via a temporary sibling file and rename so readers never see a
/// partial file.
inline void write_container(const std::filesystem::path& path, std::string_view magic,
                            const nlohmann::json& header, const void* payload,
                            std::size_t payload_bytes) {
  if (magic.size() != 8) throw UsageError("container magic must be 8 bytes");
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  thread_local std::mt19937_64 rng{std::random_device{}()};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out.write(magic.data(), 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Reads and validates the framing; payload interpretation is the caller's.
inline Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char tag[8];
  if (!in.read(tag, 8) || std::string_view(tag, 8) != magic) {
    throw DataError(path.string() + ": not a " + std::string(magic.substr(0, 7)) + " file");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    throw DataError(path.string() + ": truncated header");
  }
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) throw DataError(path.string() + ": header length exceeds file size");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw DataError(path.string() + ": truncated header");
  }
  Container c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  const std::size_t rest = file_size - 16 - len;
  c.payload.resize(rest);
  if (rest > 0 && !in.read(c.payload.data(), static_cast<std::streamsize>(rest))) {
    throw DataError(path.string() + ": truncated payload");
  }
  return c;
}

}  // namespace plantseg
