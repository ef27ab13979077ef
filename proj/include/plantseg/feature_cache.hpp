#pragma once

#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plantseg/container.hpp"
#include "plantseg/encoder.hpp"
#include "plantseg/hashing.hpp"
#include "plantseg/log.hpp"

namespace plantseg {

inline constexpr std::string_view kFeatureMagic = "PSFEAT1\n";

/// A preprocessed image ready for an encoder.
struct PreparedImage {
  std::string id;
  cv::Mat padded;  // RGB, padded frame
  GeometrySpec spec;
};

/// One file per (image content, encoder, geometry). The file carries a JSON
/// header (shape, encoder id, content hash, geometry) and raw f32 features.
class FeatureCache {
public:
  explicit FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path entry_path(const std::string& content_hash, const std::string& encoder_id,
                                   const GeometrySpec& spec) const {
    const std::string key =
        sha256_hex(content_hash + "|" + encoder_id + "|" + nlohmann::json(spec).dump());
    return dir_ / (key + ".feat");
  }

  /// Returns the cached grid, or nullopt on a miss. Unreadable entries are
  /// reported and treated as misses so the caller recomputes them.
  std::optional<TokenGrid> load(const std::string& content_hash, const std::string& encoder_id,
                                const GeometrySpec& spec) const {
    const auto path = entry_path(content_hash, encoder_id, spec);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
      Container c = read_container(path, kFeatureMagic);
      const auto& h = c.header;
      if (h.at("encoder_id").get<std::string>() != encoder_id ||
          h.at("content_hash").get<std::string>() != content_hash ||
          h.at("geometry").get<GeometrySpec>() != spec) {
        return std::nullopt;
      }
      const int rows = h.at("rows").get<int>();
      const int cols = h.at("cols").get<int>();
      const int dim = h.at("dim").get<int>();
      if (rows != spec.token_rows || cols != spec.token_cols || dim < 1 ||
          h.at("dtype").get<std::string>() != "f32") {
        throw DataError("shape/dtype disagrees with geometry");
      }
      const std::size_t n = std::size_t(rows) * cols * dim;
      if (c.payload.size() != n * sizeof(float)) throw DataError("payload size mismatch");
      TokenGrid grid;
      grid.features.resize(std::int64_t(rows) * cols, dim);
      std::memcpy(grid.features.data(), c.payload.data(), c.payload.size());
      grid.spec = spec;
      grid.encoder_id = encoder_id;
      grid.pad_mask = make_pad_mask(spec);
      validate_grid(grid);
      return grid;
    } catch (const std::exception& e) {
      logger()->warn("corrupt feature cache entry {} ({}); recomputing", path.string(), e.what());
      return std::nullopt;
    }
  }

  void store(const std::string& content_hash, const TokenGrid& grid) const {
    nlohmann::json h{{"format", "plantseg-features"},
                     {"version", 1},
                     {"encoder_id", grid.encoder_id},
                     {"content_hash", content_hash},
                     {"rows", grid.rows()},
                     {"cols", grid.cols()},
                     {"dim", grid.dim()},
                     {"dtype", "f32"},
                     {"order", "row-major tokens, little-endian"},
                     {"geometry", grid.spec}};
    write_container(entry_path(content_hash, grid.encoder_id, grid.spec), kFeatureMagic, h,
                    grid.features.data(), std::size_t(grid.features.size()) * sizeof(float));
  }

private:
  std::filesystem::path dir_;
};

/// Extracts every image, consulting `cache` first when given.
inline std::vector<TokenGrid> extract_batch(std::span<const PreparedImage> images, Encoder& encoder,
                                            const FeatureCache* cache) {
  std::vector<TokenGrid> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    if (cache) {
      const std::string hash = sha256_hex(img.padded);
      if (auto hit = cache->load(hash, encoder.id(), img.spec)) {
        out.push_back(std::move(*hit));
        continue;
      }
      out.push_back(extract(img.padded, img.spec, encoder));
      cache->store(hash, out.back());
    } else {
      out.push_back(extract(img.padded, img.spec, encoder));
    }
  }
  return out;
}

}  // namespace plantseg
