#pragma once

// Loaders for the four evaluation corpora. Each maps its on-disk layout to a
// sorted stream of ImageRecord; ground truth is reduced to a binary plant mask.
//
//   phenobench   <root>/<split>/images/<id>.png
//                <root>/<split>/semantics/<id>.png      class ids, nonzero = plant
//   cvppp2017    <root>/<split>/A*/plantNNN_rgb.png
//                <root>/<split>/A*/plantNNN_label.png   leaf instances (or _fg.png)
//   appletree    <root>/<split>/images/<id>.(png|jpg)
//   plantgrowth  <root>/<split>/masks/<id>.png          any nonzero = plant
//
// <split> is train, val or test. With split "all" every present split is read
// and ids are prefixed with the split name; a root holding images/ (or A*/)
// directly is read as a single unnamed split.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "plantseg/error.hpp"
#include "plantseg/image_io.hpp"
#include "plantseg/log.hpp"
#include "plantseg/raster.hpp"
#include "plantseg/synthetic.hpp"

namespace plantseg {

namespace fs = std::filesystem;

struct DatasetInfo {
  std::string id;
  std::string name;
  std::string kind;  // sparse/dense, indoor/outdoor
  std::size_t documented_images;
  std::string layout;
};

inline const std::vector<DatasetInfo>& known_datasets() {
  static const std::vector<DatasetInfo> all{
      {"phenobench", "Phenobench", "sparse outdoor", 772,
       "<root>/<split>/images/<id>.png with <root>/<split>/semantics/<id>.png"},
      {"appletree", "AppleTreeDataset", "dense outdoor", 150,
       "<root>/<split>/images/<id>.(png|jpg) with <root>/<split>/masks/<id>.png"},
      {"plantgrowth", "Plant Growth", "sparse indoor", 2008,
       "<root>/<split>/images/<id>.(png|jpg) with <root>/<split>/masks/<id>.png"},
      {"cvppp2017", "CVPPP2017", "sparse indoor", 624,
       "<root>/<split>/A*/plantNNN_rgb.png with plantNNN_label.png or plantNNN_fg.png"},
  };
  return all;
}

inline const DatasetInfo& dataset_info(const std::string& id) {
  for (const auto& d : known_datasets())
    if (d.id == id) return d;
  throw UsageError("unknown dataset '" + id + "' (expected phenobench, appletree, plantgrowth or cvppp2017)");
}

struct ImageRecord {
  std::string id;
  std::string dataset_id;
  std::string split;
  fs::path image_path;
  std::optional<fs::path> mask_path;
};

/// Nonzero label -> plant. Every class of the supported corpora that is not
/// background is a plant (crop, weed and their partial variants, leaves,
/// trees), so instance and class maps reduce the same way.
inline cv::Mat merge_instances(const cv::Mat& labels) {
  if (labels.empty()) throw DataError("merge_instances: empty label image");
  const int depth = labels.depth();
  if (depth == CV_8S || depth == CV_16S || depth == CV_32S || depth == CV_32F || depth == CV_64F) {
    double lo = 0, hi = 0;
    cv::minMaxLoc(labels.reshape(1), &lo, &hi);
    if (lo < 0) throw DataError("merge_instances: negative label " + std::to_string(lo));
  }
  return nonzero_to_mask(labels);
}

namespace detail {

inline bool is_image_file(const fs::path& p) {
  static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return fs::is_regular_file(p) && exts.contains(ext);
}

inline std::map<std::string, fs::path> files_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!is_image_file(e.path())) continue;
    const auto stem = e.path().stem().string();
    if (out.contains(stem)) throw DataError(dir.string() + ": two files share the id '" + stem + "'");
    out[stem] = e.path();
  }
  return out;
}

[[noreturn]] inline void orphan_error(const std::string& dataset, const fs::path& dir,
                                      const std::vector<std::string>& no_mask,
                                      const std::vector<std::string>& no_image) {
  std::string msg = dataset + ": images and masks do not pair up in " + dir.string();
  auto list = [&](const char* label, const std::vector<std::string>& ids) {
    if (ids.empty()) return;
    msg += std::string("\n  ") + label + " (" + std::to_string(ids.size()) + "):";
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) msg += " " + ids[i];
    if (ids.size() > 20) msg += " ...";
  };
  list("images without mask", no_mask);
  list("masks without image", no_image);
  throw DataError(msg);
}

/// Pairs <dir>/<image_sub>/* with <dir>/<mask_sub>/* by file stem. A missing
/// mask directory means the split has no ground truth.
inline std::vector<ImageRecord> paired_dirs(const std::string& dataset, const fs::path& dir,
                                            const std::string& split, const std::string& image_sub,
                                            const std::string& mask_sub) {
  const auto images = files_by_stem(dir / image_sub);
  const bool has_masks = fs::is_directory(dir / mask_sub);
  const auto masks = files_by_stem(dir / mask_sub);
  std::vector<std::string> no_mask, no_image;
  std::vector<ImageRecord> out;
  for (const auto& [stem, path] : images) {
    ImageRecord r{stem, dataset, split, path, std::nullopt};
    if (has_masks) {
      auto it = masks.find(stem);
      if (it == masks.end()) {
        no_mask.push_back(stem);
        continue;
      }
      r.mask_path = it->second;
    }
    out.push_back(std::move(r));
  }
  for (const auto& [stem, path] : masks)
    if (!images.contains(stem)) no_image.push_back(stem);
  if (!no_mask.empty() || !no_image.empty()) orphan_error(dataset, dir, no_mask, no_image);
  return out;
}

inline std::vector<ImageRecord> cvppp_dir(const fs::path& dir, const std::string& split) {
  std::vector<std::string> no_mask, no_image;
  std::vector<ImageRecord> out;
  std::vector<fs::path> groups;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().starts_with("A")) groups.push_back(e.path());
  std::sort(groups.begin(), groups.end());
  for (const auto& group : groups) {
    const auto gname = group.filename().string();
    std::map<std::string, fs::path> rgb, label, fg;
    for (const auto& e : fs::directory_iterator(group)) {
      const auto name = e.path().filename().string();
      auto take = [&](const std::string& suffix, std::map<std::string, fs::path>& into) {
        if (name.size() > suffix.size() && name.ends_with(suffix)) {
          into[name.substr(0, name.size() - suffix.size())] = e.path();
          return true;
        }
        return false;
      };
      take("_rgb.png", rgb) || take("_label.png", label) || take("_fg.png", fg);
    }
    for (const auto& [stem, path] : rgb) {
      std::optional<fs::path> mask;
      if (auto it = label.find(stem); it != label.end()) mask = it->second;
      else if (auto jt = fg.find(stem); jt != fg.end()) mask = jt->second;
      if (!mask && (!label.empty() || !fg.empty())) {
        no_mask.push_back(gname + "/" + stem);
        continue;
      }
      out.push_back({gname + "/" + stem, "cvppp2017", split, path, mask});
    }
    for (const auto* masks : {&label, &fg})
      for (const auto& [stem, path] : *masks)
        if (!rgb.contains(stem)) no_image.push_back(gname + "/" + stem);
  }
  if (!no_mask.empty() || !no_image.empty()) orphan_error("cvppp2017", dir, no_mask, no_image);
  return out;
}

inline std::vector<ImageRecord> load_split_dir(const std::string& dataset, const fs::path& dir,
                                               const std::string& split) {
  if (dataset == "phenobench") return paired_dirs(dataset, dir, split, "images", "semantics");
  if (dataset == "cvppp2017") return cvppp_dir(dir, split);
  return paired_dirs(dataset, dir, split, "images", "masks");
}

inline bool looks_like_split_dir(const std::string& dataset, const fs::path& dir) {
  if (dataset != "cvppp2017") return fs::is_directory(dir / "images");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().starts_with("A")) return true;
  return false;
}

}  // namespace detail

inline const std::vector<std::string>& known_splits() {
  static const std::vector<std::string> splits{"train", "val", "test"};
  return splits;
}

/// Records sorted by id. See the layout table at the top of this file.
inline std::vector<ImageRecord> load_dataset(const std::string& dataset_id, const fs::path& root,
                                             const std::string& split = "all") {
  const auto& info = dataset_info(dataset_id);
  if (!fs::is_directory(root)) {
    throw DataError(dataset_id + ": dataset root '" + root.string() + "' does not exist; expected " +
                    info.layout + " (<split> = train, val or test)");
  }
  if (split != "all" && std::find(known_splits().begin(), known_splits().end(), split) == known_splits().end()) {
    throw UsageError("unknown split '" + split + "' (expected train, val, test or all)");
  }
  std::vector<ImageRecord> records;
  if (split == "all") {
    bool any = false;
    for (const auto& s : known_splits()) {
      if (!fs::is_directory(root / s)) continue;
      any = true;
      for (auto& r : detail::load_split_dir(dataset_id, root / s, s)) {
        r.id = s + "/" + r.id;
        records.push_back(std::move(r));
      }
    }
    if (!any && detail::looks_like_split_dir(dataset_id, root)) {
      records = detail::load_split_dir(dataset_id, root, "all");
    }
  } else {
    if (!fs::is_directory(root / split)) {
      throw DataError(dataset_id + ": split directory '" + (root / split).string() +
                      "' does not exist; expected " + info.layout);
    }
    records = detail::load_split_dir(dataset_id, root / split, split);
  }
  if (records.empty()) {
    logger()->warn("{}: no images found under {} (split {}); expected layout {}", dataset_id,
                   root.string(), split, info.layout);
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return records;
}

struct Sample {
  std::string id;
  cv::Mat rgb;
  std::optional<cv::Mat> gt;  // binary, same size as rgb
};

inline Sample load_sample(const ImageRecord& record) {
  Sample s{record.id, read_rgb(record.image_path), std::nullopt};
  if (record.mask_path) {
    cv::Mat gt = merge_instances(read_label_image(*record.mask_path));
    if (gt.size() != s.rgb.size()) {
      throw SizingError(record.dataset_id + "/" + record.id + ": mask " + std::to_string(gt.rows) + "x" +
                        std::to_string(gt.cols) + " does not match image " + std::to_string(s.rgb.rows) +
                        "x" + std::to_string(s.rgb.cols));
    }
    s.gt = std::move(gt);
  }
  return s;
}

struct VerifyReport {
  std::string dataset_id;
  fs::path root;
  std::map<std::string, std::size_t> per_split;
  std::size_t total = 0;
  std::size_t with_masks = 0;
  std::size_t documented = 0;
  std::vector<std::string> problems;  // unreadable files, size mismatches

  bool ok() const { return problems.empty(); }
  bool matches_documented() const { return total == documented; }
};

/// Checks layout, pairing and mask/image sizes. A count that differs from the
/// documented one is reported but not treated as a failure.
inline VerifyReport verify_dataset(const std::string& dataset_id, const fs::path& root,
                                   bool check_files = true) {
  VerifyReport report{dataset_id, root, {}, 0, 0, dataset_info(dataset_id).documented_images, {}};
  const auto records = load_dataset(dataset_id, root, "all");
  for (const auto& r : records) {
    ++report.per_split[r.split];
    ++report.total;
    if (r.mask_path) ++report.with_masks;
    if (!check_files) continue;
    try {
      load_sample(r);
    } catch (const Error& e) {
      report.problems.push_back(e.what());
    } catch (const cv::Exception& e) {
      report.problems.push_back(r.id + ": " + e.what());
    }
  }
  return report;
}

/// Writes a small synthetic look-alike of a dataset in its on-disk layout:
/// green plants on soil, ground truth stored in the dataset's label format.
inline void make_fixture(const std::string& dataset_id, const fs::path& root, int train_count, int val_count,
                         int test_count, std::uint64_t seed, int height = 84, int width = 112) {
  dataset_info(dataset_id);
  const std::pair<std::string, int> splits[] = {{"train", train_count}, {"val", val_count}, {"test", test_count}};
  for (const auto& [split, count] : splits) {
    for (int i = 0; i < count; ++i) {
      const std::uint64_t offset = split == "train" ? 0 : split == "test" ? 500 : 250;
      const std::uint64_t s = seed * 1000003ULL + offset + static_cast<std::uint64_t>(i);
      std::mt19937_64 rng(s);
      // a distinct scene style per dataset so cross-dataset tests see a shift
      int blobs = 3;
      if (dataset_id == "appletree") blobs = 12;
      if (dataset_id == "plantgrowth") blobs = 5;
      auto scene = dataset_id == "cvppp2017" ? synthetic::rosette_scene(height, width, s)
                                             : synthetic::blob_scene(height, width, s, blobs);
      char stem[32];
      std::snprintf(stem, sizeof stem, "%s_%03d", split.c_str(), i);
      if (dataset_id == "phenobench") {
        cv::Mat classes = scene.label.clone();
        std::uniform_int_distribution<int> cls(1, 4);
        classes.setTo(cls(rng), scene.label);
        write_rgb(root / split / "images" / (std::string(stem) + ".png"), scene.rgb);
        const auto sem = root / split / "semantics" / (std::string(stem) + ".png");
        fs::create_directories(sem.parent_path());
        if (!cv::imwrite(sem.string(), classes)) throw DataError("cannot write " + sem.string());
      } else if (dataset_id == "cvppp2017") {
        std::snprintf(stem, sizeof stem, "plant%03d", i);
        const auto group = root / split / "A1";
        fs::create_directories(group);
        cv::Mat leaves;
        cv::connectedComponents(scene.label, leaves, 8, CV_16U);
        cv::Mat bgr(scene.label.size(), CV_8UC3, cv::Scalar(0, 0, 0));
        for (int y = 0; y < leaves.rows; ++y)
          for (int x = 0; x < leaves.cols; ++x)
            if (const int id = leaves.at<std::uint16_t>(y, x))
              bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(40 * id % 256, 255 - 30 * id % 256, 90);
        write_rgb(group / (std::string(stem) + "_rgb.png"), scene.rgb);
        const auto label = group / (std::string(stem) + "_label.png");
        if (!cv::imwrite(label.string(), bgr)) throw DataError("cannot write " + label.string());
      } else {
        write_rgb(root / split / "images" / (std::string(stem) + ".png"), scene.rgb);
        write_mask_png(root / split / "masks" / (std::string(stem) + ".png"), scene.label);
      }
    }
  }
}

}  // namespace plantseg
