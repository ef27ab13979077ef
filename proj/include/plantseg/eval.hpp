#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/csv.hpp"
#include "plantseg/error.hpp"
#include "plantseg/log.hpp"
#include "plantseg/raster.hpp"

namespace plantseg {

struct IouResult {
  double value = 0.0;
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
  bool both_empty = false;  // value 1.0 by convention
};

/// Jaccard index |A ∩ B| / |A ∪ B|. Two empty masks agree perfectly (1.0).
inline IouResult iou_detail(const cv::Mat& pred, const cv::Mat& gt) {
  require_mask(pred, "iou(pred)");
  require_mask(gt, "iou(gt)");
  if (pred.size() != gt.size()) {
    throw SizingError("iou: prediction " + std::to_string(pred.rows) + "x" +
                      std::to_string(pred.cols) + " vs ground truth " + std::to_string(gt.rows) +
                      "x" + std::to_string(gt.cols));
  }
  IouResult r;
  for (int y = 0; y < pred.rows; ++y) {
    const auto* a = pred.ptr<std::uint8_t>(y);
    const auto* b = gt.ptr<std::uint8_t>(y);
    for (int x = 0; x < pred.cols; ++x) {
      const bool pa = a[x] != 0, pb = b[x] != 0;
      r.intersection += pa && pb;
      r.union_ += pa || pb;
    }
  }
  if (r.union_ == 0) {
    r.both_empty = true;
    r.value = 1.0;
  } else {
    r.value = static_cast<double>(r.intersection) / static_cast<double>(r.union_);
  }
  return r;
}

inline double iou(const cv::Mat& pred, const cv::Mat& gt) { return iou_detail(pred, gt).value; }

struct EvalRecord {
  std::string image_id;
  std::string dataset_id;
  std::string method_id;
  double iou = 0.0;
  bool mask_input_used = false;
  std::uint64_t seed = 0;
  bool both_empty = false;
  nlohmann::json run_metadata = nlohmann::json::object();  // not part of the CSV
};

inline const std::vector<std::string>& results_csv_header() {
  static const std::vector<std::string> header{"image_id", "dataset", "method", "iou",
                                               "mask_input_used", "seed", "both_empty"};
  return header;
}

namespace detail {
inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}
}  // namespace detail

inline void write_results_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, results_csv_header());
  for (const auto& r : records) {
    csv::write_row(out, {r.image_id, r.dataset_id, r.method_id, detail::format_double(r.iou),
                         r.mask_input_used ? "1" : "0", std::to_string(r.seed),
                         r.both_empty ? "1" : "0"});
  }
}

inline std::vector<EvalRecord> read_results_csv(const std::filesystem::path& path) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw DataError(path.string() + ": empty results file");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"image_id", "dataset", "method", "iou"}) {
    if (!col.contains(required)) {
      throw DataError(path.string() + ": missing column '" + required + "'");
    }
  }
  auto get = [&](const csv::Row& row, const std::string& name, const std::string& fallback) {
    auto it = col.find(name);
    if (it == col.end() || it->second >= row.size()) return fallback;
    return row[it->second];
  };
  std::vector<EvalRecord> records;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    EvalRecord r;
    r.image_id = get(row, "image_id", "");
    r.dataset_id = get(row, "dataset", "");
    r.method_id = get(row, "method", "");
    try {
      r.iou = std::stod(get(row, "iou", "nan"));
      r.mask_input_used = get(row, "mask_input_used", "0") == "1";
      r.seed = std::stoull(get(row, "seed", "0"));
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed row " + std::to_string(i + 1));
    }
    r.both_empty = get(row, "both_empty", "0") == "1";
    records.push_back(std::move(r));
  }
  return records;
}

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
};

/// Mean and population standard deviation. Values are sorted first so the
/// result does not depend on input order.
inline Summary summarize(std::vector<double> values) {
  if (values.empty()) throw DataError("summarize: no values");
  std::sort(values.begin(), values.end());
  auto compensated_sum = [](const std::vector<double>& v, auto&& term) {
    double sum = 0.0, carry = 0.0;
    for (double x : v) {
      const double t = term(x);
      const double s = sum + t;
      carry += std::abs(sum) >= std::abs(t) ? (sum - s) + t : (t - s) + sum;
      sum = s;
    }
    return sum + carry;
  };
  Summary s;
  s.count = values.size();
  const double n = static_cast<double>(values.size());
  s.mean = compensated_sum(values, [](double x) { return x; }) / n;
  const double m = s.mean;
  s.std = std::sqrt(compensated_sum(values, [m](double x) { return (x - m) * (x - m); }) / n);
  return s;
}

enum class GroupField { dataset, method, mask_input_used };

struct GroupStats {
  std::string dataset;
  std::string method;
  std::optional<bool> mask_input_used;
  Summary summary;
};

/// Groups records by the requested fields and summarises their IoUs. Records
/// with a non-finite IoU (failed images) are excluded; a group left empty is
/// dropped with a warning.
inline std::vector<GroupStats> aggregate(std::span<const EvalRecord> records,
                                         std::span<const GroupField> group_by) {
  auto has = [&](GroupField f) { return std::find(group_by.begin(), group_by.end(), f) != group_by.end(); };
  using Key = std::tuple<std::string, std::string, int>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : records) {
    Key key{has(GroupField::dataset) ? r.dataset_id : "", has(GroupField::method) ? r.method_id : "",
            has(GroupField::mask_input_used) ? int(r.mask_input_used) : -1};
    auto& bucket = groups[key];
    if (std::isfinite(r.iou)) bucket.push_back(r.iou);
  }
  std::vector<GroupStats> out;
  for (auto& [key, values] : groups) {
    const auto& [dataset, method, mask_input] = key;
    if (values.empty()) {
      logger()->warn("aggregate: group dataset='{}' method='{}' has no valid records; omitted",
                     dataset, method);
      continue;
    }
    GroupStats g{dataset, method, std::nullopt, summarize(values)};
    if (mask_input >= 0) g.mask_input_used = mask_input == 1;
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<GroupStats> aggregate(std::span<const EvalRecord> records) {
  const GroupField all[] = {GroupField::dataset, GroupField::method, GroupField::mask_input_used};
  return aggregate(records, all);
}

inline std::string format_mean_std(const Summary& s, int digits = 3) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << s.mean << " ± " << s.std;
  return out.str();
}

inline void write_summary_csv(const std::filesystem::path& path, std::span<const GroupStats> stats) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"dataset", "method", "mask_input_used", "count", "mean_iou", "std_iou"});
  for (const auto& g : stats) {
    csv::write_row(out, {g.dataset, g.method,
                         g.mask_input_used ? (*g.mask_input_used ? "1" : "0") : "",
                         std::to_string(g.summary.count), detail::format_double(g.summary.mean),
                         detail::format_double(g.summary.std)});
  }
}

/// Known dataset column order; anything else follows alphabetically.
inline int dataset_rank(const std::string& id) {
  static const std::vector<std::string> order{"phenobench", "appletree", "plantgrowth", "cvppp2017"};
  auto it = std::find(order.begin(), order.end(), id);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

inline std::vector<std::string> ordered_datasets(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end(), [](const auto& a, const auto& b) {
    return std::pair(dataset_rank(a), a) < std::pair(dataset_rank(b), b);
  });
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

/// Markdown comparison table: one row per method (and mask-input arm when
/// grouped by it), one column per dataset, cells "mean ± std".
inline std::string render_table(std::span<const GroupStats> stats) {
  std::vector<std::string> datasets, rows;
  std::map<std::pair<std::string, std::string>, std::string> cells;
  for (const auto& g : stats) {
    datasets.push_back(g.dataset);
    std::string row = g.method.empty() ? "(all)" : g.method;
    if (g.mask_input_used) row += *g.mask_input_used ? " [with mask input]" : " [without mask input]";
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    cells[{row, g.dataset}] = format_mean_std(g.summary);
  }
  datasets = ordered_datasets(datasets);
  std::sort(rows.begin(), rows.end());
  std::ostringstream out;
  out << "| Method |";
  for (const auto& d : datasets) out << ' ' << (d.empty() ? "(all)" : d) << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& row : rows) {
    out << "| " << row << " |";
    for (const auto& d : datasets) {
      auto it = cells.find({row, d});
      out << ' ' << (it == cells.end() ? "–" : it->second) << " |";
    }
    out << '\n';
  }
  return out.str();
}

/// An image with ground truth, as consumed by predictors during evaluation.
struct EvalSample {
  std::string id;
  cv::Mat rgb;
  cv::Mat gt;
};

/// Predicts a binary mask at the sample's native resolution.
using MaskPredictor = std::function<cv::Mat(const EvalSample&)>;

struct CrossEvalMatrix {
  std::vector<std::string> sources;  // training datasets (rows)
  std::vector<std::string> targets;  // evaluation datasets (columns)
  std::vector<std::vector<std::optional<Summary>>> cells;
  std::vector<EvalRecord> records;

  std::string render() const {
    std::ostringstream out;
    out << "| Train \\ Test |";
    for (const auto& t : targets) out << ' ' << t << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < targets.size(); ++i) out << "---|";
    out << '\n';
    for (std::size_t i = 0; i < sources.size(); ++i) {
      out << "| " << sources[i] << " |";
      for (std::size_t j = 0; j < targets.size(); ++j) {
        out << ' ' << (cells[i][j] ? format_mean_std(*cells[i][j]) : "absent") << " |";
      }
      out << '\n';
    }
    return out.str();
  }
};

/// Evaluates the model trained on each source dataset against every target
/// dataset. A source without a model yields absent cells.
inline CrossEvalMatrix cross_eval(const std::map<std::string, MaskPredictor>& models,
                                  std::span<const std::string> sources,
                                  const std::map<std::string, std::vector<EvalSample>>& targets,
                                  const std::string& method_prefix = "unet") {
  CrossEvalMatrix m;
  m.sources.assign(sources.begin(), sources.end());
  std::vector<std::string> target_ids;
  for (const auto& [id, samples] : targets) target_ids.push_back(id);
  m.targets = ordered_datasets(target_ids);
  for (const auto& source : m.sources) {
    std::vector<std::optional<Summary>> row;
    auto model = models.find(source);
    for (const auto& target : m.targets) {
      if (model == models.end() || !model->second) {
        row.push_back(std::nullopt);
        continue;
      }
      std::vector<double> ious;
      for (const auto& sample : targets.at(target)) {
        const auto result = iou_detail(model->second(sample), sample.gt);
        ious.push_back(result.value);
        m.records.push_back(EvalRecord{sample.id, target, method_prefix + "@" + source, result.value,
                                       false, 0, result.both_empty});
      }
      row.push_back(ious.empty() ? std::nullopt : std::optional<Summary>(summarize(ious)));
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

}  // namespace plantseg
