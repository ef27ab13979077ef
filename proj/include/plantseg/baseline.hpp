#pragma once

// Supervised U-Net baseline: seeded subset training with Adam and early
// stopping, evaluation, and the training-set-size scaling experiment.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/csv.hpp"
#include "plantseg/error.hpp"
#include "plantseg/eval.hpp"
#include "plantseg/geometry.hpp"
#include "plantseg/hashing.hpp"
#include "plantseg/log.hpp"
#include "plantseg/raster.hpp"
#include "plantseg/unet.hpp"

namespace plantseg {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int max_epochs = 100;
  int patience = 5;
  std::size_t subset_size = 0;  // 0: the whole training pool
  std::uint64_t seed = 0;
  nn::UNetConfig net{};
  int max_short_edge = kMaxShortEdge;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
       {"patience", c.patience},           {"subset_size", c.subset_size}, {"seed", c.seed},
       {"net", c.net},                     {"max_short_edge", c.max_short_edge},
       {"optimizer", "adam"},              {"loss", "bce-with-logits"},    {"early_stopping_loss", "validation"}};
}

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw UsageError("batch size must be at least 1");
  if (c.max_epochs < 1) throw UsageError("max epochs must be at least 1");
  if (c.patience < 1 || c.patience >= c.max_epochs) throw UsageError("patience must be in [1, max_epochs)");
  if (c.learning_rate <= 0) throw UsageError("learning rate must be positive");
}

/// Stops once `patience` consecutive epochs fail to improve on the best loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records an epoch's loss; returns true when it is a new best.
  bool update(int epoch, double loss) {
    if (loss < best_) {
      best_ = loss;
      best_epoch_ = epoch;
      bad_epochs_ = 0;
      return true;
    }
    ++bad_epochs_;
    return false;
  }

  bool should_stop() const { return bad_epochs_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int bad_epochs_ = 0;
};

/// An image prepared for the network: resized per the preprocessing rules,
/// then zero-padded to the network's size multiple.
struct TrainingSample {
  std::string id;
  cv::Mat rgb;     // CV_8UC3 at network size
  cv::Mat target;  // CV_8UC1 at network size
  cv::Mat weight;  // CV_8UC1, 1 on the resized content
  GeometrySpec spec;
  cv::Mat gt;  // original resolution, may be empty
};

inline TrainingSample make_training_sample(const std::string& id, const cv::Mat& rgb, const cv::Mat& gt,
                                           int max_short_edge, int multiple) {
  require_rgb(rgb, "training sample");
  const auto spec = plan_geometry(rgb.rows, rgb.cols, max_short_edge);
  const int h = detail::round_up_to(spec.resized_h, multiple);
  const int w = detail::round_up_to(spec.resized_w, multiple);
  TrainingSample s;
  s.id = id;
  s.spec = spec;
  s.rgb = cv::Mat(h, w, CV_8UC3, cv::Scalar(0, 0, 0));
  s.target = make_mask(h, w);
  s.weight = make_mask(h, w);
  const cv::Rect content(0, 0, spec.resized_w, spec.resized_h);
  apply_geometry(rgb, spec)(content).copyTo(s.rgb(content));
  s.weight(content).setTo(1);
  if (!gt.empty()) {
    require_mask(gt, "training sample");
    if (gt.size() != rgb.size()) throw SizingError(id + ": mask and image sizes differ");
    resample_nearest(gt, spec.resized_h, spec.resized_w).copyTo(s.target(content));
    s.gt = gt;
  }
  return s;
}

namespace detail {

inline nn::Tensor to_tensor(const cv::Mat& rgb, const cv::Mat& weight) {
  // ImageNet channel statistics; padding stays at zero after normalisation
  static const float mean[3] = {0.485f, 0.456f, 0.406f};
  static const float stdev[3] = {0.229f, 0.224f, 0.225f};
  nn::Tensor t(3, rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* p = rgb.ptr<std::uint8_t>(y);
    const auto* m = weight.ptr<std::uint8_t>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      if (!m[x]) continue;
      for (int c = 0; c < 3; ++c)
        t.data(c, static_cast<Eigen::Index>(y) * rgb.cols + x) = (p[3 * x + c] / 255.0f - mean[c]) / stdev[c];
    }
  }
  return t;
}

inline Eigen::VectorXf to_vector(const cv::Mat& mask) {
  Eigen::VectorXf v(static_cast<Eigen::Index>(mask.total()));
  for (int y = 0; y < mask.rows; ++y) {
    const auto* p = mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.cols; ++x) v[static_cast<Eigen::Index>(y) * mask.cols + x] = p[x] ? 1.0f : 0.0f;
  }
  return v;
}

/// Summed loss over a sample; also accumulates gradients when `backprop`.
inline double sample_loss(nn::UNet& net, const TrainingSample& s, bool backprop, double* pixels) {
  const auto logits = net.forward(to_tensor(s.rgb, s.weight));
  nn::Tensor grad;
  const auto weight = to_vector(s.weight);
  const double loss = nn::bce_with_logits(logits, to_vector(s.target), weight, grad);
  if (backprop) net.backward(grad);
  *pixels += weight.sum();
  return loss;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t(out[0]) << 32) | out[1];
}

}  // namespace detail

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double stop_loss = 0;  // validation loss, or training loss without a validation set
  bool improved = false;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::vector<std::size_t> subset;  // indices into the training pool
  int best_epoch = 0;
  bool stopped_early = false;
  std::string stop_loss_source = "validation";

  void write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    csv::write_row(out, {"epoch", "train_loss", "stop_loss", "improved"});
    for (const auto& e : epochs) {
      csv::write_row(out, {std::to_string(e.epoch), detail::format_double(e.train_loss),
                           detail::format_double(e.stop_loss), e.improved ? "1" : "0"});
    }
  }
};

struct TrainResult {
  std::unique_ptr<nn::UNet> model;  // weights from the best epoch
  TrainLog log;
};

/// Seeded uniform subset without replacement, in pool order.
inline std::vector<std::size_t> choose_subset(std::size_t pool, std::size_t size, std::uint64_t seed) {
  if (size > pool) {
    throw DataError("training subset of " + std::to_string(size) + " exceeds the " + std::to_string(pool) +
                    " available training images");
  }
  std::vector<std::size_t> all(pool), out;
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(detail::mix_seed(seed, 0x5b));
  std::ranges::sample(all, std::back_inserter(out), static_cast<std::ptrdiff_t>(size), rng);
  return out;
}

inline TrainResult train(std::span<const TrainingSample> pool, std::span<const TrainingSample> validation,
                         const TrainConfig& config) {
  validate(config);
  if (pool.empty()) throw DataError("train: no training images");
  const std::size_t size = config.subset_size == 0 ? pool.size() : config.subset_size;
  TrainResult result;
  result.log.subset = choose_subset(pool.size(), size, config.seed);
  result.model = std::make_unique<nn::UNet>(config.net);
  auto& net = *result.model;
  net.reset(detail::mix_seed(config.seed, 0x1e));
  nn::Adam adam({static_cast<float>(config.learning_rate)});
  std::mt19937_64 shuffle_rng(detail::mix_seed(config.seed, 0x5f));
  EarlyStopping stopper(config.patience);
  std::vector<float> best_weights = net.flatten();
  if (validation.empty()) result.log.stop_loss_source = "training";

  std::vector<std::size_t> order = result.log.subset;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0, epoch_pixels = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      net.zero_grad();
      double batch_pixels = 0;
      for (std::size_t i = start; i < end; ++i) {
        epoch_loss += detail::sample_loss(net, pool[order[i]], true, &batch_pixels);
      }
      epoch_pixels += batch_pixels;
      if (batch_pixels <= 0) continue;
      const auto params = net.params();
      const float scale = static_cast<float>(1.0 / batch_pixels);
      for (auto* p : params) p->grad *= scale;
      adam.step(params);
    }
    EpochLog log{epoch, epoch_pixels > 0 ? epoch_loss / epoch_pixels : 0.0, 0.0, false};
    if (validation.empty()) {
      log.stop_loss = log.train_loss;
    } else {
      double loss = 0, pixels = 0;
      for (const auto& s : validation) loss += detail::sample_loss(net, s, false, &pixels);
      log.stop_loss = pixels > 0 ? loss / pixels : 0.0;
    }
    log.improved = stopper.update(epoch, log.stop_loss);
    if (log.improved) best_weights = net.flatten();
    result.log.epochs.push_back(log);
    if (stopper.should_stop()) {
      result.log.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  result.log.best_epoch = stopper.best_epoch();
  net.assign(best_weights);
  return result;
}

/// Mask at the sample's original resolution (probability >= 0.5).
inline cv::Mat predict(nn::UNet& net, const TrainingSample& s) {
  const auto logits = net.forward(detail::to_tensor(s.rgb, s.weight));
  cv::Mat frame = make_mask(s.rgb.rows, s.rgb.cols);
  for (int y = 0; y < frame.rows; ++y)
    for (int x = 0; x < frame.cols; ++x)
      frame.at<std::uint8_t>(y, x) = logits.data(0, static_cast<Eigen::Index>(y) * frame.cols + x) >= 0.0f;
  const cv::Mat content = frame(cv::Rect(0, 0, s.spec.resized_w, s.spec.resized_h));
  return resample_nearest(content, s.spec.orig_h, s.spec.orig_w);
}

inline std::vector<double> evaluate_ious(nn::UNet& net, std::span<const TrainingSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.gt.empty()) throw DataError(s.id + ": no ground truth to evaluate against");
    out.push_back(iou(predict(net, s), s.gt));
  }
  return out;
}

struct CurvePoint {
  std::size_t subset_size = 0;
  std::size_t repetitions = 0;
  double mean_iou = 0;
  double std_iou = 0;
  std::vector<double> ious;  // one per successful run
  std::vector<int> epochs;   // epochs run, per successful run
  std::size_t failed = 0;
};

struct ScalingOptions {
  std::vector<std::size_t> sizes{2, 4, 8, 16, 32, 64};
  std::size_t repetitions = 5;
  TrainConfig base{};
  std::string dataset_id = "synthetic";
  unsigned workers = 1;
};

/// Seed of one run, a function of (dataset, size, repetition, base seed) only.
inline std::uint64_t run_seed(const std::string& dataset, std::size_t size, std::size_t rep, std::uint64_t base) {
  return detail::mix_seed(digest_seed(sha256_hex(dataset)) ^ base, (std::uint64_t(size) << 32) | rep);
}

/// Trains `repetitions` independent models per subset size and scores each by
/// its mean IoU on the validation split. Runs may be spread over workers; the
/// result does not depend on the worker count.
inline std::vector<CurvePoint> scaling_experiment(std::span<const TrainingSample> pool,
                                                  std::span<const TrainingSample> validation,
                                                  const ScalingOptions& opts) {
  if (!std::is_sorted(opts.sizes.begin(), opts.sizes.end())) throw UsageError("scaling sizes must be ascending");
  if (validation.empty()) throw DataError("scaling experiment needs a validation split");
  struct Job {
    std::size_t point, rep;
    std::optional<double> iou;
    int epochs = 0;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < opts.sizes.size(); ++i)
    for (std::size_t r = 0; r < opts.repetitions; ++r) jobs.push_back({i, r, std::nullopt});
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    Eigen::setNbThreads(1);
    for (std::size_t j; (j = next++) < jobs.size();) {
      auto& job = jobs[j];
      TrainConfig cfg = opts.base;
      cfg.subset_size = opts.sizes[job.point];
      cfg.seed = run_seed(opts.dataset_id, cfg.subset_size, job.rep, opts.base.seed);
      try {
        auto result = train(pool, validation, cfg);
        const auto ious = evaluate_ious(*result.model, validation);
        job.iou = summarize(ious).mean;
        job.epochs = static_cast<int>(result.log.epochs.size());
      } catch (const Error& e) {
        std::lock_guard lock(log_mutex);
        logger()->warn("scaling run size={} rep={} failed: {}", cfg.subset_size, job.rep, e.what());
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(opts.workers, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  std::vector<CurvePoint> points(opts.sizes.size());
  for (std::size_t i = 0; i < points.size(); ++i) points[i].subset_size = opts.sizes[i];
  for (const auto& job : jobs) {
    auto& p = points[job.point];
    if (!job.iou) {
      ++p.failed;
      continue;
    }
    p.ious.push_back(*job.iou);
    p.epochs.push_back(job.epochs);
  }
  for (auto& p : points) {
    p.repetitions = p.ious.size();
    if (p.ious.empty()) {
      p.mean_iou = p.std_iou = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const auto s = summarize(p.ious);
    p.mean_iou = s.mean;
    p.std_iou = s.std;
  }
  return points;
}

struct Crossover {
  std::optional<std::size_t> subset_size;
  double zero_shot_mean = 0;

  std::string describe() const {
    if (!subset_size) return "none within tested sizes";
    return "U-Net exceeds zero-shot from " + std::to_string(*subset_size) + " training samples";
  }
};

/// Smallest subset size whose mean IoU is above the zero-shot mean.
inline Crossover find_crossover(std::span<const CurvePoint> points, double zero_shot_mean) {
  Crossover c{std::nullopt, zero_shot_mean};
  for (const auto& p : points) {
    if (p.repetitions > 0 && p.mean_iou > zero_shot_mean) {
      c.subset_size = p.subset_size;
      break;
    }
  }
  return c;
}

inline void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"subset_size", "repetitions", "mean_iou", "std_iou", "failed", "ious"});
  for (const auto& p : points) {
    std::string ious;
    for (std::size_t i = 0; i < p.ious.size(); ++i) ious += (i ? ";" : "") + detail::format_double(p.ious[i]);
    csv::write_row(out, {std::to_string(p.subset_size), std::to_string(p.repetitions),
                         detail::format_double(p.mean_iou), detail::format_double(p.std_iou),
                         std::to_string(p.failed), ious});
  }
}

}  // namespace plantseg
