#pragma once

// Token PCA classifier: fit a centred PCA over the content tokens of a
// reference split, orient the first component so plants score positive, and
// threshold the oriented projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/container.hpp"
#include "plantseg/error.hpp"
#include "plantseg/log.hpp"
#include "plantseg/token_grid.hpp"
#include "plantseg/vegetation.hpp"

namespace plantseg {

inline constexpr std::size_t kDefaultPcaTokenCap = 2'000'000;
/// Below this |corr(score, ExG)| the orientation is considered undetermined.
inline constexpr double kMinOrientationCorrelation = 0.05;

struct PcaFitOptions {
  std::size_t max_tokens = kDefaultPcaTokenCap;
  std::uint64_t seed = 0;
  int keep = 3;  // components retained; only the first classifies
};

struct PcaFitMeta {
  std::string encoder_id;
  std::size_t token_count = 0;      // tokens actually used for the fit
  std::size_t tokens_available = 0; // content tokens offered
  std::uint64_t subsample_seed = 0;
  bool subsampled = false;
  std::string fit_split;
  std::string orientation_source = "unset";  // unset | exg | exg-weak | manual
  double orientation_correlation = 0.0;
};

inline void to_json(nlohmann::json& j, const PcaFitMeta& m) {
  j = nlohmann::json{{"encoder_id", m.encoder_id},
                     {"token_count", m.token_count},
                     {"tokens_available", m.tokens_available},
                     {"subsample_seed", m.subsample_seed},
                     {"subsampled", m.subsampled},
                     {"fit_split", m.fit_split},
                     {"orientation_source", m.orientation_source},
                     {"orientation_correlation", m.orientation_correlation}};
}

inline void from_json(const nlohmann::json& j, PcaFitMeta& m) {
  j.at("encoder_id").get_to(m.encoder_id);
  j.at("token_count").get_to(m.token_count);
  m.tokens_available = j.value("tokens_available", m.token_count);
  j.at("subsample_seed").get_to(m.subsample_seed);
  m.subsampled = j.value("subsampled", false);
  m.fit_split = j.value("fit_split", "");
  m.orientation_source = j.value("orientation_source", "unset");
  m.orientation_correlation = j.value("orientation_correlation", 0.0);
}

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;          // k x dim, orthonormal rows, by decreasing variance
  Eigen::VectorXd explained_variance;  // k, nonincreasing
  int orientation = +1;                // applied to component 1 only
  PcaFitMeta meta;

  int dim() const { return static_cast<int>(mean.size()); }
  int k() const { return static_cast<int>(components.rows()); }

  /// Projection on component 1 before orientation.
  template <typename Row>
  double raw_score(const Row& feature) const {
    return (feature.template cast<double>().transpose() - mean).dot(components.row(0).transpose());
  }

  template <typename Row>
  double score(const Row& feature) const {
    return orientation * raw_score(feature);
  }
};

namespace detail {

struct TokenRef {
  std::uint32_t grid;
  std::uint32_t token;
};

inline std::vector<TokenRef> content_tokens(std::span<const TokenGrid> grids) {
  std::vector<TokenRef> refs;
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const auto& grid = grids[g];
    for (int r = 0; r < grid.rows(); ++r)
      for (int c = 0; c < grid.cols(); ++c)
        if (!grid.is_pad(r, c)) {
          refs.push_back({static_cast<std::uint32_t>(g),
                          static_cast<std::uint32_t>(r * grid.cols() + c)});
        }
  }
  return refs;
}

/// Flip so the largest-magnitude coordinate is positive; makes the raw
/// eigenvector sign reproducible independent of the solver.
inline void canonical_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

/// Eigendecomposition of a covariance into a PcaModel (orientation unset).
inline PcaModel solve_pca(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const std::string& encoder_id,
                          std::size_t used, std::size_t available, bool subsampled,
                          const PcaFitOptions& options) {
  const auto dim = static_cast<int>(mean.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw DataError("pca fit: eigendecomposition failed");
  const double top = solver.eigenvalues()(dim - 1);
  if (!(top > 1e-12 * std::max(1.0, mean.squaredNorm()))) {
    throw RankError("pca fit: token features have no variance (all identical?)");
  }
  const int k = std::min(options.keep, dim);
  PcaModel model;
  model.mean = mean;
  model.components.resize(k, dim);
  model.explained_variance.resize(k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = solver.eigenvectors().col(dim - 1 - i);
    canonical_sign(v);
    model.components.row(i) = v.transpose();
    model.explained_variance(i) = std::max(0.0, solver.eigenvalues()(dim - 1 - i));
  }
  model.orientation = +1;
  model.meta.encoder_id = encoder_id;
  model.meta.token_count = used;
  model.meta.tokens_available = available;
  model.meta.subsample_seed = options.seed;
  model.meta.subsampled = subsampled;
  return model;
}

}  // namespace detail

/// Centred PCA over all non-pad tokens (seeded uniform subsample above the cap).
inline PcaModel fit(std::span<const TokenGrid> grids, const PcaFitOptions& options = {}) {
  if (grids.empty()) throw DataError("pca fit: no token grids supplied");
  const std::string& encoder_id = grids.front().encoder_id;
  const int dim = grids.front().dim();
  for (const auto& g : grids) {
    if (g.encoder_id != encoder_id) {
      throw DataError("pca fit: grids mix encoders '" + encoder_id + "' and '" + g.encoder_id + "'");
    }
    if (g.dim() != dim) throw DataError("pca fit: grids have different feature widths");
  }
  if (options.keep < 1) throw UsageError("pca fit: keep must be >= 1");

  std::vector<detail::TokenRef> refs = detail::content_tokens(grids);
  const std::size_t available = refs.size();
  if (available < 2) throw DataError("pca fit: need at least 2 content tokens");
  bool subsampled = false;
  if (options.max_tokens >= 2 && available > options.max_tokens) {
    std::vector<detail::TokenRef> picked;
    picked.reserve(options.max_tokens);
    std::mt19937_64 rng(options.seed);
    std::ranges::sample(refs, std::back_inserter(picked),
                        static_cast<std::ptrdiff_t>(options.max_tokens), rng);
    refs = std::move(picked);
    subsampled = true;
  }
  const auto n = static_cast<double>(refs.size());

  auto row = [&](const detail::TokenRef& t) {
    return grids[t.grid].features.row(t.token).template cast<double>();
  };

  // pass 1: mean, accumulated in a fixed order
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& t : refs) mean += row(t).transpose();
  mean /= n;

  // pass 2: centred scatter in blocks
  constexpr std::size_t kBlock = 2048;
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd block;
  for (std::size_t start = 0; start < refs.size(); start += kBlock) {
    const std::size_t len = std::min(kBlock, refs.size() - start);
    block.resize(static_cast<Eigen::Index>(len), dim);
    for (std::size_t i = 0; i < len; ++i) {
      block.row(static_cast<Eigen::Index>(i)) = row(refs[start + i]) - mean.transpose();
    }
    scatter.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
  }
  Eigen::MatrixXd cov = scatter.selfadjointView<Eigen::Lower>();
  cov /= n;
  return detail::solve_pca(mean, cov, encoder_id, refs.size(), available, subsampled, options);
}

enum class OrientMode { automatic, positive, negative };

inline OrientMode parse_orient_mode(const std::string& s) {
  if (s == "auto") return OrientMode::automatic;
  if (s == "+1" || s == "positive" || s == "keep") return OrientMode::positive;
  if (s == "-1" || s == "negative" || s == "flip") return OrientMode::negative;
  throw UsageError("unknown orientation '" + s + "' (expected auto, +1 or -1)");
}

/// Pearson correlation between raw component-1 scores and per-token mean ExG
/// over the content tokens of `grids`.
inline double score_exg_correlation(const PcaModel& model, std::span<const TokenGrid> grids,
                                    std::span<const cv::Mat> padded_images) {
  if (grids.size() != padded_images.size()) {
    throw DataError("orient: " + std::to_string(grids.size()) + " grids but " +
                    std::to_string(padded_images.size()) + " images");
  }
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const auto& grid = grids[g];
    const auto& img = padded_images[g];
    if (img.rows != grid.spec.padded_h || img.cols != grid.spec.padded_w) {
      throw DataError("orient: image " + std::to_string(g) + " does not match its token grid");
    }
    const auto exg = token_mean_exg(img, grid.spec);
    for (int r = 0; r < grid.rows(); ++r)
      for (int c = 0; c < grid.cols(); ++c) {
        if (grid.is_pad(r, c)) continue;
        const double x = model.raw_score(grid.token(r, c));
        const double y = exg[static_cast<std::size_t>(r * grid.cols() + c)];
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
      }
  }
  if (n < 2) return 0.0;
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  if (!(vx > 0) || !(vy > 0)) return 0.0;
  return cov / std::sqrt(vx * vy);
}

namespace detail {

inline PcaModel set_orientation(PcaModel model, double corr, OrientMode mode) {
  model.meta.orientation_correlation = corr;
  switch (mode) {
    case OrientMode::positive:
      model.orientation = +1;
      model.meta.orientation_source = "manual";
      return model;
    case OrientMode::negative:
      model.orientation = -1;
      model.meta.orientation_source = "manual";
      return model;
    case OrientMode::automatic:
      break;
  }
  if (std::abs(corr) < kMinOrientationCorrelation) {
    logger()->warn(
        "pca orientation undetermined: |corr(PC1, ExG)| = {:.4f} < {}; keeping +1 (override with a "
        "manual orientation)",
        std::abs(corr), kMinOrientationCorrelation);
    model.orientation = +1;
    model.meta.orientation_source = "exg-weak";
  } else {
    model.orientation = corr >= 0 ? +1 : -1;
    model.meta.orientation_source = "exg";
  }
  return model;
}

}  // namespace detail

/// Fixes the sign of component 1 so greener tokens score higher. A manual
/// mode overrides the heuristic and is recorded as such.
inline PcaModel orient(PcaModel model, std::span<const TokenGrid> grids,
                       std::span<const cv::Mat> padded_images,
                       OrientMode mode = OrientMode::automatic) {
  const double corr = score_exg_correlation(model, grids, padded_images);
  return detail::set_orientation(std::move(model), corr, mode);
}

/// Content tokens of a set of images, known from geometry alone, and the
/// subset a fit would use (same seeded draw as fit()).
inline std::vector<detail::TokenRef> select_fit_tokens(std::span<const GeometrySpec> specs,
                                                       const PcaFitOptions& options, std::size_t* available,
                                                       bool* subsampled) {
  std::vector<detail::TokenRef> refs;
  for (std::size_t g = 0; g < specs.size(); ++g)
    for (int r = 0; r < specs[g].token_rows; ++r)
      for (int c = 0; c < specs[g].token_cols; ++c)
        if (!is_pad_token(r, c, specs[g]))
          refs.push_back({static_cast<std::uint32_t>(g), static_cast<std::uint32_t>(r * specs[g].token_cols + c)});
  *available = refs.size();
  *subsampled = false;
  if (options.max_tokens >= 2 && refs.size() > options.max_tokens) {
    std::vector<detail::TokenRef> picked;
    picked.reserve(options.max_tokens);
    std::mt19937_64 rng(options.seed);
    std::ranges::sample(refs, std::back_inserter(picked), static_cast<std::ptrdiff_t>(options.max_tokens), rng);
    refs = std::move(picked);
    *subsampled = true;
  }
  return refs;
}

/// One-pass PCA plus ExG orientation, for token sets too large to hold.
/// Moments are taken about the first token seen (shifted sums keep the
/// single pass numerically close to the two-pass fit); the score/ExG
/// correlation follows from the cross-moments, since the score is linear in
/// the features.
class StreamingPcaFit {
public:
  explicit StreamingPcaFit(PcaFitOptions options = {}) : options_(options) {
    if (options_.keep < 1) throw UsageError("pca fit: keep must be >= 1");
  }

  void add(const Eigen::Ref<const Eigen::RowVectorXf>& feature, double exg) {
    if (n_ == 0) {
      dim_ = static_cast<int>(feature.size());
      shift_ = feature.cast<double>().transpose();
      sum_ = Eigen::VectorXd::Zero(dim_);
      cross_ = Eigen::VectorXd::Zero(dim_);
      scatter_ = Eigen::MatrixXd::Zero(dim_, dim_);
      block_.resize(kBlock, dim_);
    } else if (feature.size() != dim_) {
      throw DataError("pca fit: grids have different feature widths");
    }
    const Eigen::VectorXd d = feature.cast<double>().transpose() - shift_;
    sum_ += d;
    cross_ += d * exg;
    sum_e_ += exg;
    sum_ee_ += exg * exg;
    block_.row(fill_++) = d.transpose();
    if (fill_ == kBlock) flush();
    ++n_;
  }

  std::size_t count() const { return n_; }

  /// Fitted and oriented model; `available`/`subsampled` go to the metadata.
  PcaModel finish(const std::string& encoder_id, std::size_t available, bool subsampled,
                  OrientMode mode = OrientMode::automatic) {
    if (n_ < 2) throw DataError("pca fit: need at least 2 content tokens");
    flush();
    const double n = static_cast<double>(n_);
    const Eigen::VectorXd md = sum_ / n;
    Eigen::MatrixXd cov = scatter_.selfadjointView<Eigen::Lower>();
    cov /= n;
    cov -= md * md.transpose();
    PcaModel model = detail::solve_pca(shift_ + md, cov, encoder_id, n_, available, subsampled, options_);
    const double me = sum_e_ / n;
    const double var_e = sum_ee_ / n - me * me;
    const Eigen::VectorXd cov_xe = cross_ / n - md * me;
    const double var_s = model.components.row(0) * cov * model.components.row(0).transpose();
    double corr = 0.0;
    if (var_e > 0 && var_s > 0) corr = model.components.row(0).dot(cov_xe) / std::sqrt(var_s * var_e);
    return detail::set_orientation(std::move(model), corr, mode);
  }

private:
  void flush() {
    if (fill_ == 0) return;
    scatter_.selfadjointView<Eigen::Lower>().rankUpdate(block_.topRows(fill_).transpose());
    fill_ = 0;
  }

  static constexpr Eigen::Index kBlock = 2048;
  PcaFitOptions options_;
  std::size_t n_ = 0;
  int dim_ = 0;
  Eigen::VectorXd shift_, sum_, cross_;
  Eigen::MatrixXd scatter_, block_;
  Eigen::Index fill_ = 0;
  double sum_e_ = 0, sum_ee_ = 0;
};

struct TokenMask {
  cv::Mat values;  // CV_8UC1 token grid, 1 = plant
  cv::Mat scores;  // CV_64FC1 oriented component-1 projections
  GeometrySpec spec;

  int rows() const { return values.rows; }
  int cols() const { return values.cols; }
};

/// Plant where the oriented score is >= threshold; pad tokens never plant.
inline TokenMask classify(const TokenGrid& grid, const PcaModel& model, double threshold = 0.0) {
  if (grid.encoder_id != model.meta.encoder_id) {
    throw DataError("classify: grid from '" + grid.encoder_id + "' but model fitted on '" +
                    model.meta.encoder_id + "'");
  }
  if (grid.dim() != model.dim()) throw DataError("classify: feature width differs from model");
  TokenMask mask;
  mask.spec = grid.spec;
  mask.values = make_mask(grid.rows(), grid.cols());
  mask.scores = cv::Mat(grid.rows(), grid.cols(), CV_64FC1, cv::Scalar(0));
  for (int r = 0; r < grid.rows(); ++r)
    for (int c = 0; c < grid.cols(); ++c) {
      const double s = model.score(grid.token(r, c));
      mask.scores.at<double>(r, c) = s;
      mask.values.at<std::uint8_t>(r, c) = !grid.is_pad(r, c) && s >= threshold;
    }
  return mask;
}

struct ScoreHistogram {
  std::vector<double> edges;         // bins + 1, symmetric around 0
  std::vector<std::uint64_t> counts; // bins
  std::uint64_t total = 0;

  double fraction(std::size_t bin) const {
    return total ? static_cast<double>(counts[bin]) / static_cast<double>(total) : 0.0;
  }
};

/// Histogram of content-token scores over [-M, M], M = max |score| (1 if all zero).
inline ScoreHistogram score_histogram(std::span<const TokenMask> masks, int bins) {
  if (masks.empty()) throw DataError("score_histogram: no masks");
  if (bins < 1) throw UsageError("score_histogram: bins must be >= 1");
  auto for_each_score = [&](auto&& fn) {
    for (const auto& m : masks)
      for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c)
          if (!is_pad_token(r, c, m.spec)) fn(m.scores.at<double>(r, c));
  };
  double bound = 0.0;
  for_each_score([&](double s) { bound = std::max(bound, std::abs(s)); });
  if (bound == 0.0) bound = 1.0;
  ScoreHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[i] = -bound + 2.0 * bound * i / bins;
  h.edges[static_cast<std::size_t>(bins)] = bound;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for_each_score([&](double s) {
    auto bin = static_cast<long>(std::floor((s + bound) / (2.0 * bound) * bins));
    bin = std::clamp(bin, 0L, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
    ++h.total;
  });
  return h;
}

inline constexpr std::string_view kPcaMagic = "PSPCA01\n";

/// JSON header + f64 payload (mean, then components row-major).
inline void save_pca(const PcaModel& model, const std::filesystem::path& path) {
  std::vector<double> payload(model.mean.data(), model.mean.data() + model.mean.size());
  for (int i = 0; i < model.k(); ++i)
    for (int d = 0; d < model.dim(); ++d) payload.push_back(model.components(i, d));
  nlohmann::json h{
      {"format", "plantseg-pca"},
      {"version", 1},
      {"dim", model.dim()},
      {"k", model.k()},
      {"orientation", model.orientation},
      {"explained_variance",
       std::vector<double>(model.explained_variance.data(),
                           model.explained_variance.data() + model.explained_variance.size())},
      {"dtype", "f64"},
      {"layout", "mean[dim] then components[k][dim], little-endian"},
      {"meta", model.meta}};
  write_container(path, kPcaMagic, h, payload.data(), payload.size() * sizeof(double));
}

inline PcaModel load_pca(const std::filesystem::path& path) {
  Container c = read_container(path, kPcaMagic);
  try {
    const int dim = c.header.at("dim").get<int>();
    const int k = c.header.at("k").get<int>();
    if (dim < 1 || k < 1) throw DataError("bad shape");
    if (c.payload.size() != std::size_t(dim) * (k + 1) * sizeof(double)) {
      throw DataError("payload size mismatch");
    }
    const auto* p = reinterpret_cast<const double*>(c.payload.data());
    PcaModel m;
    m.mean = Eigen::Map<const Eigen::VectorXd>(p, dim);
    m.components =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            p + dim, k, dim);
    const auto ev = c.header.at("explained_variance").get<std::vector<double>>();
    m.explained_variance = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    m.orientation = c.header.at("orientation").get<int>();
    if (m.orientation != 1 && m.orientation != -1) throw DataError("orientation must be +1 or -1");
    m.meta = c.header.at("meta").get<PcaFitMeta>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed pca header: " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace plantseg
