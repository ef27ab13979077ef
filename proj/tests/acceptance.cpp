// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. The full-scale reproduction only runs with --paper-scale
// and reports SKIP when weights or datasets are missing.
//
//   acceptance [--paper-scale] [--config FILE]

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <opencv2/imgproc.hpp>

#include "oracles.hpp"
#include "plantseg/backends.hpp"
#include "plantseg/baseline.hpp"
#include "plantseg/config.hpp"
#include "plantseg/datasets.hpp"
#include "plantseg/eval.hpp"
#include "plantseg/log.hpp"
#include "plantseg/pipeline.hpp"
#include "plantseg/synthetic.hpp"

namespace {

using namespace plantseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  enum { pass, fail, skip } status = pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {Outcome::fail, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::fail ? "FAIL" : "SKIP";
  if (o.status == Outcome::fail) ++failures;
  std::printf("%s  %-28s %s [%.1fs]\n", tag, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

cv::Mat random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  cv::Mat m = make_mask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at<std::uint8_t>(y, x) = b(rng);
  return m;
}

// ---------------------------------------------------------------- geometry

Outcome geometry() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(14, 6000);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const int h = dim(rng), w = dim(rng);
    const auto g = plan_geometry(h, w);
    const bool ok = g.padded_h % 14 == 0 && g.padded_w % 14 == 0 && g.token_rows * 14 == g.padded_h &&
                    g.token_cols * 14 == g.padded_w && std::min(g.resized_h, g.resized_w) <= 1036 &&
                    (std::min(h, w) > 1036 || (g.resized_h == h && g.resized_w == w)) &&
                    g.pad_bottom == g.padded_h - g.resized_h && g.pad_right == g.padded_w - g.resized_w &&
                    g.pad_bottom >= 0 && g.pad_bottom <= 13 && g.pad_right >= 0 && g.pad_right <= 13;
    // every pixel of a random token maps back to that token, and its pixel
    // box covers exactly its 14x14 block
    const int r = std::uniform_int_distribution<int>(0, g.token_rows - 1)(rng);
    const int c = std::uniform_int_distribution<int>(0, g.token_cols - 1)(rng);
    bool trip = true;
    for (int dy = 0; dy < 14 && trip; ++dy)
      for (int dx = 0; dx < 14 && trip; ++dx) {
        const auto t = pixel_to_token(14 * r + dy, 14 * c + dx);
        trip = t.row == r && t.col == c;
      }
    const auto extent = token_box_extent(TokenBox{r, c, r, c});
    trip = trip && extent.x_min == 14 * c && extent.y_min == 14 * r && extent.x_max == 14 * c + 13 &&
           extent.y_max == 14 * r + 13;
    bad += !(ok && trip);
  }
  const double secs = seconds_since(start);
  return {bad == 0 && secs < 5.0 ? Outcome::pass : Outcome::fail,
          fmt("1000 sizes, %d violations, %.3fs (limit 5s)", bad, secs)};
}

// ---------------------------------------------------------------- pca

TokenGrid grid_of(const FeatureMatrix& f, int rows, int cols) {
  TokenGrid g;
  g.spec = plan_geometry(14 * rows, 14 * cols);
  g.features = f;
  g.encoder_id = "acceptance";
  g.pad_mask = make_pad_mask(g.spec);
  return g;
}

Outcome pca() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> side(3, 40), dims(2, 64);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_cos = 1.0, worst_ortho = 0.0;
  int flips_ok = 0, largest_n = 0, largest_d = 0;
  const cv::Vec3b plant(40, 170, 40), soil(120, 95, 70);
  for (int trial = 0; trial < 50; ++trial) {
    // first trial at the upper bound, the rest random below it
    const int rows = trial == 0 ? 40 : side(rng);
    const int cols = trial == 0 ? 50 : std::min(side(rng) + 10, 2000 / rows);
    const int d = trial == 0 ? 64 : dims(rng);
    const int n = rows * cols;
    // plant/soil split along a random direction plus anisotropic noise, and
    // an image whose token colours follow the split
    Eigen::VectorXd dir(d);
    for (int j = 0; j < d; ++j) dir(j) = normal(rng);
    dir.normalize();
    std::bernoulli_distribution is_plant(0.2 + 0.6 * (trial % 7) / 6.0);
    FeatureMatrix f(n, d);
    cv::Mat image(14 * rows, 14 * cols, CV_8UC3);
    for (int t = 0; t < n; ++t) {
      const bool p = is_plant(rng);
      for (int j = 0; j < d; ++j) f(t, j) = static_cast<float>(normal(rng) * (1.0 + 0.03 * j) + (p ? 3.0 : -3.0) * dir(j));
      image(cv::Rect(14 * (t % cols), 14 * (t / cols), 14, 14)).setTo(p ? plant : soil);
    }
    const std::vector grids{grid_of(f, rows, cols)};
    const std::vector images{image};
    const auto model = orient(fit(grids), grids, images);

    std::vector<std::vector<double>> data(n, std::vector<double>(d));
    for (int t = 0; t < n; ++t)
      for (int j = 0; j < d; ++j) data[t][j] = f(t, j);
    const auto [values, vecs] = oracle::jacobi_eigen(oracle::covariance(data));
    double dot = 0, norm = 0;
    for (int j = 0; j < d; ++j) {
      dot += vecs[j][0] * model.components(0, j);
      norm += vecs[j][0] * vecs[j][0];
    }
    worst_cos = std::min(worst_cos, std::abs(dot) / std::sqrt(norm));
    const Eigen::MatrixXd gram = model.components * model.components.transpose();
    worst_ortho = std::max(worst_ortho, (gram - Eigen::MatrixXd::Identity(model.k(), model.k())).cwiseAbs().maxCoeff());

    PcaModel flipped = model;
    flipped.components.row(0) *= -1.0;
    flipped.orientation = +1;
    flipped = orient(flipped, grids, images);
    const auto a = classify(grids[0], model), b = classify(grids[0], flipped);
    flips_ok += cv::countNonZero(a.values != b.values) == 0;
    if (n > largest_n) largest_n = n, largest_d = d;
  }
  const bool ok = worst_cos > 1.0 - 1e-9 && worst_ortho <= 1e-6 && flips_ok == 50;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("50 matrices (largest %dx%d): min |cos| = 1 - %.1e (need < 1e-9), orthonormality err %.1e (limit 1e-6), "
              "sign-flip invariant %d/50",
              largest_n, largest_d, 1.0 - worst_cos, worst_ortho, flips_ok)};
}

// ---------------------------------------------------------------- iou

Outcome iou_oracle() {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> side(1, 64);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  int mismatches = 0, asym = 0, self = 0;
  for (int i = 0; i < 500; ++i) {
    const int h = side(rng), w = side(rng);
    const cv::Mat a = random_mask(h, w, density(rng), rng), b = random_mask(h, w, density(rng), rng);
    const double v = iou(a, b);
    mismatches += v != oracle::iou_by_counting(a, b);
    asym += v != iou(b, a);
    self += iou(a, a) != 1.0 || iou(b, b) != 1.0;
  }
  cv::Mat p = make_mask(4, 4), g = make_mask(4, 4);
  p(cv::Rect(0, 0, 2, 2)).setTo(1);
  g(cv::Rect(1, 0, 2, 2)).setTo(1);
  const double hand = iou(p, g);
  const bool ok = mismatches == 0 && asym == 0 && self == 0 && hand == 2.0 / 6.0;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("500 pairs: %d oracle mismatches, %d asymmetric, %d iou(A,A)!=1; hand case %.17g (2/6)", mismatches, asym,
              self, hand)};
}

// ---------------------------------------------------------------- maskops

TokenMask token_mask_of(const cv::Mat& values) {
  return TokenMask{values, cv::Mat(values.size(), CV_64FC1, cv::Scalar(0)), plan_geometry(14 * values.rows, 14 * values.cols)};
}

Outcome maskops() {
  std::mt19937_64 rng(5);
  int comp_bad = 0, box_bad = 0, boxes_checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const cv::Mat m = random_mask(30, 30, 0.15 + 0.5 * (trial % 5) / 4.0, rng);
    for (int conn : {4, 8}) {
      const auto comps = components(m, conn);
      const auto [labels, count] = oracle::flood_fill(m, conn);
      bool same = static_cast<int>(comps.size()) == count;
      std::set<int> used;
      for (const auto& comp : comps) {
        if (!same) break;
        const int lab = labels[comp.tokens.front().row * 30 + comp.tokens.front().col];
        std::size_t members = 0;
        for (int v : labels) members += v == lab;
        same = used.insert(lab).second && members == comp.size();
        for (const auto& t : comp.tokens) same = same && labels[t.row * 30 + t.col] == lab;
      }
      comp_bad += !same;
    }
    // box minimality: contains every member block, and shrinking any side by
    // one token drops a member
    const auto tm = token_mask_of(m);
    const auto comps = components(tm);
    const auto prompts = boxes(comps, tm.spec);
    for (std::size_t i = 0; i < comps.size(); ++i) {
      ++boxes_checked;
      auto holds_all = [&](const PixelBox& b) {
        for (const auto& t : comps[i].tokens)
          if (!b.contains(14 * t.col, 14 * t.row) || !b.contains(14 * t.col + 13, 14 * t.row + 13)) return false;
        return true;
      };
      const auto box = prompts[i].box;
      bool ok = holds_all(box);
      for (int side = 0; side < 4 && ok; ++side) {
        PixelBox s = box;
        (side == 0 ? s.x_min : side == 1 ? s.y_min : side == 2 ? s.x_max : s.y_max) += side < 2 ? 14 : -14;
        ok = !holds_all(s);
      }
      box_bad += !ok;
    }
  }
  int coarse_bad = 0, coarse_cases = 0;
  const std::pair<int, int> shapes[] = {{74, 108}, {72, 108}, {37, 53}, {10, 13}, {300, 280}, {1, 1}, {256, 256}, {5, 200}};
  for (auto [h, w] : shapes)
    for (double p : {0.01, 0.2, 0.6}) {
      const cv::Mat m = random_mask(h, w, p, rng);
      ++coarse_cases;
      coarse_bad += cv::countNonZero(coarse_mask(token_mask_of(m)).values != oracle::coarse_cell_coverage(m)) != 0;
    }
  int union_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + t % 40, w = 1 + (7 * t) % 50;
    std::vector<cv::Mat> parts;
    for (int k = 0; k < 1 + t % 4; ++k) parts.push_back(random_mask(h, w, 0.2, rng));
    const auto u = mask_union(parts, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint8_t any = 0;
        for (const auto& p : parts) any |= p.at<std::uint8_t>(y, x);
        union_bad += u.at<std::uint8_t>(y, x) != any;
      }
  }
  const bool ok = comp_bad == 0 && box_bad == 0 && coarse_bad == 0 && union_bad == 0;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("components %d/400 differ from flood fill; %d/%d boxes not minimal; coarse %d/%d differ from "
              "cell coverage; union %d pixels differ from OR",
              comp_bad, box_bad, boxes_checked, coarse_bad, coarse_cases, union_bad)};
}

// ---------------------------------------------------------------- end to end

struct E2eRun {
  std::vector<double> ious[2];
  std::vector<cv::Mat> masks[2];
  bool prompts_equal = true;
  bool masks_valid = true;
};

E2eRun synthetic_run(const std::vector<synthetic::Scene>& scenes) {
  std::vector<PreparedImage> prepared;
  for (std::size_t i = 0; i < scenes.size(); ++i) prepared.push_back(prepare_image("img" + std::to_string(i), scenes[i].rgb));
  SyntheticEncoder encoder({.seed = 1, .separation = 6.0});
  const auto model = fit_oriented(prepared, encoder);
  TrivialRefiner refiner;
  E2eRun run;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    auto grids = extract_batch(std::span<const PreparedImage>(&prepared[i], 1), encoder, nullptr);
    std::vector<BoxPrompt> first;
    for (int arm = 0; arm < 2; ++arm) {
      SegmentOptions opts;
      opts.use_mask_input = arm == 1;
      const auto r = segment_prepared(prepared[i], grids.front(), model, refiner, opts);
      if (arm == 0) first = r.prompts;
      else run.prompts_equal = run.prompts_equal && first == r.prompts;
      run.masks_valid = run.masks_valid && r.mask.size() == scenes[i].label.size() && r.mask.type() == CV_8UC1 &&
                        cv::countNonZero(r.mask > 1) == 0;
      run.ious[arm].push_back(iou(r.mask, scenes[i].label));
      run.masks[arm].push_back(r.mask);
    }
  }
  return run;
}

Outcome end_to_end() {
  const auto start = Clock::now();
  std::vector<synthetic::Scene> scenes;
  for (int i = 0; i < 20; ++i) scenes.push_back(synthetic::rect_scene(224 + 14 * (i % 3), 280 + 10 * i, 100 + i));
  const auto a = synthetic_run(scenes);
  const auto b = synthetic_run(scenes);
  bool same = true;
  for (int arm = 0; arm < 2; ++arm)
    for (std::size_t i = 0; i < scenes.size(); ++i) same = same && cv::countNonZero(a.masks[arm][i] != b.masks[arm][i]) == 0;
  const double plain = summarize(a.ious[0]).mean, with_mask = summarize(a.ious[1]).mean;
  const double secs = seconds_since(start);
  const bool ok = plain >= 0.95 && a.prompts_equal && a.masks_valid && same && secs < 120.0;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("20 images: mean IoU %.4f (need >= 0.95), mask-input arm %.4f, prompts identical %s, rerun identical "
              "%s, %.1fs (limit 120s)",
              plain, with_mask, a.prompts_equal ? "yes" : "no", same ? "yes" : "no", secs)};
}

// ---------------------------------------------------------------- baseline

std::vector<TrainingSample> blob_samples(int count, std::uint64_t seed, int side, int multiple) {
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    auto scene = synthetic::blob_scene(side, side, seed + static_cast<std::uint64_t>(i), 2);
    out.push_back(make_training_sample("s" + std::to_string(i), scene.rgb, scene.label, kMaxShortEdge, multiple));
  }
  return out;
}

Clock::time_point baseline_start;

Outcome baseline_overfit() {
  baseline_start = Clock::now();
  TrainConfig c;
  c.net = {3, 8, 2};
  c.max_epochs = 100;
  c.patience = 5;
  c.seed = 3;
  const auto pool = blob_samples(1, 7, 32, c.net.multiple());
  const auto r = train(pool, pool, c);
  const double v = evaluate_ious(*r.model, pool)[0];
  return {v > 0.9 ? Outcome::pass : Outcome::fail, fmt("single image train IoU %.4f (need > 0.9), %zu epochs", v, r.log.epochs.size())};
}

Outcome baseline_scaling() {
  ScalingOptions o;
  o.sizes = {2, 64};
  o.repetitions = 5;
  o.base.net = {3, 4, 2};
  o.base.max_epochs = 40;
  o.base.patience = 5;
  o.base.learning_rate = 1e-2;
  o.base.seed = 11;
  o.dataset_id = "synthetic-blobs";
  const auto pool = blob_samples(80, 1000, 32, o.base.net.multiple());
  const auto val = blob_samples(16, 5000, 32, o.base.net.multiple());
  const auto points = scaling_experiment(pool, val, o);
  const auto& small = points[0];
  const auto& large = points[1];
  const bool ok = small.repetitions == 5 && large.repetitions == 5 && large.mean_iou >= small.mean_iou;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("mean IoU size 2: %.4f +- %.4f, size 64: %.4f +- %.4f (5 reps each, %zu failed)", small.mean_iou,
              small.std_iou, large.mean_iou, large.std_iou, small.failed + large.failed)};
}

Outcome baseline_patience() {
  // checked from the epochs.csv the trainer writes, not from its own flags
  const auto dir = fs::temp_directory_path() / ("plantseg-acceptance-" + std::to_string(::getpid()));
  int runs = 0, bad = 0, stopped = 0;
  for (int patience : {1, 2, 3}) {
    TrainConfig c;
    c.net = {3, 4, 2};
    c.max_epochs = 60;
    c.patience = patience;
    c.learning_rate = 3e-2;
    c.seed = static_cast<std::uint64_t>(patience);
    const auto pool = blob_samples(4, 9 + patience, 32, c.net.multiple());
    const auto val = blob_samples(2, 90 + patience, 32, c.net.multiple());
    const auto r = train(pool, val, c);
    const auto csv_path = dir / ("epochs_" + std::to_string(patience) + ".csv");
    r.log.write_csv(csv_path);
    const auto rows = csv::read_file(csv_path);
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0, last = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const int epoch = std::stoi(rows[i][0]);
      const double loss = std::stod(rows[i][2]);
      if (loss < best) best = loss, best_epoch = epoch;
      last = epoch;
    }
    // the run ends exactly `patience` epochs after the best, or at max_epochs
    const bool expected_stop = last - best_epoch >= patience;
    const bool ok = expected_stop ? last == best_epoch + patience : last == c.max_epochs;
    stopped += expected_stop;
    bad += !ok;
    ++runs;
  }
  fs::remove_all(dir);
  return {bad == 0 && stopped > 0 ? Outcome::pass : Outcome::fail,
          fmt("%d runs, %d stopped early, %d violate patience", runs, stopped, bad)};
}

Outcome baseline_runtime() {
  const double secs = seconds_since(baseline_start);
  return {secs < 900 ? Outcome::pass : Outcome::fail, fmt("baseline checks took %.1fs (limit 900s)", secs)};
}

// ---------------------------------------------------------------- degenerate

Outcome degenerate() {
  std::vector<synthetic::Scene> scenes;
  std::vector<PreparedImage> prepared;
  for (int i = 0; i < 6; ++i) {
    scenes.push_back(synthetic::rect_scene(224, 280, 300 + i));
    prepared.push_back(prepare_image("fit" + std::to_string(i), scenes.back().rgb));
  }
  SyntheticEncoder encoder({.seed = 1});
  const auto model = fit_oriented(prepared, encoder);
  TrivialRefiner refiner;
  const auto soil = synthetic::background_scene(224, 280, 7);
  const auto r = segment_image("soil", soil.rgb, encoder, model, refiner);
  const auto both = iou_detail(make_mask(9, 9), make_mask(9, 9));
  const bool ok = r.prompts.empty() && count_true(r.mask) == 0 && both.value == 1.0 && both.both_empty;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("background image: %zu prompts, %d mask pixels; both-empty IoU %.1f, flag %s", r.prompts.size(),
              count_true(r.mask), both.value, both.both_empty ? "set" : "unset")};
}

// ---------------------------------------------------------------- reproduction

struct ZeroShot {
  double mean = 0;
  std::size_t images = 0;
};

ZeroShot zero_shot(const Config& cfg, const std::string& encoder_id, const std::string& dataset, bool mask_input) {
  const fs::path root = cfg.dataset_root(dataset);
  auto encoder = make_encoder(encoder_id, cfg);
  auto refiner = make_refiner("sam2", cfg);
  FeatureCache cache(cfg.cache_dir);
  const auto fit_records = load_dataset(dataset, root, "val");
  std::vector<GeometrySpec> specs;
  for (const auto& r : fit_records) {
    const auto rgb = read_rgb(r.image_path);
    specs.push_back(plan_geometry(rgb.rows, rgb.cols));
  }
  PcaFitOptions fit_opts;
  fit_opts.seed = cfg.seed;
  const auto model = fit_oriented_streaming(
      specs, [&](std::size_t i) { return prepare_image(fit_records[i].id, read_rgb(fit_records[i].image_path)); },
      *encoder, fit_opts, OrientMode::automatic, &cache);
  std::vector<double> ious;
  SegmentOptions opts;
  opts.use_mask_input = mask_input;
  for (const auto& rec : load_dataset(dataset, root, "test")) {
    const auto s = load_sample(rec);
    if (!s.gt) continue;
    ious.push_back(iou(segment_image(rec.id, s.rgb, *encoder, model, *refiner, opts, &cache).mask, *s.gt));
  }
  if (ious.empty()) throw DataError(dataset + ": no test images with ground truth");
  return {summarize(ious).mean, ious.size()};
}

std::string missing_inputs(const Config& cfg, const std::vector<std::string>& backends, const std::string& dataset) {
  std::string missing;
  for (const auto& b : backends) {
    const auto w = cfg.weights_for(b);
    const bool present = b == "sam2" ? fs::exists(w) : fs::exists(w / "model.safetensors");
    if (!present) missing += " " + b + " weights (" + w.string() + ")";
  }
  if (!fs::is_directory(cfg.dataset_root(dataset))) missing += " " + dataset + " data (" + cfg.dataset_root(dataset).string() + ")";
  return missing;
}

void reproduction(bool paper_scale, const Config& cfg) {
  const std::string gate = "run with --paper-scale";
  report("repro: plantnet phenobench", [&]() -> Outcome {
    if (!paper_scale) return {Outcome::skip, gate};
    if (auto m = missing_inputs(cfg, {kEncoderPlantnet, "sam2"}, "phenobench"); !m.empty()) return {Outcome::skip, "missing" + m};
    const auto z = zero_shot(cfg, kEncoderPlantnet, "phenobench", false);
    return {std::abs(z.mean - 0.672) <= 0.05 ? Outcome::pass : Outcome::fail,
            fmt("mean IoU %.3f over %zu images (target 0.672 +- 0.05)", z.mean, z.images)};
  });
  report("repro: dinov2-base phenobench", [&]() -> Outcome {
    if (!paper_scale) return {Outcome::skip, gate};
    if (auto m = missing_inputs(cfg, {kEncoderPlantnet, kEncoderDinov2, "sam2"}, "phenobench"); !m.empty())
      return {Outcome::skip, "missing" + m};
    const auto base = zero_shot(cfg, kEncoderDinov2, "phenobench", false);
    const auto plantnet = zero_shot(cfg, kEncoderPlantnet, "phenobench", false);
    const bool ok = base.mean <= plantnet.mean - 0.2 && std::abs(base.mean - 0.119) <= 0.10;
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("dinov2-base %.3f vs plantnet %.3f (need at least 0.2 lower and within 0.10 of 0.119)", base.mean,
                plantnet.mean)};
  });
  report("repro: appletree mask input", [&]() -> Outcome {
    if (!paper_scale) return {Outcome::skip, gate};
    if (auto m = missing_inputs(cfg, {kEncoderPlantnet, "sam2"}, "appletree"); !m.empty()) return {Outcome::skip, "missing" + m};
    const auto without = zero_shot(cfg, kEncoderPlantnet, "appletree", false);
    const auto with = zero_shot(cfg, kEncoderPlantnet, "appletree", true);
    const bool ok = with.mean > without.mean && std::abs(with.mean - 0.754) <= 0.05;
    return {ok ? Outcome::pass : Outcome::fail,
            fmt("without %.3f, with %.3f (need an improvement, and within 0.05 of 0.754)", without.mean, with.mean)};
  });
}

}  // namespace

int main(int argc, char** argv) {
  bool paper_scale = false;
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--paper-scale") paper_scale = true;
    else if (a == "--config" && i + 1 < argc) config_path = argv[++i];
    else {
      std::cerr << "usage: acceptance [--paper-scale] [--config FILE]\n";
      return 1;
    }
  }
  logger()->set_level(spdlog::level::err);

  report("geometry", geometry);
  report("pca oracle", pca);
  report("iou oracle", iou_oracle);
  report("maskops oracles", maskops);
  report("end-to-end synthetic", end_to_end);
  report("baseline: overfit", baseline_overfit);
  report("baseline: scaling 64 >= 2", baseline_scaling);
  report("baseline: early stopping", baseline_patience);
  report("baseline: runtime", baseline_runtime);
  report("degenerate inputs", degenerate);
  Config cfg;
  try {
    cfg = load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  reproduction(paper_scale, cfg);

  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
