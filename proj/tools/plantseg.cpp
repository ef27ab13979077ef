// plantseg command line: zero-shot segmentation runs, evaluation, U-Net
// baselines, figures and tables. Exit codes: 0 ok, 1 usage, 2 data, 3 backend.

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "plantseg/backends.hpp"
#include "plantseg/baseline.hpp"
#include "plantseg/config.hpp"
#include "plantseg/datasets.hpp"
#include "plantseg/eval.hpp"
#include "plantseg/image_io.hpp"
#include "plantseg/log.hpp"
#include "plantseg/pipeline.hpp"
#include "plantseg/plot.hpp"

namespace fs = std::filesystem;
namespace ps = plantseg;
using nlohmann::json;

namespace {

constexpr int kFastShortEdge = 518;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  bool no_cache = false;
  std::string cache_dir;
  bool fast = false;
  bool paper_scale = false;
  bool verbose = false;

  ps::Config load() const {
    auto c = ps::load_config(config_path);
    if (seed) c.seed = *seed;
    if (workers > 0) c.workers = workers;
    if (!cache_dir.empty()) c.cache_dir = cache_dir;
    return c;
  }
  int max_edge() const { return fast ? kFastShortEdge : ps::kMaxShortEdge; }

  json to_json() const {
    return {{"config", config_path}, {"workers", workers},   {"no_cache", no_cache},
            {"fast", fast},          {"paper_scale", paper_scale}, {"max_short_edge", max_edge()}};
  }
};

struct DatasetRef {
  std::string name;  // as given on the command line
  std::string id;    // canonical dataset id
  fs::path root;
};

DatasetRef resolve_dataset(const std::string& name, const std::string& root, const ps::Config& cfg) {
  DatasetRef d{name, name, {}};
  if (name == "mini-fixture") d.id = "phenobench";
  else if (name.starts_with("mini-")) d.id = name.substr(5);
  ps::dataset_info(d.id);
  if (!root.empty()) d.root = root;
  else if (name.starts_with("mini-")) d.root = fs::path(PLANTSEG_SOURCE_DIR) / "data" / "mini" / d.id;
  else d.root = cfg.dataset_root(d.id);
  return d;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string method_for(const std::string& encoder) {
  if (encoder == ps::kEncoderPlantnet) return "plantnet-zeroshot";
  if (encoder == ps::kEncoderDinov2) return "dinov2-zeroshot";
  return encoder + "-zeroshot";
}

/// Runs `work(state, i)` for i in [0, n) over `workers` threads, each with
/// its own state from `make_state()`. Setup failures are rethrown.
template <typename MakeState, typename Work>
void parallel_for(std::size_t n, int workers, MakeState make_state, Work work) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const int count = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(n, 1))));
  auto body = [&] {
    try {
      if (count > 1) Eigen::setNbThreads(1);
      auto state = make_state();
      for (std::size_t i; (i = next++) < n;) work(state, i);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = n;
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < count; ++t) threads.emplace_back(body);
  body();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct ErrorLog {
  std::vector<std::pair<std::string, std::string>> entries;
  int worst = 0;

  void add(const std::string& id, const std::string& message, int code) {
    entries.emplace_back(id, message);
    worst = std::max(worst, code);
    ps::logger()->error("{}: {}", id, message);
  }

  void write(const fs::path& dir) const {
    if (entries.empty()) return;
    std::ofstream out(dir / "errors.log");
    for (const auto& [id, msg] : entries) out << id << "\t" << msg << "\n";
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw ps::DataError("cannot write " + path.string());
}

/// Results CSV + summary CSV + markdown table in `dir`; returns the table.
std::string write_results(const fs::path& dir, const std::vector<ps::EvalRecord>& records) {
  ps::write_results_csv(dir / "results.csv", records);
  if (records.empty()) return "";
  const auto stats = ps::aggregate(records);
  ps::write_summary_csv(dir / "summary.csv", stats);
  const auto table = ps::render_table(stats);
  write_text(dir / "table.md", table);
  return table;
}

// ---------------------------------------------------------------- segment

struct SegmentArgs {
  std::string encoder = ps::kEncoderPlantnet;
  std::string refiner = "sam2";
  std::string dataset;
  std::string root;
  std::string split = "test";
  std::string fit_split = "val";
  std::string pca_path;
  std::string orient = "auto";
  std::size_t token_cap = ps::kDefaultPcaTokenCap;
  bool use_mask_input = false;
  bool single_box = false;
  int connectivity = 8;
  std::size_t min_tokens = 1;
  double threshold = 0.0;
  bool debug = false;
  std::string out;

  json to_json() const {
    return {{"encoder", encoder},         {"refiner", refiner},     {"dataset", dataset},
            {"root", root},               {"split", split},         {"fit_split", fit_split},
            {"pca", pca_path},            {"orient", orient},       {"token_cap", token_cap},
            {"use_mask_input", use_mask_input}, {"single_box", single_box}, {"connectivity", connectivity},
            {"min_tokens", min_tokens},   {"threshold", threshold}, {"debug", debug},
            {"out", out}};
  }
};

void add_segment_options(CLI::App* cmd, SegmentArgs& a, bool ablation) {
  cmd->add_option("--encoder", a.encoder, "plantnet-dinov2 | dinov2-base | synthetic")->capture_default_str();
  cmd->add_option("--refiner", a.refiner, "sam2 | trivial")->capture_default_str();
  cmd->add_option("--dataset", a.dataset, "dataset id, or mini-<id> / mini-fixture")->required();
  cmd->add_option("--root", a.root, "dataset root (overrides config)");
  cmd->add_option("--split", a.split, "split to segment")->capture_default_str();
  cmd->add_option("--fit-split", a.fit_split, "split the PCA is fitted on")->capture_default_str();
  cmd->add_option("--pca", a.pca_path, "use a saved PCA model instead of fitting");
  cmd->add_option("--orient", a.orient, "auto | +1 | -1")->capture_default_str();
  cmd->add_option("--token-cap", a.token_cap, "PCA token subsample cap")->capture_default_str();
  if (!ablation) cmd->add_flag("--use-mask-input", a.use_mask_input, "give the 256x256 coarse mask to the refiner");
  cmd->add_flag("--single-box", a.single_box, "one box around all plant tokens");
  cmd->add_option("--connectivity", a.connectivity, "4 or 8")->check(CLI::IsMember({4, 8}))->capture_default_str();
  cmd->add_option("--min-tokens", a.min_tokens, "drop smaller components")->capture_default_str();
  cmd->add_option("--threshold", a.threshold, "score threshold")->capture_default_str();
  cmd->add_flag("--debug", a.debug, "write token masks and prompt JSON per image");
  cmd->add_option("--out", a.out, "output directory")->required();
}

std::unique_ptr<ps::FeatureCache> make_cache(const Common& g, const ps::Config& cfg) {
  if (g.no_cache) return nullptr;
  return std::make_unique<ps::FeatureCache>(cfg.cache_dir);
}

ps::PcaModel fit_pca_on(const DatasetRef& d, const std::string& split, ps::Encoder& encoder, const Common& g,
                        const ps::Config& cfg, const ps::FeatureCache* cache, std::size_t token_cap,
                        const std::string& orient) {
  const auto records = ps::load_dataset(d.id, d.root, split);
  if (records.empty()) throw ps::DataError("no images in split '" + split + "' of " + d.root.string());
  std::vector<ps::GeometrySpec> specs;
  for (const auto& r : records) {
    const auto rgb = ps::read_rgb(r.image_path);
    specs.push_back(ps::plan_geometry(rgb.rows, rgb.cols, g.max_edge()));
  }
  ps::PcaFitOptions opts;
  opts.max_tokens = token_cap;
  opts.seed = cfg.seed;
  auto load = [&](std::size_t i) {
    return ps::prepare_image(records[i].id, ps::read_rgb(records[i].image_path), g.max_edge());
  };
  ps::logger()->info("fitting PCA on {} {} images of {}", records.size(), split, d.name);
  auto model = ps::fit_oriented_streaming(specs, load, encoder, opts, ps::parse_orient_mode(orient), cache);
  model.meta.fit_split = d.id + ":" + split;
  return model;
}

int run_segment(const Common& g, const SegmentArgs& a, bool ablation, const std::string& command) {
  const auto cfg = g.load();
  const auto d = resolve_dataset(a.dataset, a.root, cfg);
  const fs::path out = a.out;
  fs::create_directories(out);
  auto cache = make_cache(g, cfg);
  auto manifest = ps::make_manifest(command, {{"common", g.to_json()}, {"segment", a.to_json()}}, cfg);
  manifest["dataset_root"] = d.root.string();

  // fail early on unusable backends, before any work
  auto encoder = ps::make_encoder(a.encoder, cfg);
  ps::make_refiner(a.refiner, cfg);

  ps::PcaModel model;
  if (!a.pca_path.empty()) {
    model = ps::load_pca(a.pca_path);
  } else {
    model = fit_pca_on(d, a.fit_split, *encoder, g, cfg, cache.get(), a.token_cap, a.orient);
    ps::save_pca(model, out / "pca.model");
  }
  manifest["pca"] = model.meta;

  const auto records = ps::load_dataset(d.id, d.root, a.split);
  ps::SegmentOptions opts;
  opts.single_box = a.single_box;
  opts.connectivity = a.connectivity;
  opts.min_tokens = a.min_tokens;
  opts.threshold = a.threshold;
  opts.max_short_edge = g.max_edge();
  opts.debug = a.debug;
  const std::vector<bool> arms = ablation ? std::vector<bool>{false, true} : std::vector<bool>{a.use_mask_input};
  auto arm_dir = [&](bool mask_input) {
    return ablation ? out / "predictions" / (mask_input ? "mask-input" : "no-mask-input") : out / "predictions";
  };
  for (bool arm : arms) fs::create_directories(arm_dir(arm));

  struct Outcome {
    std::vector<ps::EvalRecord> records;
    std::string error;
    int code = 0;
  };
  std::vector<Outcome> outcomes(records.size());
  const json run_meta{{"encoder", a.encoder}, {"refiner", a.refiner}, {"fit_split", model.meta.fit_split}};
  struct Backends {
    std::unique_ptr<ps::Encoder> encoder;
    std::unique_ptr<ps::Refiner> refiner;
  };
  parallel_for(
      records.size(), cfg.workers,
      [&] { return Backends{ps::make_encoder(a.encoder, cfg), ps::make_refiner(a.refiner, cfg)}; },
      [&](Backends& b, std::size_t i) {
        const auto& rec = records[i];
        auto& o = outcomes[i];
        try {
          const auto sample = ps::load_sample(rec);
          const auto image = ps::prepare_image(rec.id, sample.rgb, opts.max_short_edge);
          auto grid = ps::detail::in_stage("extract", [&] {
            return std::move(ps::extract_batch(std::span<const ps::PreparedImage>(&image, 1), *b.encoder, cache.get()).front());
          });
          std::optional<std::vector<ps::BoxPrompt>> first_prompts;
          for (bool arm : arms) {
            auto arm_opts = opts;
            arm_opts.use_mask_input = arm;
            const auto result = ps::segment_prepared(image, grid, model, *b.refiner, arm_opts);
            if (!first_prompts) first_prompts = result.prompts;
            else if (*first_prompts != result.prompts)
              throw ps::DataError("[prompts] ablation arms produced different prompts");
            ps::write_mask_png(arm_dir(arm) / (rec.id + "_pred.png"), result.mask);
            if (a.debug && arm == arms.front()) {
              write_text(out / "debug" / (rec.id + ".json"), result.debug_json().dump(2));
              ps::write_mask_png(out / "debug" / (rec.id + "_tokens.png"), result.token_mask->values);
            }
            if (sample.gt) {
              const auto r = ps::iou_detail(result.mask, *sample.gt);
              ps::EvalRecord e{rec.id, d.id, method_for(a.encoder), r.value, arm, cfg.seed, r.both_empty, run_meta};
              o.records.push_back(e);
            }
          }
        } catch (const ps::Error& e) {
          o.error = e.what();
          o.code = e.exit_code();
        } catch (const std::exception& e) {
          o.error = e.what();
          o.code = 2;
        }
      });

  ErrorLog errors;
  std::vector<ps::EvalRecord> all;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!outcomes[i].error.empty()) errors.add(records[i].id, outcomes[i].error, outcomes[i].code);
    for (auto& r : outcomes[i].records) all.push_back(std::move(r));
  }
  const auto table = write_results(out, all);
  errors.write(out);
  manifest["images"] = records.size();
  manifest["failed"] = errors.entries.size();
  ps::write_manifest(out, manifest);
  std::cout << records.size() - errors.entries.size() << "/" << records.size() << " images segmented into "
            << out.string() << "\n";
  if (!table.empty()) std::cout << table;
  return errors.worst;
}

// ---------------------------------------------------------------- fit-pca / pca-hist

int run_fit_pca(const Common& g, const SegmentArgs& a) {
  const auto cfg = g.load();
  const auto d = resolve_dataset(a.dataset, a.root, cfg);
  auto cache = make_cache(g, cfg);
  auto encoder = ps::make_encoder(a.encoder, cfg);
  const auto model = fit_pca_on(d, a.fit_split, *encoder, g, cfg, cache.get(), a.token_cap, a.orient);
  fs::create_directories(a.out);
  ps::save_pca(model, fs::path(a.out) / "pca.model");
  auto manifest = ps::make_manifest("fit-pca", {{"common", g.to_json()}, {"segment", a.to_json()}}, cfg);
  manifest["pca"] = model.meta;
  manifest["explained_variance"] = std::vector<double>(model.explained_variance.data(),
                                                       model.explained_variance.data() + model.k());
  ps::write_manifest(a.out, manifest);
  std::cout << "PCA over " << model.meta.token_count << " tokens (" << model.meta.tokens_available
            << " available), orientation " << model.orientation << " [" << model.meta.orientation_source
            << ", corr " << model.meta.orientation_correlation << "] -> " << (fs::path(a.out) / "pca.model").string()
            << "\n";
  return 0;
}

int run_pca_hist(const Common& g, const SegmentArgs& a, const std::vector<std::string>& datasets, int bins) {
  const auto cfg = g.load();
  auto cache = make_cache(g, cfg);
  auto encoder = ps::make_encoder(a.encoder, cfg);
  std::map<std::string, ps::ScoreHistogram> hists;
  json fits = json::object();
  for (const auto& name : datasets) {
    const auto d = resolve_dataset(name, datasets.size() == 1 ? a.root : "", cfg);
    const auto model = a.pca_path.empty()
                           ? fit_pca_on(d, a.fit_split, *encoder, g, cfg, cache.get(), a.token_cap, a.orient)
                           : ps::load_pca(a.pca_path);
    fits[d.id] = model.meta;
    std::vector<ps::TokenMask> masks;
    for (const auto& r : ps::load_dataset(d.id, d.root, a.split)) {
      const auto image = ps::prepare_image(r.id, ps::read_rgb(r.image_path), g.max_edge());
      const auto grids = ps::extract_batch(std::span<const ps::PreparedImage>(&image, 1), *encoder, cache.get());
      masks.push_back(ps::classify(grids.front(), model, a.threshold));
    }
    if (masks.empty()) throw ps::DataError("no images in split '" + a.split + "' of " + d.root.string());
    hists[d.id] = ps::score_histogram(masks, bins);
  }
  const fs::path out = a.out;
  ps::plot::write_histogram_csv(out / "pca_hist.csv", hists);
  ps::plot::plot_histograms(out / "pca_hist.png", hists);
  auto manifest = ps::make_manifest("pca-hist", {{"common", g.to_json()}, {"segment", a.to_json()}, {"bins", bins}}, cfg);
  manifest["pca"] = fits;
  ps::write_manifest(out, manifest);
  for (const auto& [id, h] : hists) {
    std::uint64_t plant = 0;
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      if (h.edges[b] >= 0) plant += h.counts[b];
    std::cout << id << ": " << h.total << " tokens, " << plant << " in bins at or above 0\n";
  }
  return 0;
}

// ---------------------------------------------------------------- evaluate / report

int run_evaluate(const Common& g, const std::string& dataset, const std::string& root, const std::string& split,
                 const std::string& pred_dir, const std::string& method, const std::string& out_dir) {
  const auto cfg = g.load();
  const auto d = resolve_dataset(dataset, root, cfg);
  ErrorLog errors;
  std::vector<ps::EvalRecord> records;
  for (const auto& r : ps::load_dataset(d.id, d.root, split)) {
    try {
      const auto sample = ps::load_sample(r);
      if (!sample.gt) throw ps::DataError("no ground truth");
      const auto pred_path = fs::path(pred_dir) / (r.id + "_pred.png");
      if (!fs::exists(pred_path)) throw ps::DataError("missing prediction " + pred_path.string());
      const auto res = ps::iou_detail(ps::read_mask_png(pred_path), *sample.gt);
      records.push_back({r.id, d.id, method, res.value, false, cfg.seed, res.both_empty, {}});
    } catch (const ps::Error& e) {
      errors.add(r.id, e.what(), e.exit_code());
    }
  }
  fs::create_directories(out_dir);
  const auto table = write_results(out_dir, records);
  errors.write(out_dir);
  ps::write_manifest(out_dir, ps::make_manifest("evaluate",
                                                {{"common", g.to_json()},
                                                 {"dataset", dataset},
                                                 {"split", split},
                                                 {"predictions", pred_dir},
                                                 {"method", method}},
                                                cfg));
  std::cout << table;
  return errors.worst;
}

int run_report(const Common& g, const std::vector<std::string>& inputs, const std::string& group_by,
               const std::string& out_dir) {
  const auto cfg = g.load();
  std::vector<ps::EvalRecord> records;
  for (const auto& p : inputs) {
    auto r = ps::read_results_csv(p);
    records.insert(records.end(), r.begin(), r.end());
  }
  std::vector<ps::GroupField> fields;
  for (const auto& f : split_list(group_by)) {
    if (f == "dataset") fields.push_back(ps::GroupField::dataset);
    else if (f == "method") fields.push_back(ps::GroupField::method);
    else if (f == "mask_input" || f == "mask_input_used") fields.push_back(ps::GroupField::mask_input_used);
    else throw ps::UsageError("unknown group field '" + f + "' (dataset, method, mask_input)");
  }
  const auto stats = ps::aggregate(records, fields);
  const auto table = ps::render_table(stats);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    ps::write_summary_csv(fs::path(out_dir) / "summary.csv", stats);
    write_text(fs::path(out_dir) / "table.md", table);
    ps::write_manifest(out_dir, ps::make_manifest("report", {{"results", inputs}, {"group_by", group_by}}, cfg));
  }
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------- baselines

struct TrainArgs {
  std::string dataset;
  std::string root;
  std::string train_split = "train";
  std::string val_split = "val";
  std::string eval_split = "test";
  std::size_t subset = 0;
  int epochs = 100;
  int patience = 5;
  double lr = 1e-3;
  int batch = 8;
  int width = 64;
  int depth = 4;
  std::string out;

  ps::TrainConfig config(const Common& g, std::uint64_t seed) const {
    ps::TrainConfig c;
    c.learning_rate = lr;
    c.batch_size = batch;
    c.max_epochs = epochs;
    c.patience = patience;
    c.subset_size = subset;
    c.seed = seed;
    c.net.base_width = width;
    c.net.depth = depth;
    c.max_short_edge = g.max_edge();
    return c;
  }

  json to_json() const {
    return {{"dataset", dataset},   {"root", root},     {"train_split", train_split}, {"val_split", val_split},
            {"eval_split", eval_split}, {"subset", subset}, {"epochs", epochs},       {"patience", patience},
            {"lr", lr},             {"batch", batch},   {"width", width},             {"depth", depth},
            {"out", out}};
  }
};

void add_train_options(CLI::App* cmd, TrainArgs& a, bool single_dataset) {
  if (single_dataset) {
    cmd->add_option("--dataset", a.dataset, "dataset id, or mini-<id>")->required();
    cmd->add_option("--root", a.root, "dataset root (overrides config)");
  }
  cmd->add_option("--train-split", a.train_split)->capture_default_str();
  cmd->add_option("--val-split", a.val_split, "early-stopping split")->capture_default_str();
  cmd->add_option("--epochs", a.epochs)->capture_default_str();
  cmd->add_option("--patience", a.patience)->capture_default_str();
  cmd->add_option("--lr", a.lr)->capture_default_str();
  cmd->add_option("--batch", a.batch)->capture_default_str();
  cmd->add_option("--width", a.width, "U-Net base width")->capture_default_str();
  cmd->add_option("--depth", a.depth, "U-Net downsamplings")->capture_default_str();
  cmd->add_option("--out", a.out, "output directory")->required();
}

std::vector<ps::TrainingSample> training_samples(const DatasetRef& d, const std::string& split, int max_edge,
                                                 int multiple, bool optional = false) {
  std::vector<ps::TrainingSample> out;
  if (optional && !fs::is_directory(d.root / split)) return out;
  for (const auto& r : ps::load_dataset(d.id, d.root, split)) {
    const auto s = ps::load_sample(r);
    if (!s.gt) throw ps::DataError(r.id + ": training needs ground-truth masks");
    out.push_back(ps::make_training_sample(r.id, s.rgb, *s.gt, max_edge, multiple));
  }
  return out;
}

int run_train(const Common& g, const TrainArgs& a) {
  const auto cfg = g.load();
  const auto d = resolve_dataset(a.dataset, a.root, cfg);
  const auto tc = a.config(g, cfg.seed);
  ps::validate(tc);
  const int multiple = tc.net.multiple();
  const auto pool = training_samples(d, a.train_split, g.max_edge(), multiple);
  const auto val = training_samples(d, a.val_split, g.max_edge(), multiple, true);
  if (val.empty()) ps::logger()->warn("no '{}' split; early stopping falls back to the training loss", a.val_split);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_text(out / "config.json", json(tc).dump(2));
  auto result = ps::train(pool, val, tc);
  result.log.write_csv(out / "epochs.csv");
  ps::nn::save_unet(*result.model, out / "model.ckpt",
                {{"train_config", tc}, {"dataset", d.id}, {"best_epoch", result.log.best_epoch}});

  const auto test = training_samples(d, a.eval_split, g.max_edge(), multiple, true);
  std::vector<ps::EvalRecord> records;
  const std::string method = "unet@" + std::to_string(result.log.subset.size());
  for (const auto& s : test) {
    const auto r = ps::iou_detail(ps::predict(*result.model, s), s.gt);
    records.push_back({s.id, d.id, method, r.value, false, cfg.seed, r.both_empty, {}});
  }
  const auto table = write_results(out, records);
  auto manifest = ps::make_manifest("train-baseline", {{"common", g.to_json()}, {"train", a.to_json()}}, cfg);
  manifest["train_config"] = tc;
  manifest["subset"] = result.log.subset;
  manifest["best_epoch"] = result.log.best_epoch;
  manifest["epochs_run"] = result.log.epochs.size();
  manifest["stopped_early"] = result.log.stopped_early;
  manifest["stop_loss_source"] = result.log.stop_loss_source;
  ps::write_manifest(out, manifest);
  std::cout << "trained on " << result.log.subset.size() << " images, " << result.log.epochs.size()
            << " epochs (best " << result.log.best_epoch << ")\n"
            << table;
  return 0;
}

int run_scaling(const Common& g, const TrainArgs& a, std::string sizes_arg, std::size_t reps,
                std::optional<double> zero_shot, const std::string& zero_shot_results) {
  const auto cfg = g.load();
  const auto d = resolve_dataset(a.dataset, a.root, cfg);
  if (g.paper_scale) reps = 100;
  ps::ScalingOptions opts;
  opts.sizes.clear();
  for (const auto& s : split_list(sizes_arg)) opts.sizes.push_back(std::stoul(s));
  opts.repetitions = reps;
  opts.base = a.config(g, cfg.seed);
  opts.dataset_id = d.id;
  opts.workers = static_cast<unsigned>(cfg.workers);
  ps::validate(opts.base);
  const int multiple = opts.base.net.multiple();
  const auto pool = training_samples(d, a.train_split, g.max_edge(), multiple);
  const auto val = training_samples(d, a.val_split, g.max_edge(), multiple);

  if (!zero_shot && !zero_shot_results.empty()) {
    std::vector<double> ious;
    for (const auto& r : ps::read_results_csv(zero_shot_results))
      if (r.dataset_id == d.id && !r.mask_input_used) ious.push_back(r.iou);
    if (ious.empty()) throw ps::DataError("no zero-shot rows for " + d.id + " in " + zero_shot_results);
    zero_shot = ps::summarize(ious).mean;
  }
  const auto points = ps::scaling_experiment(pool, val, opts);
  const fs::path out = a.out;
  ps::write_curve_csv(out / "curve.csv", points);
  ps::plot::plot_curve(out / "curve.png", points, zero_shot, d.id + ": U-Net vs zero-shot");
  json crossover = nullptr;
  if (zero_shot) {
    const auto c = ps::find_crossover(points, *zero_shot);
    crossover = {{"zero_shot_mean", *zero_shot}, {"subset_size", c.subset_size ? json(*c.subset_size) : json(nullptr)},
                 {"description", c.describe()}};
    write_text(out / "crossover.json", crossover.dump(2));
  }
  auto manifest = ps::make_manifest("scaling-curve",
                                    {{"common", g.to_json()}, {"train", a.to_json()}, {"sizes", sizes_arg},
                                     {"repetitions", reps}, {"zero_shot_results", zero_shot_results}},
                                    cfg);
  manifest["train_config"] = opts.base;
  manifest["crossover"] = crossover;
  json seeds = json::object();
  for (auto s : opts.sizes)
    for (std::size_t r = 0; r < reps; ++r)
      seeds[std::to_string(s)].push_back(ps::run_seed(d.id, s, r, cfg.seed));
  manifest["run_seeds"] = seeds;
  ps::write_manifest(out, manifest);
  std::size_t failed = 0;
  for (const auto& p : points) {
    failed += p.failed;
    std::cout << "size " << p.subset_size << ": " << p.repetitions << " runs, mean IoU "
              << ps::plot::detail::fmt(p.mean_iou, 3) << " +- " << ps::plot::detail::fmt(p.std_iou, 3);
    if (p.failed) std::cout << " (" << p.failed << " failed)";
    std::cout << "\n";
  }
  if (zero_shot) std::cout << "crossover: " << crossover["description"].get<std::string>() << "\n";
  if (failed) std::cout << failed << " runs failed and were excluded\n";
  return 0;
}

int run_cross_eval(const Common& g, const TrainArgs& a, const std::vector<std::string>& datasets,
                   const std::vector<std::string>& checkpoints, bool no_train) {
  const auto cfg = g.load();
  std::map<std::string, fs::path> given;
  for (const auto& c : checkpoints) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) throw ps::UsageError("--checkpoint expects DATASET=PATH, got '" + c + "'");
    given[c.substr(0, eq)] = c.substr(eq + 1);
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  std::vector<DatasetRef> refs;
  for (const auto& name : datasets) refs.push_back(resolve_dataset(name, "", cfg));

  struct Model {
    std::shared_ptr<ps::nn::UNet> net;
    int max_edge = ps::kMaxShortEdge;
  };
  std::map<std::string, Model> models;
  json sources = json::object();
  for (const auto& d : refs) {
    auto it = given.find(d.name);
    if (it == given.end()) it = given.find(d.id);
    if (it != given.end()) {
      json meta;
      auto net = ps::nn::load_unet(it->second, &meta);
      const int edge = meta.contains("train_config") ? meta["train_config"].value("max_short_edge", ps::kMaxShortEdge)
                                                     : ps::kMaxShortEdge;
      models[d.id] = Model{std::shared_ptr<ps::nn::UNet>(std::move(net)), edge};
      sources[d.id] = {{"checkpoint", it->second.string()}};
    } else if (!no_train) {
      auto tc = a.config(g, ps::run_seed(d.id, 0, 0, cfg.seed));
      ps::validate(tc);
      const auto pool = training_samples(d, a.train_split, g.max_edge(), tc.net.multiple());
      const auto val = training_samples(d, a.val_split, g.max_edge(), tc.net.multiple(), true);
      ps::logger()->info("training U-Net on {} ({} images)", d.id, pool.size());
      auto result = ps::train(pool, val, tc);
      const auto ckpt = out / "models" / (d.id + ".ckpt");
      ps::nn::save_unet(*result.model, ckpt, {{"train_config", tc}, {"dataset", d.id}});
      result.log.write_csv(out / "models" / (d.id + "_epochs.csv"));
      models[d.id] = Model{std::shared_ptr<ps::nn::UNet>(std::move(result.model)), g.max_edge()};
      sources[d.id] = {{"trained", ckpt.string()}, {"seed", tc.seed}, {"best_epoch", result.log.best_epoch}};
    } else {
      sources[d.id] = "absent";
    }
  }

  std::map<std::string, ps::MaskPredictor> predictors;
  for (auto& [id, m] : models) {
    predictors[id] = [m](const ps::EvalSample& s) {
      return ps::predict(*m.net, ps::make_training_sample(s.id, s.rgb, s.gt, m.max_edge, m.net->config().multiple()));
    };
  }
  std::map<std::string, std::vector<ps::EvalSample>> targets;
  for (const auto& d : refs) {
    auto& list = targets[d.id];
    for (const auto& r : ps::load_dataset(d.id, d.root, a.eval_split)) {
      auto s = ps::load_sample(r);
      if (!s.gt) throw ps::DataError(r.id + ": cross evaluation needs ground truth");
      list.push_back({r.id, s.rgb, *s.gt});
    }
  }
  std::vector<std::string> source_ids;
  for (const auto& d : refs) source_ids.push_back(d.id);
  const auto matrix = ps::cross_eval(predictors, ps::ordered_datasets(source_ids), targets);
  ps::write_results_csv(out / "results.csv", matrix.records);
  write_text(out / "matrix.md", matrix.render());
  {
    std::ofstream csv(out / "matrix.csv");
    ps::csv::write_row(csv, {"train", "test", "mean", "std", "count"});
    for (std::size_t i = 0; i < matrix.sources.size(); ++i)
      for (std::size_t j = 0; j < matrix.targets.size(); ++j) {
        const auto& c = matrix.cells[i][j];
        ps::csv::write_row(csv, {matrix.sources[i], matrix.targets[j], c ? ps::detail::format_double(c->mean) : "",
                                 c ? ps::detail::format_double(c->std) : "", c ? std::to_string(c->count) : "0"});
      }
  }
  auto manifest = ps::make_manifest("cross-eval",
                                    {{"common", g.to_json()}, {"train", a.to_json()}, {"datasets", datasets},
                                     {"checkpoints", checkpoints}, {"no_train", no_train}},
                                    cfg);
  manifest["sources"] = sources;
  ps::write_manifest(out, manifest);
  std::cout << matrix.render();
  return 0;
}

// ---------------------------------------------------------------- datasets

int run_verify(const Common& g, const std::string& dataset, const std::string& root, bool quick) {
  const auto cfg = g.load();
  const auto d = resolve_dataset(dataset, root, cfg);
  const auto report = ps::verify_dataset(d.id, d.root, !quick);
  std::cout << d.id << " at " << d.root.string() << "\n";
  for (const auto& [split, n] : report.per_split) std::cout << "  " << split << ": " << n << " images\n";
  std::cout << "  total " << report.total << " (" << report.with_masks << " with masks), documented "
            << report.documented << (report.matches_documented() ? "" : " -- count differs") << "\n";
  for (const auto& p : report.problems) std::cout << "  problem: " << p << "\n";
  return report.ok() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot plant segmentation from ViT patch tokens, with evaluation and U-Net baselines"};
  app.require_subcommand(1);
  app.fallthrough();
  Common g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "run seed (overrides config)");
  app.add_option("--workers", g.workers, "parallel workers (overrides config)");
  app.add_flag("--no-cache", g.no_cache, "do not read or write the feature cache");
  app.add_option("--cache-dir", g.cache_dir, "feature cache directory");
  app.add_flag("--fast", g.fast, "cap the shortest edge at 518 instead of 1036");
  app.add_flag("--paper-scale", g.paper_scale, "full protocol sizes (100 scaling repetitions)");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");

  SegmentArgs seg, fit, abl, hist;
  auto* fit_cmd = app.add_subcommand("fit-pca", "fit and orient the token PCA on a split");
  add_segment_options(fit_cmd, fit, false);
  auto* seg_cmd = app.add_subcommand("segment", "zero-shot segmentation of a split");
  add_segment_options(seg_cmd, seg, false);
  auto* abl_cmd = app.add_subcommand("ablate-mask-input", "segment with and without the coarse mask prompt");
  add_segment_options(abl_cmd, abl, true);
  auto* hist_cmd = app.add_subcommand("pca-hist", "histograms of oriented first-component scores");
  add_segment_options(hist_cmd, hist, false);
  std::string hist_datasets;
  int bins = 60;
  hist_cmd->add_option("--datasets", hist_datasets, "comma list, instead of --dataset");
  hist_cmd->add_option("--bins", bins)->check(CLI::PositiveNumber)->capture_default_str();
  // --dataset is optional when --datasets is given
  hist_cmd->get_option("--dataset")->required(false);

  std::string ev_dataset, ev_root, ev_split = "test", ev_pred, ev_method = "predictions", ev_out;
  auto* ev_cmd = app.add_subcommand("evaluate", "IoU of saved predictions against ground truth");
  ev_cmd->add_option("--dataset", ev_dataset)->required();
  ev_cmd->add_option("--root", ev_root);
  ev_cmd->add_option("--split", ev_split)->capture_default_str();
  ev_cmd->add_option("--predictions", ev_pred, "directory of <id>_pred.png")->required();
  ev_cmd->add_option("--method", ev_method)->capture_default_str();
  ev_cmd->add_option("--out", ev_out)->required();

  std::vector<std::string> rep_inputs;
  std::string rep_group = "dataset,method,mask_input", rep_out;
  auto* rep_cmd = app.add_subcommand("report", "tables from result CSVs");
  rep_cmd->add_option("--results", rep_inputs, "results.csv files")->required();
  rep_cmd->add_option("--group-by", rep_group)->capture_default_str();
  rep_cmd->add_option("--out", rep_out, "also write summary.csv and table.md here");

  TrainArgs tr, sc, cx;
  auto* tr_cmd = app.add_subcommand("train-baseline", "train one U-Net baseline");
  add_train_options(tr_cmd, tr, true);
  tr_cmd->add_option("--subset", tr.subset, "training images to sample (0: all)")->capture_default_str();
  tr_cmd->add_option("--eval-split", tr.eval_split)->capture_default_str();

  auto* sc_cmd = app.add_subcommand("scaling-curve", "U-Net IoU against training-set size");
  add_train_options(sc_cmd, sc, true);
  std::string sizes = "2,4,8,16,32,64", zs_results;
  std::size_t reps = 5;
  std::optional<double> zs_mean;
  sc_cmd->add_option("--sizes", sizes, "ascending comma list")->capture_default_str();
  sc_cmd->add_option("--repetitions", reps)->capture_default_str();
  sc_cmd->add_option("--zero-shot-mean", zs_mean, "reference IoU for the crossover");
  sc_cmd->add_option("--zero-shot-results", zs_results, "results.csv to take the reference mean from");

  auto* cx_cmd = app.add_subcommand("cross-eval", "train on each dataset, test on every dataset");
  add_train_options(cx_cmd, cx, false);
  std::string cx_datasets = "phenobench,appletree,plantgrowth,cvppp2017";
  std::vector<std::string> cx_ckpts;
  bool cx_no_train = false;
  cx_cmd->add_option("--datasets", cx_datasets, "comma list")->capture_default_str();
  cx_cmd->add_option("--checkpoint", cx_ckpts, "DATASET=PATH, repeatable");
  cx_cmd->add_flag("--no-train", cx_no_train, "mark sources without a checkpoint absent");
  cx_cmd->add_option("--eval-split", cx.eval_split)->capture_default_str();

  auto* ds_cmd = app.add_subcommand("datasets", "dataset utilities");
  ds_cmd->require_subcommand(1);
  std::string ds_dataset, ds_root;
  bool quick = false;
  auto* verify_cmd = ds_cmd->add_subcommand("verify", "check layout, pairing and counts");
  verify_cmd->add_option("--dataset", ds_dataset)->required();
  verify_cmd->add_option("--root", ds_root);
  verify_cmd->add_flag("--quick", quick, "skip decoding every file");
  auto* list_cmd = ds_cmd->add_subcommand("list", "known datasets and layouts");
  std::string fx_dataset, fx_root;
  int fx_train = 8, fx_val = 4, fx_test = 4, fx_h = 84, fx_w = 112;
  auto* fx_cmd = ds_cmd->add_subcommand("make-fixture", "write a synthetic look-alike in a dataset's layout");
  fx_cmd->add_option("--dataset", fx_dataset)->required();
  fx_cmd->add_option("--root", fx_root)->required();
  fx_cmd->add_option("--train", fx_train)->capture_default_str();
  fx_cmd->add_option("--val", fx_val)->capture_default_str();
  fx_cmd->add_option("--test", fx_test)->capture_default_str();
  fx_cmd->add_option("--height", fx_h)->capture_default_str();
  fx_cmd->add_option("--width", fx_w)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ps::ErrorKind::usage);
  }
  ps::logger()->set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*fit_cmd) return run_fit_pca(g, fit);
    if (*seg_cmd) return run_segment(g, seg, false, "segment");
    if (*abl_cmd) return run_segment(g, abl, true, "ablate-mask-input");
    if (*hist_cmd) {
      auto list = split_list(hist_datasets);
      if (list.empty() && !hist.dataset.empty()) list.push_back(hist.dataset);
      if (list.empty()) throw ps::UsageError("pca-hist needs --dataset or --datasets");
      return run_pca_hist(g, hist, list, bins);
    }
    if (*ev_cmd) return run_evaluate(g, ev_dataset, ev_root, ev_split, ev_pred, ev_method, ev_out);
    if (*rep_cmd) return run_report(g, rep_inputs, rep_group, rep_out);
    if (*tr_cmd) return run_train(g, tr);
    if (*sc_cmd) return run_scaling(g, sc, sizes, reps, zs_mean, zs_results);
    if (*cx_cmd) return run_cross_eval(g, cx, split_list(cx_datasets), cx_ckpts, cx_no_train);
    if (*verify_cmd) return run_verify(g, ds_dataset, ds_root, quick);
    if (*list_cmd) {
      for (const auto& d : ps::known_datasets())
        std::cout << d.id << " (" << d.name << ", " << d.documented_images << " images documented)\n  " << d.layout
                  << "\n";
      return 0;
    }
    if (*fx_cmd) {
      const auto cfg = g.load();
      const auto d = resolve_dataset(fx_dataset, fx_root, cfg);
      ps::make_fixture(d.id, d.root, fx_train, fx_val, fx_test, cfg.seed, fx_h, fx_w);
      std::cout << "wrote " << fx_train + fx_val + fx_test << " " << d.id << " images under " << d.root.string()
                << "\n";
      return 0;
    }
  } catch (const ps::Error& e) {
    ps::logger()->error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    ps::logger()->error("{}", e.what());
    return static_cast<int>(ps::ErrorKind::data);
  }
  return static_cast<int>(ps::ErrorKind::usage);
}
