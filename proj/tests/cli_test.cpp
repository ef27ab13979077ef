// Drives the plantseg binary end to end on the committed mini fixtures.

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "plantseg/csv.hpp"
#include "plantseg/datasets.hpp"
#include "plantseg/image_io.hpp"

namespace plantseg {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string output;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    static int n = 0;
    dir_ = fs::temp_directory_path() / ("plantseg-cli-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const auto log = dir_ / "stdout.txt";
    const std::string cmd = std::string(PLANTSEG_CLI) + " --cache-dir " + (dir_ / "cache").string() + " " + args +
                            " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  static std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

const std::string kSegment = "segment --encoder synthetic --refiner trivial --dataset mini-fixture";

TEST_F(CliTest, SegmentWritesPredictionsAndManifest) {
  const auto r = run(kSegment + " --out " + path("run").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto records = load_dataset("phenobench", fs::path(PLANTSEG_SOURCE_DIR) / "data/mini/phenobench", "test");
  ASSERT_FALSE(records.empty());
  for (const auto& rec : records) {
    const auto p = path("run") / "predictions" / (rec.id + "_pred.png");
    ASSERT_TRUE(fs::exists(p)) << p;
    const cv::Mat raw = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
    ASSERT_EQ(raw.type(), CV_8UC1);
    EXPECT_EQ(cv::countNonZero((raw != 0) & (raw != 255)), 0);
  }
  nlohmann::json manifest;
  std::ifstream(path("run") / "manifest.json") >> manifest;
  EXPECT_EQ(manifest["command"], "segment");
  EXPECT_EQ(manifest["arguments"]["segment"]["fit_split"], "val");
  EXPECT_TRUE(manifest.contains("seed"));
  EXPECT_TRUE(manifest.contains("version"));
  EXPECT_TRUE(fs::exists(path("run") / "pca.model"));
  EXPECT_TRUE(fs::exists(path("run") / "results.csv"));
}

TEST_F(CliTest, EvaluatingGroundTruthGivesOne) {
  const auto root = fs::path(PLANTSEG_SOURCE_DIR) / "data/mini/phenobench";
  for (const auto& rec : load_dataset("phenobench", root, "test"))
    write_mask_png(path("gt") / (rec.id + "_pred.png"), *load_sample(rec).gt);
  const auto r = run("evaluate --dataset mini-fixture --predictions " + path("gt").string() + " --out " +
                     path("eval").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("1.000 ± 0.000"), std::string::npos) << r.output;
}

TEST_F(CliTest, MissingPredictionIsADataError) {
  fs::create_directories(path("empty"));
  const auto r = run("evaluate --dataset mini-fixture --predictions " + path("empty").string() + " --out " +
                     path("eval").string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_TRUE(fs::exists(path("eval") / "errors.log"));
}

TEST_F(CliTest, AblationRowsDifferOnlyInMaskInput) {
  const auto r = run("ablate-mask-input --encoder synthetic --refiner trivial --dataset mini-fixture --out " +
                     path("abl").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = csv::read_file(path("abl") / "results.csv");
  ASSERT_FALSE(rows.empty());
  ASSERT_EQ(rows[0], (csv::Row{"image_id", "dataset", "method", "iou", "mask_input_used", "seed", "both_empty"}));
  std::map<std::string, std::vector<csv::Row>> by_image;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 7u);
    by_image[rows[i][0]].push_back(rows[i]);
  }
  ASSERT_EQ(by_image.size(), 4u);
  for (const auto& [id, pair] : by_image) {
    ASSERT_EQ(pair.size(), 2u) << id;
    EXPECT_EQ(pair[0][1], pair[1][1]);
    EXPECT_EQ(pair[0][2], pair[1][2]);
    EXPECT_EQ(pair[0][5], pair[1][5]);
    EXPECT_NE(pair[0][4], pair[1][4]);
  }
  for (const char* arm : {"mask-input", "no-mask-input"})
    EXPECT_TRUE(fs::exists(path("abl") / "predictions" / arm / "test_000_pred.png"));
}

TEST_F(CliTest, WorkerCountDoesNotChangeOutputs) {
  ASSERT_EQ(run("--workers 1 --no-cache " + kSegment + " --out " + path("w1").string()).code, 0);
  ASSERT_EQ(run("--workers 3 " + kSegment + " --out " + path("w3").string()).code, 0);
  // second run reads the cache written by the third
  ASSERT_EQ(run("--workers 2 " + kSegment + " --out " + path("w2").string()).code, 0);
  for (const auto& e : fs::directory_iterator(path("w1") / "predictions")) {
    const auto name = e.path().filename();
    EXPECT_EQ(read_file(e.path()), read_file(path("w3") / "predictions" / name)) << name;
    EXPECT_EQ(read_file(e.path()), read_file(path("w2") / "predictions" / name)) << name;
  }
  EXPECT_EQ(read_file(path("w1") / "results.csv"), read_file(path("w3") / "results.csv"));
  EXPECT_EQ(read_file(path("w1") / "pca.model"), read_file(path("w2") / "pca.model"));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("segment --dataset mini-fixture").code, 1);  // --out missing
  EXPECT_EQ(run("segment --encoder synthetic --refiner trivial --dataset nope --out " + path("x").string()).code, 1);
  EXPECT_EQ(run("--help").code, 0);
  ::unsetenv("PLANTSEG_DINOV2_WEIGHTS");
  const auto backend = run("segment --encoder dinov2-base --refiner trivial --dataset mini-fixture --out " +
                           path("x").string());
  EXPECT_EQ(backend.code, 3);
  EXPECT_NE(backend.output.find("PLANTSEG_DINOV2_WEIGHTS"), std::string::npos);
  EXPECT_EQ(run("segment --encoder synthetic --refiner trivial --dataset phenobench --root /nonexistent --out " +
                path("x").string())
                .code,
            2);
}

TEST_F(CliTest, VerifyAndReport) {
  for (const char* d : {"mini-phenobench", "mini-appletree", "mini-plantgrowth", "mini-cvppp2017"})
    EXPECT_EQ(run(std::string("datasets verify --dataset ") + d).code, 0) << d;
  ASSERT_EQ(run("ablate-mask-input --encoder synthetic --refiner trivial --dataset mini-fixture --out " +
                path("abl").string())
                .code,
            0);
  const auto r = run("report --results " + (path("abl") / "results.csv").string() + " --group-by method --out " +
                     path("rep").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("synthetic-zeroshot"), std::string::npos);
  EXPECT_EQ(r.output.find("with mask input"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("rep") / "table.md"));
}

TEST_F(CliTest, TrainBaselineLogsAndCheckpoint) {
  const auto r = run("train-baseline --dataset mini-appletree --epochs 3 --patience 2 --width 4 --depth 1 --out " +
                     path("tr").string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"model.ckpt", "epochs.csv", "config.json", "results.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(path("tr") / f)) << f;
  const auto m = run("cross-eval --datasets mini-appletree,mini-cvppp2017 --no-train --checkpoint mini-appletree=" +
                     (path("tr") / "model.ckpt").string() + " --out " + path("cx").string());
  ASSERT_EQ(m.code, 0) << m.output;
  EXPECT_NE(m.output.find("absent"), std::string::npos);
}

}  // namespace
}  // namespace plantseg
