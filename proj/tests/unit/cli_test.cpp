#include <gtest/gtest.h>

#include <sstream>

#include "json.hpp"

#include "fundus/checkpoint.hpp"
#include "fundus/error.hpp"
#include "fundus/io.hpp"
#include "fundus_cli.hpp"
#include "temp_dir.hpp"

using namespace fundus;
using fundus::oracle::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return io::read_file(p); }

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// Synthetic corpus plus a short run config next to it.
void write_corpus_and_config(const TempDir& dir, std::size_t count, const std::string& extra = "") {
  ASSERT_EQ(run({"synth", "--out", (dir / "corpus").string(), "--count", std::to_string(count), "--seed", "3"}).code,
            0);
  io::write_file_atomic(dir / "run.json", "{\"schema_version\": 1, \"model\": \"cnn6-tiny\", "
                                          "\"manifest\": \"corpus/manifest.csv\", \"epochs\": 1, \"batch_size\": 4" +
                                              extra + "}");
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  const auto r = run({"split", "--ratio", "0.5"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_TRUE(contains(r.err, "--manifest")) << r.err;
}

TEST(Cli, PreprocessResizesAndIsIdempotent) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--out", (dir / "raw").string(), "--count", "4", "--size", "40"}).code, 0);
  auto r = run({"preprocess", "--in", (dir / "raw").string(), "--out", (dir / "a").string(), "--size", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = data::load_manifest(dir / "a" / "manifest.csv");
  ASSERT_EQ(manifest.records.size(), 4u);
  for (const auto& rec : manifest.records) {
    const auto img = data::load_ppm(dir / "a" / rec.path);
    EXPECT_EQ(img.width, 32u);
    EXPECT_EQ(img.height, 32u);
  }
  r = run({"preprocess", "--in", (dir / "a").string(), "--out", (dir / "b").string(), "--size", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& rec : manifest.records) EXPECT_EQ(bytes(dir / "a" / rec.path), bytes(dir / "b" / rec.path));
  EXPECT_EQ(bytes(dir / "a" / "manifest.csv"), bytes(dir / "b" / "manifest.csv"));

  fs::create_directories(dir / "empty");
  r = run({"preprocess", "--in", (dir / "empty").string(), "--out", (dir / "c").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_TRUE(contains(r.err, "no manifest records")) << r.err;
}

TEST(Cli, PreprocessNamesUnreadableImage) {
  TempDir dir;
  fs::create_directories(dir / "raw");
  io::write_file_atomic(dir / "raw" / "manifest.csv", std::string("path,label\nlost.ppm,healthy\n"));
  const auto r = run({"preprocess", "--in", (dir / "raw").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_TRUE(contains(r.err, "lost.ppm")) << r.err;
}

TEST(Cli, SplitCountsAndStability) {
  TempDir dir;
  data::Manifest m;
  for (int i = 0; i < 299; ++i) {
    m.records.push_back({"h" + std::to_string(i) + ".ppm", data::Label::healthy});
    m.records.push_back({"m" + std::to_string(i) + ".ppm", data::Label::macular_degeneration});
  }
  data::save_manifest(dir / "all.csv", m);
  auto r = run({"split", "--manifest", (dir / "all.csv").string(), "--ratio", "0.5", "--seed", "7", "--out",
                (dir / "s1").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto train = data::load_manifest(dir / "s1" / "train.csv");
  const auto test = data::load_manifest(dir / "s1" / "test.csv");
  EXPECT_EQ(train.count(data::Label::healthy), 150u);
  EXPECT_EQ(train.count(data::Label::macular_degeneration), 150u);
  EXPECT_EQ(test.count(data::Label::healthy), 149u);
  EXPECT_EQ(test.count(data::Label::macular_degeneration), 149u);
  // Paths are re-anchored at the output directory.
  EXPECT_EQ(train.records[0].path.rfind("../", 0), 0u) << train.records[0].path;
  const auto meta = nlohmann::json::parse(io::read_text_file(dir / "s1" / "split.json"));
  EXPECT_EQ(meta.at("seed").get<int>(), 7);

  ASSERT_EQ(run({"split", "--manifest", (dir / "all.csv").string(), "--ratio", "0.5", "--seed", "7", "--out",
                 (dir / "s2").string()})
                .code,
            0);
  for (const char* f : {"train.csv", "test.csv", "split.json"}) EXPECT_EQ(bytes(dir / "s1" / f), bytes(dir / "s2" / f));

  EXPECT_EQ(run({"split", "--manifest", (dir / "all.csv").string(), "--ratio", "1.0", "--out", (dir / "s3").string()})
                .code,
            cli::kExitUsage);
  data::Manifest one;
  one.records = {{"a.ppm", data::Label::healthy}, {"b.ppm", data::Label::healthy}};
  data::save_manifest(dir / "one.csv", one);
  r = run({"split", "--manifest", (dir / "one.csv").string(), "--out", (dir / "s4").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_TRUE(contains(r.err, "both classes")) << r.err;
}

TEST(Cli, RunConfigReportsEveryViolation) {
  TempDir dir;
  io::write_file_atomic(dir / "bad.json", std::string("{\"schema_version\": 2, \"model\": \"vgg\", \"epochs\": 0, "
                                                      "\"manifest\": \"none.csv\", \"lr\": -1, \"colour\": true}"));
  const auto r = run({"train", "--config", (dir / "bad.json").string(), "--out", (dir / "m.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  for (const char* what : {"schema_version", "vgg", "epochs", "none.csv", "lr", "colour"})
    EXPECT_TRUE(contains(r.err, what)) << what << "\n" << r.err;

  try {
    cli::parse_run_config("{\"schema_version\": 1, \"epochs\": \"ten\"}", dir.path());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.violations().size(), 3u);  // model, manifest, epochs type
  }
  EXPECT_THROW(cli::parse_run_config("[1, 2]", dir.path()), ConfigError);
  EXPECT_THROW(cli::parse_run_config("{", dir.path()), ConfigError);
}

TEST(Cli, TrainEvalGradcamPipeline) {
  TempDir dir;
  write_corpus_and_config(dir, 8);
  auto r = run({"train", "--config", (dir / "run.json").string(), "--out", (dir / "out" / "m.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "epoch 1/1"));
  const auto log = nlohmann::json::parse(io::read_text_file(dir / "out" / "m.ckpt.log.json"));
  EXPECT_EQ(log.at("log").size(), 1u);
  EXPECT_EQ(log.at("batch_size").get<int>(), 4);

  // Same inputs, same checkpoint bytes.
  ASSERT_EQ(run({"train", "--config", (dir / "run.json").string(), "--out", (dir / "again.ckpt").string()}).code, 0);
  EXPECT_EQ(bytes(dir / "out" / "m.ckpt"), bytes(dir / "again.ckpt"));

  r = run({"eval", "--ckpt", (dir / "out" / "m.ckpt").string(), "--split", (dir / "corpus" / "manifest.csv").string(),
           "--report", (dir / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "Accuracy"));
  const auto report = train::report_from_json(io::read_text_file(dir / "report.json"));
  EXPECT_EQ(report.confusion.total(), 8u);
  EXPECT_EQ(report.model, "cnn6-tiny");

  const std::string image = (dir / "corpus" / "images" / "blob_0000.ppm").string();
  const std::string prefix = (dir / "cam" / "x").string();
  r = run({"gradcam", "--ckpt", (dir / "out" / "m.ckpt").string(), "--image", image, "--out", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "predicted class"));
  EXPECT_TRUE(contains(r.out, "confidence"));
  const auto heat = data::read_pgm(bytes(prefix + ".heat.pgm"));
  EXPECT_EQ(heat.width, 64u);
  const auto first_overlay = bytes(prefix + ".overlay.ppm");
  ASSERT_EQ(run({"gradcam", "--ckpt", (dir / "out" / "m.ckpt").string(), "--image", image, "--out", prefix}).code, 0);
  EXPECT_EQ(bytes(prefix + ".overlay.ppm"), first_overlay);

  r = run({"gradcam", "--ckpt", (dir / "out" / "m.ckpt").string(), "--image", image, "--class", "1", "--layer",
           "conv4_relu", "--out", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "explained class 1 (macular_degeneration) at layer conv4_relu")) << r.out;

  r = run({"gradcam", "--ckpt", (dir / "out" / "m.ckpt").string(), "--image", image, "--layer", "conv9", "--out",
           prefix});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_TRUE(contains(r.err, "conv6_relu")) << r.err;
}

TEST(Cli, GradcamOfZeroHeadIsAllZero) {
  TempDir dir;
  auto model = models::Model::initialize(models::preset("cnn6-tiny"), 1);
  for (auto& v : model.params().at("logits.weight").values()) v = 0.0;
  io::write_checkpoint(dir / "zero.ckpt", model);
  data::save_ppm(dir / "img.ppm", data::Image(64, 64, 90));
  const auto r = run({"gradcam", "--ckpt", (dir / "zero.ckpt").string(), "--image", (dir / "img.ppm").string(),
                      "--out", (dir / "z").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto p : data::read_pgm(bytes(dir / "z.heat.pgm")).pixels) EXPECT_EQ(p, 0);

  data::save_ppm(dir / "small.ppm", data::Image(32, 32));
  EXPECT_EQ(run({"gradcam", "--ckpt", (dir / "zero.ckpt").string(), "--image", (dir / "small.ppm").string(), "--out",
                 (dir / "z").string()})
                .code,
            cli::kExitData);
}

TEST(Cli, CorruptCheckpointIsADataError) {
  TempDir dir;
  write_corpus_and_config(dir, 2);
  auto ckpt = io::save_checkpoint(models::Model::initialize(models::preset("cnn6-tiny"), 1));
  ckpt[0] = 'X';
  io::write_file_atomic(dir / "bad.ckpt", ckpt);
  const auto r = run({"eval", "--ckpt", (dir / "bad.ckpt").string(), "--split",
                      (dir / "corpus" / "manifest.csv").string(), "--report", (dir / "r.json").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_TRUE(contains(r.err, "bad magic")) << r.err;
  EXPECT_FALSE(fs::exists(dir / "r.json"));
}

TEST(Cli, DivergentTrainingExitsWithNumericCode) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--out", (dir / "corpus").string(), "--count", "4", "--size", "16"}).code, 0);
  // Conv, GAP and dense only: one huge step pushes the logits past the double
  // range, which no normalization layer can absorb.
  models::ArchitectureConfig arch;
  arch.name = "shallow";
  arch.input_shape = {3, 16, 16};
  arch.layers = {nn::conv2d_layer("conv", 2, 3), nn::global_avg_pool_layer("gap"), nn::dense_layer("logits", 2)};
  arch.tap = "conv";
  io::write_file_atomic(dir / "arch.json", models::architecture_to_json(arch));
  io::write_file_atomic(dir / "run.json", std::string("{\"schema_version\": 1, \"architecture\": \"arch.json\", "
                                                      "\"manifest\": \"corpus/manifest.csv\", \"epochs\": 3, "
                                                      "\"batch_size\": 4, \"lr\": 1e300}"));
  const auto r = run({"train", "--config", (dir / "run.json").string(), "--out", (dir / "m.ckpt").string()});
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.out << r.err;
  EXPECT_TRUE(contains(r.err, "non-finite")) << r.err;
  EXPECT_FALSE(fs::exists(dir / "m.ckpt"));
}
