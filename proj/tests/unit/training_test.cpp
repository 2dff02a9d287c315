#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fundus/error.hpp"
#include "fundus/kernels.hpp"
#include "fundus/synthetic.hpp"
#include "fundus/training.hpp"
#include "oracles.hpp"

using namespace fundus;
using namespace fundus::train;

namespace {

models::ArchitectureConfig small_net() {
  models::ArchitectureConfig c;
  c.name = "small";
  c.input_shape = {3, 16, 16};
  c.layers = {nn::conv2d_layer("conv", 4, 3), nn::batchnorm_layer("bn"), nn::relu_layer("relu"),
              nn::maxpool2d_layer("pool", 2, 2), nn::global_avg_pool_layer("gap"), nn::dense_layer("logits", 2)};
  c.tap = "relu";
  return c;
}

std::vector<data::Sample> blob_samples(std::size_t n, std::uint64_t seed) {
  data::BlobOptions o;
  o.size = 16;
  o.sigma = 2.0;
  std::vector<data::Sample> out;
  for (auto& b : data::make_blob_corpus(n, seed, o))
    out.push_back({std::move(b.image), b.label, "blob" + std::to_string(out.size()) + ".ppm"});
  return out;
}

double train_mode_loss(const models::Model& m, const Tensor& x, std::span<const std::size_t> labels) {
  const auto out = models::model_forward(m, x, {nn::Mode::train, std::nullopt, false});
  return nn::softmax_cross_entropy(out.logits, labels).loss;
}

}  // namespace

TEST(EpochSeed, DerivationAndSpread) {
  EXPECT_EQ(epoch_seed(42, 0), mix(42 ^ 0x9E3779B97F4A7C15ULL));
  EXPECT_EQ(epoch_seed(42, 2), mix(42 ^ (0x9E3779B97F4A7C15ULL * 3)));
  EXPECT_NE(epoch_seed(42, 0), epoch_seed(42, 1));
  EXPECT_NE(epoch_seed(42, 0), epoch_seed(43, 0));
}

TEST(Argmax, TiesGoToTheLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0u);
  EXPECT_EQ(argmax(std::vector<double>{-1.0, 2.0, 2.0}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{3.0}), 0u);
}

TEST(Train, SameConfigGivesIdenticalLogsAndWeights) {
  const auto samples = blob_samples(10, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;  // 10 = 4 + 4 + 2, the partial batch is kept
  auto a = models::Model::initialize(small_net(), 3);
  auto b = models::Model::initialize(small_net(), 3);
  std::vector<EpochStats> seen;
  const auto la = train::train(a, samples, cfg, [&](const EpochStats& s) { seen.push_back(s); });
  const auto lb = train::train(b, samples, cfg);
  ASSERT_EQ(la.epochs.size(), 2u);
  EXPECT_EQ(la.epochs, lb.epochs);
  EXPECT_EQ(seen, la.epochs);
  EXPECT_EQ(la.epochs[0].epoch, 1u);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_EQ(a.params().entries()[i].value, b.params().entries()[i].value);
  for (const auto& e : la.epochs) {
    EXPECT_TRUE(std::isfinite(e.loss));
    // Accuracy is a count over 10 examples.
    EXPECT_NEAR(e.accuracy * 10.0, std::round(e.accuracy * 10.0), 1e-12);
  }

  cfg.seed = 43;
  auto c = models::Model::initialize(small_net(), 3);
  EXPECT_NE(train::train(c, samples, cfg).epochs, la.epochs);
}

TEST(Train, RejectsBadConfigurationsAndData) {
  const auto samples = blob_samples(4, 2);
  auto m = models::Model::initialize(small_net(), 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train::train(m, samples, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  EXPECT_THROW(train::train(m, samples, cfg), std::invalid_argument);
  cfg.batch_size = 2;
  EXPECT_THROW(train::train(m, std::span<const data::Sample>{}, cfg), std::invalid_argument);

  auto wrong = samples;
  wrong[1].image = data::Image(8, 8);
  try {
    train::train(m, wrong, cfg);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("blob1.ppm"), std::string::npos) << e.what();
  }
}

TEST(Train, NonFiniteLossIsANumericError) {
  const auto samples = blob_samples(4, 3);
  auto m = models::Model::initialize(small_net(), 1);
  m.params().at("logits.weight")[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train::train(m, samples, cfg), NumericError);
}

TEST(TrainStep, SmallStepLowersThatExamplesLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = models::Model::initialize(small_net(), seed);
    Rng rng(seed + 100);
    const Tensor x = oracle::random_tensor({1, 3, 16, 16}, rng);
    const std::vector<std::size_t> label{seed % 2};
    AdamState state;
    state.config.lr = 1e-4;
    const double before = train_step(m, x, label, state);
    EXPECT_NEAR(before, train_mode_loss(models::Model::initialize(small_net(), seed), x, label), 1e-12);
    EXPECT_LT(train_mode_loss(m, x, label), before) << seed;
  }
}

TEST(Evaluate, CountsArePureAndSumToTheSetSize) {
  const auto samples = blob_samples(9, 4);
  const auto m = models::Model::initialize(small_net(), 5);
  const auto cm = evaluate(m, samples, 4);
  EXPECT_EQ(cm.total(), 9u);
  EXPECT_EQ(evaluate(m, samples, 4), cm);
  EXPECT_EQ(evaluate(m, samples, 1), cm);  // batching does not change inference

  const auto preds = predict(m, samples);
  ConfusionMatrix manual;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool md = samples[i].label == data::Label::macular_degeneration;
    if (md) (preds[i] == 1 ? manual.tp : manual.fn)++;
    else (preds[i] == 1 ? manual.fp : manual.tn)++;
  }
  EXPECT_EQ(cm, manual);
}

TEST(Evaluate, ConstantPredictors) {
  std::vector<data::Sample> samples;
  for (int i = 0; i < 37; ++i) samples.push_back({data::Image(16, 16), data::Label::macular_degeneration, ""});
  for (int i = 0; i < 27; ++i) samples.push_back({data::Image(16, 16), data::Label::healthy, ""});
  auto m = models::Model::initialize(small_net(), 6);
  // Zero dense weights make the logits equal to the bias.
  for (auto& v : m.params().at("logits.weight").values()) v = 0.0;
  auto& bias = m.params().at("logits.bias");
  bias[0] = 0.0;
  bias[1] = 1.0;
  EXPECT_EQ(evaluate(m, samples), (ConfusionMatrix{37, 0, 27, 0}));
  bias[1] = 0.0;  // tie: class 0 wins
  EXPECT_EQ(evaluate(m, samples), (ConfusionMatrix{0, 27, 0, 37}));
}

TEST(TrainLogJson, CarriesConfigAndEpochs) {
  TrainLog log;
  log.model = "small";
  log.config.epochs = 2;
  log.epochs = {{1, 0.7, 0.5}, {2, 0.6, 0.75}};
  const std::string j = train_log_to_json(log);
  for (const char* key : {"\"model\"", "\"batch_size\"", "\"seed\"", "\"lr\"", "\"augmentation\"", "\"log\"",
                          "\"accuracy\"", "0.75"})
    EXPECT_NE(j.find(key), std::string::npos) << key;
}
