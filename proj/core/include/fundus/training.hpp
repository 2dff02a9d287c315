#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fundus/dataset.hpp"
#include "fundus/metrics.hpp"
#include "fundus/model.hpp"
#include "fundus/optimizer.hpp"
#include "fundus/transforms.hpp"

namespace fundus::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;
  double lr = 1e-3;
  bool augment = true;
  data::AugmentPolicy augmentation;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over examples
  double accuracy = 0.0;  // on the augmented training batches

  bool operator==(const EpochStats&) const = default;
};

struct TrainLog {
  std::string model;
  TrainConfig config;
  std::vector<EpochStats> epochs;
};

// Seed of epoch e (0-based): the shuffle stream, and the base for per-record
// augmentation streams Rng(mix(epoch_seed ^ record_index)).
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch training with softmax cross-entropy and Adam. The last partial
// batch is kept. Throws NumericError when the loss stops being finite and
// DataError when an image does not match the model input.
TrainLog train(models::Model& model, std::span<const data::Sample> samples, const TrainConfig& config,
               const EpochCallback& on_epoch = {});

// One forward/backward/Adam step on a prepared batch; returns the batch loss.
double train_step(models::Model& model, const Tensor& batch, std::span<const std::size_t> labels, AdamState& state);

// Argmax class per image (ties resolve to class 0), inference mode, no augmentation.
std::vector<std::size_t> predict(const models::Model& model, std::span<const data::Sample> samples,
                                 std::size_t batch_size = 16);

ConfusionMatrix evaluate(const models::Model& model, std::span<const data::Sample> samples,
                         std::size_t batch_size = 16);

std::size_t argmax(std::span<const double> values);

std::string train_log_to_json(const TrainLog& log);

}  // namespace fundus::train
