#include "fundus/training.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "fundus/error.hpp"

namespace fundus::train {

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return mix(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1)));
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

void check_sample(const models::Model& model, const data::Sample& s) {
  const Shape& in = model.config().input_shape;
  if (s.image.height != in[1] || s.image.width != in[2])
    throw DataError("image '" + s.path + "' is " + std::to_string(s.image.width) + "x" +
                    std::to_string(s.image.height) + ", model '" + model.config().name + "' expects " +
                    std::to_string(in[2]) + "x" + std::to_string(in[1]));
}

struct StepResult {
  double loss = 0.0;
  Tensor logits;
};

StepResult run_step(models::Model& model, const Tensor& batch, std::span<const std::size_t> labels, AdamState& state) {
  auto fwd = models::model_forward(model, batch, {nn::Mode::train, std::nullopt, true});
  auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
  if (!std::isfinite(loss.loss)) throw NumericError("training loss is not finite");
  auto back = models::model_backward(model, fwd.tape, loss.grad_logits);
  model.apply(std::move(fwd.state_updates));
  adam_step(model.params(), back.grads, state);
  return {loss.loss, std::move(fwd.logits)};
}

}  // namespace

double train_step(models::Model& model, const Tensor& batch, std::span<const std::size_t> labels, AdamState& state) {
  return run_step(model, batch, labels, state).loss;
}

TrainLog train(models::Model& model, std::span<const data::Sample> samples, const TrainConfig& config,
               const EpochCallback& on_epoch) {
  if (config.epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (samples.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& s : samples) check_sample(model, s);

  TrainLog log;
  log.model = model.config().name;
  log.config = config;
  AdamState state;
  state.config.lr = config.lr;

  std::vector<std::size_t> order(samples.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t eseed = epoch_seed(config.seed, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(eseed);
    shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      std::vector<Tensor> images;
      std::vector<std::size_t> labels;
      images.reserve(count);
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = order[first + k];
        const auto& s = samples[idx];
        if (config.augment) {
          Rng rng(mix(eseed ^ idx));
          images.push_back(data::to_tensor(data::augment(s.image, rng, config.augmentation)));
        } else {
          images.push_back(data::to_tensor(s.image));
        }
        labels.push_back(data::class_index(s.label));
      }
      const Tensor batch = stack(images);

      StepResult step;
      try {
        step = run_step(model, batch, labels, state);
      } catch (const NumericError&) {
        throw NumericError("training loss became non-finite in epoch " + std::to_string(epoch + 1));
      }
      const std::size_t classes = step.logits.dim(1);
      for (std::size_t k = 0; k < count; ++k)
        if (argmax(step.logits.data().subspan(k * classes, classes)) == labels[k]) ++correct;
      loss_sum += step.loss * static_cast<double>(count);
    }
    EpochStats stats{epoch + 1, loss_sum / static_cast<double>(samples.size()),
                     static_cast<double>(correct) / static_cast<double>(samples.size())};
    log.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return log;
}

std::vector<std::size_t> predict(const models::Model& model, std::span<const data::Sample> samples,
                                 std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> predictions;
  predictions.reserve(samples.size());
  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - first);
    std::vector<Tensor> images;
    for (std::size_t k = 0; k < count; ++k) {
      check_sample(model, samples[first + k]);
      images.push_back(data::to_tensor(samples[first + k].image));
    }
    const auto fwd = models::model_forward(model, stack(images));
    const std::size_t classes = fwd.logits.dim(1);
    for (std::size_t k = 0; k < count; ++k) predictions.push_back(argmax(fwd.logits.data().subspan(k * classes, classes)));
  }
  return predictions;
}

ConfusionMatrix evaluate(const models::Model& model, std::span<const data::Sample> samples, std::size_t batch_size) {
  const auto predictions = predict(model, samples, batch_size);
  const std::size_t positive = data::class_index(data::Label::macular_degeneration);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool actual = data::class_index(samples[i].label) == positive;
    const bool predicted = predictions[i] == positive;
    if (actual && predicted) ++cm.tp;
    else if (!actual && !predicted) ++cm.tn;
    else if (predicted) ++cm.fp;
    else ++cm.fn;
  }
  return cm;
}

std::string train_log_to_json(const TrainLog& log) {
  using nlohmann::json;
  json entries = json::array();
  for (const auto& e : log.epochs) entries.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  const auto& c = log.config;
  json j{{"model", log.model},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"lr", c.lr},
         {"augment", c.augment},
         {"augmentation",
          {{"hflip_probability", c.augmentation.hflip_probability},
           {"vflip_probability", c.augmentation.vflip_probability},
           {"max_rotation_degrees", c.augmentation.max_rotation_degrees}}},
         {"log", std::move(entries)}};
  return j.dump(2) + "\n";
}

}  // namespace fundus::train
