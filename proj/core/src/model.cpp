#include "fundus/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "fundus/error.hpp"
#include "fundus/rng.hpp"

namespace fundus::models {

Model::Model(ArchitectureConfig config, nn::ParamStore params)
    : config_(std::move(config)), trace_(shape_trace(config_)), params_(std::move(params)) {}

Model Model::initialize(ArchitectureConfig config, std::uint64_t seed) {
  const auto trace = shape_trace(config);
  Rng rng(seed);
  nn::ParamStore store;
  Shape shape = config.input_shape;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    for (const auto& slot : nn::param_slots(config.layers[i], shape))
      store.add(slot.name, nn::init_param(slot, rng), slot.trainable());
    shape = trace[i];
  }
  return Model(std::move(config), std::move(store));
}

Model Model::from_parameters(ArchitectureConfig config, nn::ParamStore params) {
  const auto trace = shape_trace(config);
  Shape shape = config.input_shape;
  std::size_t expected = 0;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    for (const auto& slot : nn::param_slots(config.layers[i], shape)) {
      ++expected;
      if (!params.contains(slot.name)) throw ShapeError("missing parameter tensor '" + slot.name + "'");
      const Tensor& t = params.at(slot.name);
      if (t.shape() != slot.shape)
        throw ShapeError("parameter tensor '" + slot.name + "' has shape " + shape_string(t.shape()) + ", expected " +
                         shape_string(slot.shape));
      if (slot.role == nn::ParamRole::running_var)
        for (double v : t.values())
          if (!(v > 0.0)) throw ShapeError("parameter tensor '" + slot.name + "' has non-positive variance");
    }
    shape = trace[i];
  }
  if (params.size() != expected)
    throw ShapeError("checkpoint holds " + std::to_string(params.size()) + " tensors, architecture expects " +
                     std::to_string(expected));
  nn::ParamStore ordered;
  shape = config.input_shape;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    for (const auto& slot : nn::param_slots(config.layers[i], shape))
      ordered.add(slot.name, params.at(slot.name), slot.trainable());
    shape = trace[i];
  }
  return Model(std::move(config), std::move(ordered));
}

std::size_t Model::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < config_.layers.size(); ++i)
    if (config_.layers[i].name == name) return i;
  std::string taps;
  for (const auto& t : available_taps()) taps += (taps.empty() ? "" : ", ") + t;
  throw std::invalid_argument("unknown layer '" + std::string(name) + "' (available taps: " + taps + ")");
}

std::vector<std::string> Model::available_taps() const {
  std::vector<std::string> taps;
  for (std::size_t i = 0; i < config_.layers.size(); ++i)
    if (trace_[i].size() == 3) taps.push_back(config_.layers[i].name);
  return taps;
}

void Model::apply(std::vector<nn::StateUpdate> updates) {
  for (auto& u : updates) params_.at(u.name) = std::move(u.value);
}

ForwardOutput model_forward(const Model& model, const Tensor& batch, const ForwardOptions& options) {
  const auto& config = model.config();
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != config.input_shape)
    throw ShapeError("batch " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(config.input_shape));
  std::optional<std::size_t> capture_index;
  if (options.capture) {
    capture_index = model.layer_index(*options.capture);
    const auto taps = model.available_taps();
    if (std::find(taps.begin(), taps.end(), *options.capture) == taps.end())
      throw std::invalid_argument("layer '" + *options.capture + "' does not produce a feature map");
  }

  ForwardOutput out;
  const bool record = options.record_tape || options.mode == nn::Mode::train;
  if (record) out.tape.resize(config.layers.size());
  Tensor x = batch;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    x = nn::layer_forward(config.layers[i], model.params(), x, options.mode, record ? &out.tape[i] : nullptr,
                          &out.state_updates);
    if (capture_index && *capture_index == i) {
      out.captured = x;
      out.captured_index = i;
    }
  }
  out.logits = std::move(x);
  return out;
}

BackwardOutput model_backward(const Model& model, const std::vector<nn::TapeEntry>& tape, const Tensor& grad_output,
                              std::size_t first) {
  if (tape.size() != model.config().layers.size())
    throw std::invalid_argument("tape length " + std::to_string(tape.size()) + " does not match layer count " +
                                std::to_string(model.config().layers.size()));
  BackwardOutput out;
  out.grad_input = nn::sequence_vjp(model.config().layers, model.params(), tape, grad_output, out.grads, first);
  return out;
}

Tensor forward_from(const Model& model, const Tensor& activation, std::size_t first, nn::Mode mode) {
  const auto& layers = model.config().layers;
  if (first > layers.size()) throw std::out_of_range("forward_from start beyond the last layer");
  Tensor x = activation;
  for (std::size_t i = first; i < layers.size(); ++i)
    x = nn::layer_forward(layers[i], model.params(), x, mode, nullptr, nullptr);
  return x;
}

}  // namespace fundus::models
