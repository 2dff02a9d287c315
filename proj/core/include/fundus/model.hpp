#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fundus/architecture.hpp"
#include "fundus/layer.hpp"

namespace fundus::models {

class Model {
 public:
  // He-initialized parameters drawn from one splitmix64 stream in layer order.
  static Model initialize(ArchitectureConfig config, std::uint64_t seed);

  // Adopts existing parameters after checking names and shapes against the
  // architecture.
  static Model from_parameters(ArchitectureConfig config, nn::ParamStore params);

  const ArchitectureConfig& config() const noexcept { return config_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params() noexcept { return params_; }

  std::size_t layer_index(std::string_view name) const;
  // Layers with a 4-D output, usable as Grad-CAM taps.
  std::vector<std::string> available_taps() const;

  void apply(std::vector<nn::StateUpdate> updates);

 private:
  Model(ArchitectureConfig config, nn::ParamStore params);

  ArchitectureConfig config_;
  std::vector<Shape> trace_;
  nn::ParamStore params_;
};

struct ForwardOptions {
  nn::Mode mode = nn::Mode::infer;
  std::optional<std::string> capture;
  bool record_tape = false;  // always on in train mode
};

struct ForwardOutput {
  Tensor logits;
  std::vector<nn::TapeEntry> tape;
  std::optional<Tensor> captured;
  std::size_t captured_index = 0;
  std::vector<nn::StateUpdate> state_updates;
};

ForwardOutput model_forward(const Model& model, const Tensor& batch, const ForwardOptions& options = {});

struct BackwardOutput {
  Tensor grad_input;  // gradient w.r.t. the input of layers[first]
  nn::Gradients grads;
};

BackwardOutput model_backward(const Model& model, const std::vector<nn::TapeEntry>& tape, const Tensor& grad_output,
                              std::size_t first = 0);

// Runs layers[first, end) on an activation that stands in for the input of
// layers[first].
Tensor forward_from(const Model& model, const Tensor& activation, std::size_t first, nn::Mode mode = nn::Mode::infer);

}  // namespace fundus::models
