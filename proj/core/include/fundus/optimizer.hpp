#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fundus/layer.hpp"

namespace fundus::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

// One bias-corrected Adam update of every trainable parameter. Parameters with
// no entry in grads are updated with a zero gradient.
void adam_step(nn::ParamStore& params, const nn::Gradients& grads, AdamState& state);

}  // namespace fundus::train
