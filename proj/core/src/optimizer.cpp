#include "fundus/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "fundus/error.hpp"

namespace fundus::train {

void adam_step(nn::ParamStore& params, const nn::Gradients& grads, AdamState& state) {
  const AdamConfig& cfg = state.config;
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("Adam learning rate must be > 0");
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
    if (params.at(name).shape() != g.shape())
      throw ShapeError("gradient " + shape_string(g.shape()) + " for '" + name + "' does not match parameter " +
                       shape_string(params.at(name).shape()));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& entry : params.entries()) {
    if (!entry.trainable) continue;
    Tensor& theta = entry.value;
    auto [m_it, m_new] = state.first_moment.try_emplace(entry.name, theta.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(entry.name, theta.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    const auto g_it = grads.find(entry.name);
    const Tensor* g = g_it == grads.end() ? nullptr : &g_it->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace fundus::train
