#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/model.hpp"
#include "fundus/tensor.hpp"

namespace fundus::cam {

// Localization map with values in [0, 1]; the maximum is 1 unless every value is 0.
struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;
  std::string layer;
  std::size_t target_class = 0;
};

// Channel weights: spatial mean of the class-score gradient, per channel.
std::vector<double> gradcam_weights(const Tensor& activation, const Tensor& grad_activation);

// ReLU of the weighted channel sum, divided by its maximum when positive.
Heatmap gradcam_map(const Tensor& activation, std::span<const double> weights);

// Bilinear upsampling (same convention as image resizing) followed by
// renormalization to a unit maximum.
Heatmap upsample(const Heatmap& heatmap, std::size_t width, std::size_t height);

struct TapGradient {
  Tensor activation;  // (1, K, h, w)
  Tensor gradient;    // d logit[target] / d activation
  std::vector<double> probabilities;
  std::size_t predicted_class = 0;
  std::size_t target_class = 0;
  std::string layer;
};

// Inference-mode forward with capture, then backward from a one-hot seed on
// the pre-softmax logits down to the tapped activation. Defaults: the model's
// tap layer and the predicted class.
TapGradient tap_gradient(const models::Model& model, const Tensor& image, std::optional<std::size_t> target_class = {},
                         std::optional<std::string> layer = {});

struct GradCamResult {
  Heatmap coarse;    // at the tap resolution
  Heatmap heatmap;   // at the input resolution
  std::vector<double> probabilities;
  std::size_t predicted_class = 0;
};

// image is (3, H, W) or (1, 3, H, W).
GradCamResult gradcam_for_image(const models::Model& model, const Tensor& image,
                                std::optional<std::size_t> target_class = {}, std::optional<std::string> layer = {});

// Piecewise-linear jet colormap; t is clamped to [0, 1].
std::array<double, 3> colormap_jet(double t);

// 0.6 * image + 0.4 * jet(heat) in [0, 1] space, clamped and quantized half-up.
data::Image superimpose(const data::Image& image, const Heatmap& heatmap);

data::GrayImage to_gray(const Heatmap& heatmap);

}  // namespace fundus::cam
