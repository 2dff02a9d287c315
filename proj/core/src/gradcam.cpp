#include "fundus/gradcam.hpp"

#include <algorithm>
#include <stdexcept>

#include "fundus/error.hpp"
#include "fundus/kernels.hpp"
#include "fundus/transforms.hpp"

namespace fundus::cam {

std::vector<double> gradcam_weights(const Tensor& activation, const Tensor& grad_activation) {
  if (activation.rank() != 4 || activation.dim(0) != 1 || activation.shape() != grad_activation.shape())
    throw ShapeError("gradcam weights need matching (1, K, h, w) tensors, got " + shape_string(activation.shape()) +
                     " and " + shape_string(grad_activation.shape()));
  const std::size_t channels = activation.dim(1), plane = activation.dim(2) * activation.dim(3);
  std::vector<double> weights(channels);
  for (std::size_t k = 0; k < channels; ++k) {
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) sum += grad_activation[k * plane + p];
    weights[k] = sum / static_cast<double>(plane);
  }
  return weights;
}

namespace {

void normalize_by_max(std::vector<double>& values) {
  const double peak = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  if (peak > 0.0) {
    for (auto& v : values) v /= peak;
  } else {
    std::fill(values.begin(), values.end(), 0.0);
  }
}

}  // namespace

Heatmap gradcam_map(const Tensor& activation, std::span<const double> weights) {
  if (activation.rank() != 4 || activation.dim(0) != 1)
    throw ShapeError("gradcam map needs a (1, K, h, w) activation, got " + shape_string(activation.shape()));
  const std::size_t channels = activation.dim(1), height = activation.dim(2), width = activation.dim(3);
  if (weights.size() != channels)
    throw ShapeError("gradcam map got " + std::to_string(weights.size()) + " weights for " + std::to_string(channels) +
                     " channels");
  const std::size_t plane = height * width;
  Heatmap h;
  h.width = width;
  h.height = height;
  h.values.assign(plane, 0.0);
  for (std::size_t k = 0; k < channels; ++k)
    for (std::size_t p = 0; p < plane; ++p) h.values[p] += weights[k] * activation[k * plane + p];
  for (auto& v : h.values) v = v > 0.0 ? v : 0.0;
  normalize_by_max(h.values);
  return h;
}

Heatmap upsample(const Heatmap& heatmap, std::size_t width, std::size_t height) {
  Heatmap out = heatmap;
  out.width = width;
  out.height = height;
  out.values = data::resample_bilinear(heatmap.values, heatmap.width, heatmap.height, width, height);
  normalize_by_max(out.values);
  return out;
}

TapGradient tap_gradient(const models::Model& model, const Tensor& image, std::optional<std::size_t> target_class,
                         std::optional<std::string> layer) {
  const Tensor batch = image.rank() == 3 ? image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}) : image;
  if (batch.rank() != 4 || batch.dim(0) != 1)
    throw ShapeError("gradcam expects a single image, got " + shape_string(image.shape()));
  const auto& config = model.config();
  if (config.classes == 0) throw std::invalid_argument("model '" + config.name + "' has no classifier head");

  TapGradient r;
  r.layer = layer.value_or(config.tap);
  auto fwd = models::model_forward(model, batch, {nn::Mode::infer, r.layer, true});
  const std::size_t classes = fwd.logits.dim(1);
  r.probabilities = nn::softmax_row(fwd.logits.data());
  r.predicted_class = 0;
  for (std::size_t k = 1; k < classes; ++k)
    if (fwd.logits[k] > fwd.logits[r.predicted_class]) r.predicted_class = k;
  r.target_class = target_class.value_or(r.predicted_class);
  if (r.target_class >= classes)
    throw std::invalid_argument("class index " + std::to_string(r.target_class) + " out of range for " +
                                std::to_string(classes) + " classes");

  Tensor seed(fwd.logits.shape());
  seed[r.target_class] = 1.0;
  nn::Gradients unused;
  r.gradient = nn::sequence_vjp(config.layers, model.params(), fwd.tape, std::move(seed), unused,
                                fwd.captured_index + 1);
  r.activation = std::move(*fwd.captured);
  return r;
}

GradCamResult gradcam_for_image(const models::Model& model, const Tensor& image,
                                std::optional<std::size_t> target_class, std::optional<std::string> layer) {
  const TapGradient tg = tap_gradient(model, image, target_class, std::move(layer));
  GradCamResult r;
  r.coarse = gradcam_map(tg.activation, gradcam_weights(tg.activation, tg.gradient));
  r.coarse.layer = tg.layer;
  r.coarse.target_class = tg.target_class;
  const Shape& in = model.config().input_shape;
  r.heatmap = upsample(r.coarse, in[2], in[1]);
  r.probabilities = tg.probabilities;
  r.predicted_class = tg.predicted_class;
  return r;
}

std::array<double, 3> colormap_jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {unit(std::min(4.0 * t - 1.5, -4.0 * t + 4.5)), unit(std::min(4.0 * t - 0.5, -4.0 * t + 3.5)),
          unit(std::min(4.0 * t + 0.5, -4.0 * t + 2.5))};
}

data::Image superimpose(const data::Image& image, const Heatmap& heatmap) {
  if (image.width != heatmap.width || image.height != heatmap.height)
    throw ShapeError("heatmap " + std::to_string(heatmap.width) + "x" + std::to_string(heatmap.height) +
                     " does not match image " + std::to_string(image.width) + "x" + std::to_string(image.height));
  data::Image out(image.width, image.height);
  for (std::size_t i = 0; i < heatmap.values.size(); ++i) {
    const auto color = colormap_jet(heatmap.values[i]);
    for (std::size_t c = 0; c < 3; ++c)
      out.pixels[i * 3 + c] = data::quantize(std::clamp(0.6 * image.pixels[i * 3 + c] / 255.0 + 0.4 * color[c], 0.0, 1.0));
  }
  return out;
}

data::GrayImage to_gray(const Heatmap& heatmap) {
  data::GrayImage g{heatmap.width, heatmap.height, std::vector<std::uint8_t>(heatmap.values.size())};
  for (std::size_t i = 0; i < heatmap.values.size(); ++i) g.pixels[i] = data::quantize(heatmap.values[i]);
  return g;
}

}  // namespace fundus::cam
