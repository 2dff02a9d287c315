#pragma once

// Forward and backward kernels for the fixed layer set. All functions are pure:
// they read their arguments and return fresh tensors.

#include <cstddef>
#include <span>
#include <vector>

#include "fundus/rng.hpp"
#include "fundus/tensor.hpp"

namespace fundus::nn {

enum class Padding { same, valid };
enum class Mode { train, infer };

// Output extent and leading zero padding along one spatial axis.
// Same padding: out = ceil(in / stride), padding split evenly with any extra
// row or column on the bottom/right. Valid padding: out = (in - k) / stride + 1.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
                      Padding padding);

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, std::size_t stride, Padding padding,
                            const Tensor& upstream);

struct MaxPoolResult {
  Tensor output;
  // Flat index into the input of each output element's maximum.
  std::vector<std::size_t> argmax;
};
// Windows that do not fit are dropped; ties go to the first element in
// row-major scan order.
MaxPoolResult maxpool2d_forward(const Tensor& input, std::size_t pool, std::size_t stride);
Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax, const Tensor& upstream);

Tensor global_avg_pool_forward(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& upstream);

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

struct BatchNormResult {
  Tensor output;
  Tensor normalized;  // x_hat
  std::vector<double> inv_std;
  // Updated running statistics (train mode); copies of the inputs in infer mode.
  Tensor running_mean;
  Tensor running_var;
};
BatchNormResult batchnorm_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                                  const Tensor& running_mean, const Tensor& running_var, Mode mode, double eps,
                                  double momentum);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const Tensor& normalized, std::span<const double> inv_std, const Tensor& gamma,
                                  Mode mode, const Tensor& upstream);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};
// Mean negative log-likelihood of softmax(logits) with max subtraction.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

std::vector<double> softmax_row(std::span<const double> logits);

// Normal(0, sqrt(2 / fan_in)) samples in row-major order.
Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace fundus::nn
