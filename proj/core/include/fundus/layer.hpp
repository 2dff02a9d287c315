#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fundus/kernels.hpp"
#include "fundus/rng.hpp"
#include "fundus/tensor.hpp"

namespace fundus::nn {

enum class LayerKind {
  conv2d,
  maxpool2d,
  global_avg_pool,
  dense,
  relu,
  batchnorm,
  residual_block_v1,
  residual_block_v2,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view text);
std::string_view to_string(Padding padding);
Padding padding_from_string(std::string_view text);

// Declarative description of one layer. Which fields matter depends on kind:
//   conv2d            filters, kernel, stride, padding
//   maxpool2d         pool, stride
//   dense             filters (output width)
//   batchnorm         eps, momentum
//   residual_block_*  bottleneck (inner width), filters (output width), stride
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  Padding padding = Padding::same;
  std::size_t pool = 0;
  std::size_t bottleneck = 0;
  double eps = 1e-5;
  double momentum = 0.9;

  bool operator==(const LayerSpec&) const = default;
};

LayerSpec conv2d_layer(std::string name, std::size_t filters, std::size_t kernel, std::size_t stride = 1,
                       Padding padding = Padding::same);
LayerSpec maxpool2d_layer(std::string name, std::size_t pool, std::size_t stride);
LayerSpec global_avg_pool_layer(std::string name);
LayerSpec dense_layer(std::string name, std::size_t width);
LayerSpec relu_layer(std::string name);
LayerSpec batchnorm_layer(std::string name, double eps = 1e-5, double momentum = 0.9);
LayerSpec residual_block(std::string name, LayerKind version, std::size_t bottleneck, std::size_t filters,
                         std::size_t stride);

enum class ParamRole { weight, bias, gamma, beta, running_mean, running_var };

struct ParamSlot {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::weight;
  std::size_t fan_in = 0;

  bool trainable() const noexcept { return role != ParamRole::running_mean && role != ParamRole::running_var; }
};

// Per-sample output shape: (C, H, W) for feature maps, (D) for vectors.
// Throws ShapeError when the layer cannot accept the input.
Shape output_shape(const LayerSpec& spec, const Shape& input);

// Parameter tensors the layer owns, in a fixed order, with full names.
std::vector<ParamSlot> param_slots(const LayerSpec& spec, const Shape& input);

// He-normal weights, zero biases, unit gamma, zero beta, zero mean, unit variance.
Tensor init_param(const ParamSlot& slot, Rng& rng);

// Named parameter tensors in insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(std::string name, Tensor value, bool trainable);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Gradients = std::map<std::string, Tensor>;

// Accumulates grad into grads[name].
void accumulate(Gradients& grads, const std::string& name, Tensor grad);

// Everything a layer's backward pass needs from its forward call.
struct TapeEntry {
  LayerKind kind = LayerKind::relu;
  Mode mode = Mode::infer;
  Shape input_shape;
  Tensor input;                          // conv2d, dense, relu
  Tensor saved;                          // batchnorm x_hat; residual v1 pre-activation sum
  std::vector<double> inv_std;           // batchnorm
  std::vector<std::size_t> argmax;       // maxpool2d
  std::vector<TapeEntry> pre, main, shortcut;  // residual block internals
};

struct StateUpdate {
  std::string name;
  Tensor value;
};

// Forward pass over a batch. When tape is non-null one entry's worth of
// intermediates is written to it. Train-mode batchnorm running statistics are
// returned through updates, never written to the store.
Tensor layer_forward(const LayerSpec& spec, const ParamStore& params, const Tensor& input, Mode mode,
                     TapeEntry* tape, std::vector<StateUpdate>* updates);

struct VjpResult {
  Tensor grad_input;
  Gradients grad_params;
};

VjpResult layer_vjp(const LayerSpec& spec, const ParamStore& params, const TapeEntry& tape, const Tensor& upstream);

// Runs layers in order. tape, when given, receives one entry per layer.
Tensor sequence_forward(const std::vector<LayerSpec>& layers, const ParamStore& params, Tensor input, Mode mode,
                        std::vector<TapeEntry>* tape, std::vector<StateUpdate>* updates);

// Back-propagates through layers[first, tape.size()) in reverse and returns the
// gradient with respect to the input of layers[first].
Tensor sequence_vjp(const std::vector<LayerSpec>& layers, const ParamStore& params,
                    const std::vector<TapeEntry>& tape, Tensor upstream, Gradients& grads, std::size_t first = 0);

// Internal structure of a residual block: v2 pre-activation, main path,
// projection shortcut (empty for identity shortcuts).
struct ResidualBranches {
  std::vector<LayerSpec> pre;
  std::vector<LayerSpec> main;
  std::vector<LayerSpec> shortcut;
};
ResidualBranches residual_branches(const LayerSpec& block, std::size_t in_channels);

}  // namespace fundus::nn
