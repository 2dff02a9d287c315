#include "fundus/layer.hpp"

#include <stdexcept>

#include "fundus/error.hpp"

namespace fundus::nn {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::maxpool2d, "maxpool2d"},
    {LayerKind::global_avg_pool, "global_avg_pool"},
    {LayerKind::dense, "dense"},
    {LayerKind::relu, "relu"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::residual_block_v1, "residual_block_v1"},
    {LayerKind::residual_block_v2, "residual_block_v2"},
};

bool is_residual(LayerKind kind) {
  return kind == LayerKind::residual_block_v1 || kind == LayerKind::residual_block_v2;
}

std::string param(const LayerSpec& spec, std::string_view suffix) { return spec.name + "." + std::string(suffix); }

void require_feature_map(const LayerSpec& spec, const Shape& input) {
  if (input.size() != 3)
    throw ShapeError("layer '" + spec.name + "' (" + std::string(to_string(spec.kind)) +
                     ") needs a (C, H, W) input, got " + shape_string(input));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view text) {
  for (const auto& [k, name] : kKindNames)
    if (name == text) return k;
  throw std::invalid_argument("unknown layer kind '" + std::string(text) + "'");
}

std::string_view to_string(Padding padding) { return padding == Padding::same ? "same" : "valid"; }

Padding padding_from_string(std::string_view text) {
  if (text == "same") return Padding::same;
  if (text == "valid") return Padding::valid;
  throw std::invalid_argument("unknown padding '" + std::string(text) + "'");
}

LayerSpec conv2d_layer(std::string name, std::size_t filters, std::size_t kernel, std::size_t stride,
                       Padding padding) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::conv2d;
  s.filters = filters;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec maxpool2d_layer(std::string name, std::size_t pool, std::size_t stride) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::maxpool2d;
  s.pool = pool;
  s.stride = stride;
  return s;
}

LayerSpec global_avg_pool_layer(std::string name) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::global_avg_pool;
  return s;
}

LayerSpec dense_layer(std::string name, std::size_t width) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::dense;
  s.filters = width;
  return s;
}

LayerSpec relu_layer(std::string name) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::relu;
  return s;
}

LayerSpec batchnorm_layer(std::string name, double eps, double momentum) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::batchnorm;
  s.eps = eps;
  s.momentum = momentum;
  return s;
}

LayerSpec residual_block(std::string name, LayerKind version, std::size_t bottleneck, std::size_t filters,
                         std::size_t stride) {
  if (!is_residual(version)) throw std::invalid_argument("residual_block needs a residual layer kind");
  LayerSpec s;
  s.name = std::move(name);
  s.kind = version;
  s.bottleneck = bottleneck;
  s.filters = filters;
  s.stride = stride;
  return s;
}

ResidualBranches residual_branches(const LayerSpec& block, std::size_t in_channels) {
  const std::string& n = block.name;
  const bool projection = block.stride != 1 || in_channels != block.filters;
  ResidualBranches b;
  if (block.kind == LayerKind::residual_block_v1) {
    b.main = {conv2d_layer(n + ".conv1", block.bottleneck, 1),
              batchnorm_layer(n + ".bn1", block.eps, block.momentum),
              relu_layer(n + ".relu1"),
              conv2d_layer(n + ".conv2", block.bottleneck, 3, block.stride),
              batchnorm_layer(n + ".bn2", block.eps, block.momentum),
              relu_layer(n + ".relu2"),
              conv2d_layer(n + ".conv3", block.filters, 1),
              batchnorm_layer(n + ".bn3", block.eps, block.momentum)};
    if (projection)
      b.shortcut = {conv2d_layer(n + ".shortcut_conv", block.filters, 1, block.stride),
                    batchnorm_layer(n + ".shortcut_bn", block.eps, block.momentum)};
  } else if (block.kind == LayerKind::residual_block_v2) {
    b.pre = {batchnorm_layer(n + ".preact_bn", block.eps, block.momentum), relu_layer(n + ".preact_relu")};
    b.main = {conv2d_layer(n + ".conv1", block.bottleneck, 1),
              batchnorm_layer(n + ".bn1", block.eps, block.momentum),
              relu_layer(n + ".relu1"),
              conv2d_layer(n + ".conv2", block.bottleneck, 3, block.stride),
              batchnorm_layer(n + ".bn2", block.eps, block.momentum),
              relu_layer(n + ".relu2"),
              conv2d_layer(n + ".conv3", block.filters, 1)};
    if (projection) b.shortcut = {conv2d_layer(n + ".shortcut_conv", block.filters, 1, block.stride)};
  } else {
    throw std::invalid_argument("layer '" + n + "' is not a residual block");
  }
  return b;
}

namespace {

Shape chain_shapes(const std::vector<LayerSpec>& layers, Shape shape) {
  for (const auto& l : layers) shape = output_shape(l, shape);
  return shape;
}

}  // namespace

Shape output_shape(const LayerSpec& spec, const Shape& input) {
  switch (spec.kind) {
    case LayerKind::conv2d: {
      require_feature_map(spec, input);
      if (spec.filters == 0 || spec.kernel == 0 || spec.stride == 0)
        throw ShapeError("conv2d layer '" + spec.name + "' needs filters, kernel and stride >= 1");
      const auto h = conv_axis(input[1], spec.kernel, spec.stride, spec.padding);
      const auto w = conv_axis(input[2], spec.kernel, spec.stride, spec.padding);
      return {spec.filters, h.out, w.out};
    }
    case LayerKind::maxpool2d: {
      require_feature_map(spec, input);
      if (spec.pool == 0 || spec.stride == 0)
        throw ShapeError("maxpool2d layer '" + spec.name + "' needs pool and stride >= 1");
      if (spec.pool > input[1] || spec.pool > input[2])
        throw ShapeError("maxpool2d layer '" + spec.name + "' pool " + std::to_string(spec.pool) +
                         " larger than input " + shape_string(input));
      return {input[0], (input[1] - spec.pool) / spec.stride + 1, (input[2] - spec.pool) / spec.stride + 1};
    }
    case LayerKind::global_avg_pool:
      require_feature_map(spec, input);
      return {input[0]};
    case LayerKind::dense:
      if (input.size() != 1)
        throw ShapeError("dense layer '" + spec.name + "' needs a flat input, got " + shape_string(input));
      if (spec.filters == 0) throw ShapeError("dense layer '" + spec.name + "' needs width >= 1");
      return {spec.filters};
    case LayerKind::relu:
      return input;
    case LayerKind::batchnorm:
      require_feature_map(spec, input);
      if (!(spec.eps > 0.0)) throw ShapeError("batchnorm layer '" + spec.name + "' needs eps > 0");
      return input;
    case LayerKind::residual_block_v1:
    case LayerKind::residual_block_v2: {
      require_feature_map(spec, input);
      if (spec.bottleneck == 0 || spec.filters == 0 || spec.stride == 0)
        throw ShapeError("residual block '" + spec.name + "' needs widths and stride >= 1");
      const auto b = residual_branches(spec, input[0]);
      const Shape pre = chain_shapes(b.pre, input);
      const Shape main = chain_shapes(b.main, pre);
      const Shape shortcut = b.shortcut.empty() ? input : chain_shapes(b.shortcut, pre);
      if (main != shortcut)
        throw ShapeError("residual block '" + spec.name + "' main path " + shape_string(main) +
                         " does not match shortcut " + shape_string(shortcut));
      return main;
    }
  }
  throw std::logic_error("unhandled layer kind");
}

std::vector<ParamSlot> param_slots(const LayerSpec& spec, const Shape& input) {
  switch (spec.kind) {
    case LayerKind::conv2d: {
      require_feature_map(spec, input);
      const std::size_t fan_in = input[0] * spec.kernel * spec.kernel;
      return {{param(spec, "weight"), {spec.filters, input[0], spec.kernel, spec.kernel}, ParamRole::weight, fan_in},
              {param(spec, "bias"), {spec.filters}, ParamRole::bias, fan_in}};
    }
    case LayerKind::dense:
      if (input.size() != 1)
        throw ShapeError("dense layer '" + spec.name + "' needs a flat input, got " + shape_string(input));
      return {{param(spec, "weight"), {input[0], spec.filters}, ParamRole::weight, input[0]},
              {param(spec, "bias"), {spec.filters}, ParamRole::bias, input[0]}};
    case LayerKind::batchnorm: {
      require_feature_map(spec, input);
      const Shape c{input[0]};
      return {{param(spec, "gamma"), c, ParamRole::gamma, 0},
              {param(spec, "beta"), c, ParamRole::beta, 0},
              {param(spec, "running_mean"), c, ParamRole::running_mean, 0},
              {param(spec, "running_var"), c, ParamRole::running_var, 0}};
    }
    case LayerKind::residual_block_v1:
    case LayerKind::residual_block_v2: {
      require_feature_map(spec, input);
      const auto b = residual_branches(spec, input[0]);
      std::vector<ParamSlot> slots;
      auto collect = [&](const std::vector<LayerSpec>& layers, Shape shape) {
        for (const auto& l : layers) {
          auto s = param_slots(l, shape);
          slots.insert(slots.end(), s.begin(), s.end());
          shape = output_shape(l, shape);
        }
        return shape;
      };
      const Shape pre = collect(b.pre, input);
      collect(b.main, pre);
      collect(b.shortcut, pre);
      return slots;
    }
    case LayerKind::maxpool2d:
    case LayerKind::global_avg_pool:
    case LayerKind::relu:
      return {};
  }
  throw std::logic_error("unhandled layer kind");
}

Tensor init_param(const ParamSlot& slot, Rng& rng) {
  switch (slot.role) {
    case ParamRole::weight:
      return he_normal(slot.shape, slot.fan_in, rng);
    case ParamRole::gamma:
    case ParamRole::running_var:
      return Tensor(slot.shape, 1.0);
    case ParamRole::bias:
    case ParamRole::beta:
    case ParamRole::running_mean:
      return Tensor(slot.shape, 0.0);
  }
  throw std::logic_error("unhandled parameter role");
}

void ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const Tensor& ParamStore::at(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].value;
}

Tensor& ParamStore::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).at(name));
}

void accumulate(Gradients& grads, const std::string& name, Tensor grad) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, std::move(grad));
  } else {
    add_inplace(it->second, grad);
  }
}

Tensor layer_forward(const LayerSpec& spec, const ParamStore& params, const Tensor& input, Mode mode,
                     TapeEntry* tape, std::vector<StateUpdate>* updates) {
  if (tape) {
    *tape = TapeEntry{};
    tape->kind = spec.kind;
    tape->mode = mode;
    tape->input_shape = input.shape();
  }
  switch (spec.kind) {
    case LayerKind::conv2d: {
      if (tape) tape->input = input;
      return conv2d_forward(input, params.at(param(spec, "weight")), params.at(param(spec, "bias")), spec.stride,
                            spec.padding);
    }
    case LayerKind::maxpool2d: {
      auto r = maxpool2d_forward(input, spec.pool, spec.stride);
      if (tape) tape->argmax = std::move(r.argmax);
      return std::move(r.output);
    }
    case LayerKind::global_avg_pool:
      return global_avg_pool_forward(input);
    case LayerKind::dense: {
      if (tape) tape->input = input;
      Tensor flat = input.rank() == 2 ? input : input.reshaped({input.dim(0), input.size() / input.dim(0)});
      return dense_forward(flat, params.at(param(spec, "weight")), params.at(param(spec, "bias")));
    }
    case LayerKind::relu:
      if (tape) tape->input = input;
      return relu_forward(input);
    case LayerKind::batchnorm: {
      auto r = batchnorm_forward(input, params.at(param(spec, "gamma")), params.at(param(spec, "beta")),
                                 params.at(param(spec, "running_mean")), params.at(param(spec, "running_var")), mode,
                                 spec.eps, spec.momentum);
      if (mode == Mode::train && updates) {
        updates->push_back({param(spec, "running_mean"), std::move(r.running_mean)});
        updates->push_back({param(spec, "running_var"), std::move(r.running_var)});
      }
      if (tape) {
        tape->saved = std::move(r.normalized);
        tape->inv_std = std::move(r.inv_std);
      }
      return std::move(r.output);
    }
    case LayerKind::residual_block_v1:
    case LayerKind::residual_block_v2: {
      if (input.rank() != 4)
        throw ShapeError("residual block '" + spec.name + "' needs an NCHW input, got " +
                         shape_string(input.shape()));
      const auto b = residual_branches(spec, input.dim(1));
      auto* pre_tape = tape ? &tape->pre : nullptr;
      auto* main_tape = tape ? &tape->main : nullptr;
      auto* short_tape = tape ? &tape->shortcut : nullptr;
      if (spec.kind == LayerKind::residual_block_v1) {
        Tensor sum = sequence_forward(b.main, params, input, mode, main_tape, updates);
        if (b.shortcut.empty()) {
          add_inplace(sum, input);
        } else {
          add_inplace(sum, sequence_forward(b.shortcut, params, input, mode, short_tape, updates));
        }
        Tensor out = relu_forward(sum);
        if (tape) tape->saved = std::move(sum);
        return out;
      }
      Tensor activated = sequence_forward(b.pre, params, input, mode, pre_tape, updates);
      Tensor out = sequence_forward(b.main, params, activated, mode, main_tape, updates);
      if (b.shortcut.empty()) {
        add_inplace(out, input);
      } else {
        add_inplace(out, sequence_forward(b.shortcut, params, activated, mode, short_tape, updates));
      }
      return out;
    }
  }
  throw std::logic_error("unhandled layer kind");
}

VjpResult layer_vjp(const LayerSpec& spec, const ParamStore& params, const TapeEntry& tape, const Tensor& upstream) {
  if (tape.kind != spec.kind)
    throw std::invalid_argument("tape entry of kind " + std::string(to_string(tape.kind)) + " used for layer '" +
                                spec.name + "' of kind " + std::string(to_string(spec.kind)));
  VjpResult r;
  switch (spec.kind) {
    case LayerKind::conv2d: {
      auto g = conv2d_backward(tape.input, params.at(param(spec, "weight")), spec.stride, spec.padding, upstream);
      r.grad_input = std::move(g.input);
      r.grad_params.emplace(param(spec, "weight"), std::move(g.weights));
      r.grad_params.emplace(param(spec, "bias"), std::move(g.bias));
      return r;
    }
    case LayerKind::maxpool2d:
      r.grad_input = maxpool2d_backward(tape.input_shape, tape.argmax, upstream);
      return r;
    case LayerKind::global_avg_pool:
      r.grad_input = global_avg_pool_backward(tape.input_shape, upstream);
      return r;
    case LayerKind::dense: {
      const Tensor& in = tape.input;
      Tensor flat = in.rank() == 2 ? in : in.reshaped({in.dim(0), in.size() / in.dim(0)});
      auto g = dense_backward(flat, params.at(param(spec, "weight")), upstream);
      r.grad_input = g.input.reshaped(tape.input_shape);
      r.grad_params.emplace(param(spec, "weight"), std::move(g.weights));
      r.grad_params.emplace(param(spec, "bias"), std::move(g.bias));
      return r;
    }
    case LayerKind::relu:
      r.grad_input = relu_backward(tape.input, upstream);
      return r;
    case LayerKind::batchnorm: {
      auto g = batchnorm_backward(tape.saved, tape.inv_std, params.at(param(spec, "gamma")), tape.mode, upstream);
      r.grad_input = std::move(g.input);
      r.grad_params.emplace(param(spec, "gamma"), std::move(g.gamma));
      r.grad_params.emplace(param(spec, "beta"), std::move(g.beta));
      return r;
    }
    case LayerKind::residual_block_v1:
    case LayerKind::residual_block_v2: {
      const auto b = residual_branches(spec, tape.input_shape.at(1));
      if (spec.kind == LayerKind::residual_block_v1) {
        const Tensor g_sum = relu_backward(tape.saved, upstream);
        r.grad_input = sequence_vjp(b.main, params, tape.main, g_sum, r.grad_params);
        if (b.shortcut.empty()) {
          add_inplace(r.grad_input, g_sum);
        } else {
          add_inplace(r.grad_input, sequence_vjp(b.shortcut, params, tape.shortcut, g_sum, r.grad_params));
        }
        return r;
      }
      Tensor g_activated = sequence_vjp(b.main, params, tape.main, upstream, r.grad_params);
      if (!b.shortcut.empty())
        add_inplace(g_activated, sequence_vjp(b.shortcut, params, tape.shortcut, upstream, r.grad_params));
      r.grad_input = sequence_vjp(b.pre, params, tape.pre, std::move(g_activated), r.grad_params);
      if (b.shortcut.empty()) add_inplace(r.grad_input, upstream);
      return r;
    }
  }
  throw std::logic_error("unhandled layer kind");
}

Tensor sequence_forward(const std::vector<LayerSpec>& layers, const ParamStore& params, Tensor input, Mode mode,
                        std::vector<TapeEntry>* tape, std::vector<StateUpdate>* updates) {
  if (tape) tape->assign(layers.size(), TapeEntry{});
  for (std::size_t i = 0; i < layers.size(); ++i)
    input = layer_forward(layers[i], params, input, mode, tape ? &(*tape)[i] : nullptr, updates);
  return input;
}

Tensor sequence_vjp(const std::vector<LayerSpec>& layers, const ParamStore& params,
                    const std::vector<TapeEntry>& tape, Tensor upstream, Gradients& grads, std::size_t first) {
  if (tape.size() > layers.size())
    throw std::invalid_argument("tape has more entries than the layer sequence");
  for (std::size_t i = tape.size(); i-- > first;) {
    auto r = layer_vjp(layers[i], params, tape[i], upstream);
    for (auto& [name, g] : r.grad_params) accumulate(grads, name, std::move(g));
    upstream = std::move(r.grad_input);
  }
  return upstream;
}

}  // namespace fundus::nn
