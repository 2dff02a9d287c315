#include "fundus/architecture.hpp"

#include <set>
#include <stdexcept>

#include "json.hpp"

#include "fundus/error.hpp"

namespace fundus::models {

using nn::LayerKind;
using nn::LayerSpec;
using nn::Padding;

std::vector<Shape> shape_trace(const ArchitectureConfig& config) {
  if (config.input_shape.size() != 3 || shape_size(config.input_shape) == 0)
    throw ShapeError("architecture '" + config.name + "' needs a (C, H, W) input shape, got " +
                     shape_string(config.input_shape));
  if (config.layers.empty()) throw ShapeError("architecture '" + config.name + "' has no layers");

  std::set<std::string> names;
  std::vector<Shape> trace;
  Shape shape = config.input_shape;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& layer = config.layers[i];
    if (layer.name.empty() || layer.name.find('.') != std::string::npos)
      throw std::invalid_argument("layer " + std::to_string(i) + " has an invalid name '" + layer.name + "'");
    if (!names.insert(layer.name).second)
      throw std::invalid_argument("duplicate layer name '" + layer.name + "'");
    try {
      shape = nn::output_shape(layer, shape);
    } catch (const ShapeError& e) {
      throw ShapeError("architecture '" + config.name + "' layer " + std::to_string(i) + ": " + e.what());
    }
    trace.push_back(shape);
  }

  if (config.classes > 0 && shape != Shape{config.classes})
    throw ShapeError("architecture '" + config.name + "' ends in " + shape_string(shape) + ", expected (" +
                     std::to_string(config.classes) + ") logits");
  if (config.classes == 0 && shape.size() != 3)
    throw ShapeError("backbone '" + config.name + "' must end in a feature map, got " + shape_string(shape));

  bool tap_found = false;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (config.layers[i].name != config.tap) continue;
    if (trace[i].size() != 3)
      throw ShapeError("tap layer '" + config.tap + "' produces " + shape_string(trace[i]) +
                       ", not a feature map");
    tap_found = true;
  }
  if (!tap_found) throw std::invalid_argument("tap layer '" + config.tap + "' not found in '" + config.name + "'");
  return trace;
}

void validate(const ArchitectureConfig& config) { (void)shape_trace(config); }

ArchitectureConfig build_cnn6(std::size_t input_size, const std::array<std::size_t, 6>& filters, std::string name) {
  if (input_size < 64)
    throw std::invalid_argument("cnn6 input size " + std::to_string(input_size) + " too small for six 2x2 pools");
  ArchitectureConfig c;
  c.name = std::move(name);
  c.input_shape = {3, input_size, input_size};
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const std::string stage = "conv" + std::to_string(i + 1);
    c.layers.push_back(nn::conv2d_layer(stage, filters[i], 3));
    c.layers.push_back(nn::relu_layer(stage + "_relu"));
    c.layers.push_back(nn::maxpool2d_layer("pool" + std::to_string(i + 1), 2, 2));
  }
  c.layers.push_back(nn::global_avg_pool_layer("gap"));
  c.layers.push_back(nn::dense_layer("logits", 2));
  c.tap = "conv6_relu";
  c.classes = 2;
  validate(c);
  return c;
}

std::array<std::size_t, 4> resnet_stage_blocks(int depth) {
  switch (depth) {
    case 50: return {3, 4, 6, 3};
    case 101: return {3, 4, 23, 3};
    case 152: return {3, 8, 36, 3};
    default: throw std::invalid_argument("unsupported ResNet depth " + std::to_string(depth));
  }
}

namespace {

std::size_t scale_width(std::size_t base, Ratio m) {
  if (base * m.num % m.den != 0)
    throw std::invalid_argument("width " + std::to_string(base) + " scaled by " + std::to_string(m.num) + "/" +
                                std::to_string(m.den) + " is not an integer");
  const std::size_t w = base * m.num / m.den;
  if (w == 0) throw std::invalid_argument("scaled width must be >= 1");
  return w;
}

}  // namespace

ArchitectureConfig build_resnet_backbone(int depth, ResNetVersion version, Ratio multiplier,
                                         std::size_t input_size) {
  if (multiplier.num == 0 || multiplier.den == 0 || multiplier.num > multiplier.den)
    throw std::invalid_argument("width multiplier must lie in (0, 1]");
  const auto blocks = resnet_stage_blocks(depth);
  const bool v2 = version == ResNetVersion::v2;
  const LayerKind kind = v2 ? LayerKind::residual_block_v2 : LayerKind::residual_block_v1;

  ArchitectureConfig c;
  c.name = "resnet" + std::to_string(depth) + (v2 ? "v2" : "");
  if (multiplier.num != multiplier.den)
    c.name += "-w" + std::to_string(multiplier.den) + (multiplier.num != 1 ? "x" + std::to_string(multiplier.num) : "");
  c.input_shape = {3, input_size, input_size};
  c.classes = 0;

  c.layers.push_back(nn::conv2d_layer("stem_conv", scale_width(64, multiplier), 7, 2));
  if (!v2) {
    c.layers.push_back(nn::batchnorm_layer("stem_bn"));
    c.layers.push_back(nn::relu_layer("stem_relu"));
  }
  c.layers.push_back(nn::maxpool2d_layer("stem_pool", 3, 2));

  constexpr std::array<std::size_t, 4> kBottleneck{64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t inner = scale_width(kBottleneck[s], multiplier);
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      c.layers.push_back(nn::residual_block("stage" + std::to_string(s + 1) + "_block" + std::to_string(b + 1), kind,
                                            inner, inner * 4, stride));
    }
  }
  if (v2) {
    c.layers.push_back(nn::batchnorm_layer("post_bn"));
    c.layers.push_back(nn::relu_layer("post_relu"));
  }
  c.tap = c.layers.back().name;
  validate(c);
  return c;
}

ArchitectureConfig attach_hybrid_head(const ArchitectureConfig& backbone,
                                      std::pair<std::size_t, std::size_t> conv_filters,
                                      std::pair<std::size_t, std::size_t> dense_widths) {
  if (backbone.classes != 0) throw std::invalid_argument("'" + backbone.name + "' already has a classifier head");
  if (conv_filters.first == 0 || conv_filters.second == 0)
    throw std::invalid_argument("head conv filters must be >= 1");
  if (dense_widths.first == 0 || dense_widths.second == 0) throw std::invalid_argument("head dense widths must be >= 1");
  const auto trace = shape_trace(backbone);
  const Shape& out = trace.back();
  if (out[1] < 4 || out[2] < 4)
    throw ShapeError("backbone '" + backbone.name + "' output " + shape_string(out) +
                     " is smaller than 4x4; two more 2x2 pools do not fit");

  ArchitectureConfig c = backbone;
  c.name = backbone.name + "+cnn";
  c.layers.push_back(nn::conv2d_layer("head_conv1", conv_filters.first, 3));
  c.layers.push_back(nn::relu_layer("head_conv1_relu"));
  c.layers.push_back(nn::maxpool2d_layer("head_pool1", 2, 2));
  c.layers.push_back(nn::conv2d_layer("head_conv2", conv_filters.second, 3));
  c.layers.push_back(nn::relu_layer("head_conv2_relu"));
  c.layers.push_back(nn::maxpool2d_layer("head_pool2", 2, 2));
  c.layers.push_back(nn::global_avg_pool_layer("head_gap"));
  c.layers.push_back(nn::dense_layer("head_dense1", dense_widths.first));
  c.layers.push_back(nn::relu_layer("head_dense1_relu"));
  c.layers.push_back(nn::dense_layer("logits", dense_widths.second));
  c.tap = "head_conv2_relu";
  c.classes = dense_widths.second;
  validate(c);
  return c;
}

std::vector<std::string> preset_names() {
  return {"cnn6",        "cnn6-tiny",  "resnet50",    "resnet50v2", "resnet101",
          "resnet101v2", "resnet152",  "resnet152v2", "resnet50-w8"};
}

ArchitectureConfig preset(const std::string& name) {
  if (name == "cnn6") return build_cnn6(299);
  if (name == "cnn6-tiny") return build_cnn6(64, {8, 16, 16, 16, 32, 32}, "cnn6-tiny");
  if (name == "resnet50-w8") {
    auto c = attach_hybrid_head(build_resnet_backbone(50, ResNetVersion::v1, {1, 8}, 128), {32, 16}, {8, 2});
    c.name = "resnet50-w8";
    return c;
  }
  for (int depth : {50, 101, 152}) {
    for (auto version : {ResNetVersion::v1, ResNetVersion::v2}) {
      const std::string n = "resnet" + std::to_string(depth) + (version == ResNetVersion::v2 ? "v2" : "");
      if (n == name) {
        auto c = attach_hybrid_head(build_resnet_backbone(depth, version));
        c.name = name;
        return c;
      }
    }
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown model preset '" + name + "' (known: " + known + ")");
}

std::size_t count_parameters(const ArchitectureConfig& config) {
  const auto trace = shape_trace(config);
  std::size_t total = 0;
  Shape shape = config.input_shape;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    for (const auto& slot : nn::param_slots(config.layers[i], shape))
      if (slot.trainable()) total += shape_size(slot.shape);
    shape = trace[i];
  }
  return total;
}

namespace {

using nlohmann::json;

json layer_to_json(const LayerSpec& l) {
  json j{{"name", l.name}, {"kind", std::string(nn::to_string(l.kind))}};
  switch (l.kind) {
    case LayerKind::conv2d:
      j["filters"] = l.filters;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = std::string(nn::to_string(l.padding));
      break;
    case LayerKind::maxpool2d:
      j["pool"] = l.pool;
      j["stride"] = l.stride;
      break;
    case LayerKind::dense:
      j["units"] = l.filters;
      break;
    case LayerKind::batchnorm:
      j["eps"] = l.eps;
      j["momentum"] = l.momentum;
      break;
    case LayerKind::residual_block_v1:
    case LayerKind::residual_block_v2:
      j["bottleneck"] = l.bottleneck;
      j["filters"] = l.filters;
      j["stride"] = l.stride;
      j["eps"] = l.eps;
      j["momentum"] = l.momentum;
      break;
    case LayerKind::global_avg_pool:
    case LayerKind::relu:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = nn::layer_kind_from_string(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::conv2d:
      l.filters = j.at("filters").get<std::size_t>();
      l.kernel = j.at("kernel").get<std::size_t>();
      l.stride = j.value("stride", std::size_t{1});
      l.padding = nn::padding_from_string(j.value("padding", std::string("same")));
      break;
    case LayerKind::maxpool2d:
      l.pool = j.at("pool").get<std::size_t>();
      l.stride = j.value("stride", l.pool);
      break;
    case LayerKind::dense:
      l.filters = j.at("units").get<std::size_t>();
      break;
    case LayerKind::batchnorm:
      l.eps = j.value("eps", 1e-5);
      l.momentum = j.value("momentum", 0.9);
      break;
    case LayerKind::residual_block_v1:
    case LayerKind::residual_block_v2:
      l.bottleneck = j.at("bottleneck").get<std::size_t>();
      l.filters = j.at("filters").get<std::size_t>();
      l.stride = j.value("stride", std::size_t{1});
      l.eps = j.value("eps", 1e-5);
      l.momentum = j.value("momentum", 0.9);
      break;
    case LayerKind::global_avg_pool:
    case LayerKind::relu:
      break;
  }
  return l;
}

}  // namespace

std::string architecture_to_json(const ArchitectureConfig& config) {
  json layers = json::array();
  for (const auto& l : config.layers) layers.push_back(layer_to_json(l));
  const json j{{"schema_version", 1},       {"name", config.name}, {"input_shape", config.input_shape},
               {"classes", config.classes}, {"tap", config.tap},   {"layers", std::move(layers)}};
  return j.dump();
}

ArchitectureConfig architecture_from_json(const std::string& text) {
  ArchitectureConfig c;
  try {
    const json j = json::parse(text);
    if (j.value("schema_version", 0) != 1) throw std::invalid_argument("unsupported architecture schema_version");
    c.name = j.at("name").get<std::string>();
    c.input_shape = j.at("input_shape").get<Shape>();
    c.classes = j.at("classes").get<std::size_t>();
    c.tap = j.at("tap").get<std::string>();
    for (const auto& l : j.at("layers")) c.layers.push_back(layer_from_json(l));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed architecture JSON: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace fundus::models
