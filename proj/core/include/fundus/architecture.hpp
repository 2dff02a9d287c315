#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fundus/layer.hpp"
#include "fundus/tensor.hpp"

namespace fundus::models {

// Ordered layer stack plus the metadata needed to run and explain it.
struct ArchitectureConfig {
  std::string name;
  Shape input_shape;  // (C, H, W)
  std::vector<nn::LayerSpec> layers;
  std::string tap;          // layer whose 4-D output feeds Grad-CAM
  std::size_t classes = 2;  // 0 marks a backbone that ends in a feature map

  bool operator==(const ArchitectureConfig&) const = default;
};

// Per-sample output shape of every layer, in order. Throws when the chain is
// broken, names collide, the tap is missing or not 4-D, or the final shape is
// not (classes) / a feature map for backbones.
std::vector<Shape> shape_trace(const ArchitectureConfig& config);
void validate(const ArchitectureConfig& config);

inline constexpr std::array<std::size_t, 6> kCnn6Filters{32, 64, 64, 64, 128, 128};

// Six conv(3x3, same) + ReLU + maxpool(2, 2) stages, GAP, dense -> classes.
ArchitectureConfig build_cnn6(std::size_t input_size, const std::array<std::size_t, 6>& filters = kCnn6Filters,
                              std::string name = "cnn6");

enum class ResNetVersion { v1, v2 };

struct Ratio {
  std::size_t num = 1;
  std::size_t den = 1;
};

// Block counts per stage for depths 50, 101 and 152.
std::array<std::size_t, 4> resnet_stage_blocks(int depth);

// Bottleneck ResNet ending in its final feature map. Widths (stem 64, stages
// 64/128/256/512 with 4x expansion) are scaled by the multiplier and must stay
// integral.
ArchitectureConfig build_resnet_backbone(int depth, ResNetVersion version, Ratio multiplier = {},
                                         std::size_t input_size = 299);

// Appends conv+ReLU+maxpool twice, GAP, dense+ReLU and the logits layer.
ArchitectureConfig attach_hybrid_head(const ArchitectureConfig& backbone,
                                      std::pair<std::size_t, std::size_t> conv_filters = {256, 128},
                                      std::pair<std::size_t, std::size_t> dense_widths = {64, 2});

// Named configurations: cnn6, cnn6-tiny, resnet{50,101,152}[v2], resnet50-w8.
ArchitectureConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Trainable parameters: every parameter except batchnorm running statistics.
std::size_t count_parameters(const ArchitectureConfig& config);

std::string architecture_to_json(const ArchitectureConfig& config);
ArchitectureConfig architecture_from_json(const std::string& text);

}  // namespace fundus::models
