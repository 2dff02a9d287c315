#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/rng.hpp"
#include "fundus/tensor.hpp"

namespace fundus::data {

inline constexpr int kDefaultCropThreshold = 15;

// Crops to the bounding box of pixels whose channel mean exceeds threshold.
// Images with no such pixel are returned unchanged.
Image crop_black_border(const Image& image, int threshold = kDefaultCropThreshold);

// Bilinear resampling of one float plane. Source coordinate per axis is
// (dst + 0.5) * src / dst - 0.5, clamped to [0, src - 1].
std::vector<double> resample_bilinear(std::span<const double> plane, std::size_t width, std::size_t height,
                                      std::size_t out_width, std::size_t out_height);

// Channel-wise resample_bilinear, rounded half-up to 8 bits.
Image resize_bilinear(const Image& image, std::size_t out_width, std::size_t out_height);

Image hflip(const Image& image);
Image vflip(const Image& image);

// Rotation about ((w-1)/2, (h-1)/2); positive angles turn the picture
// counter-clockwise as displayed. Each destination pixel is inverse-mapped and
// bilinearly sampled; sources outside the image are black. Multiples of 90
// degrees use exact trigonometry.
Image rotate(const Image& image, double angle_degrees);

struct AugmentPolicy {
  double hflip_probability = 0.5;
  double vflip_probability = 0.5;
  double max_rotation_degrees = 25.0;
};

// The three uniforms in [0, 1) that drive one augmentation, in draw order.
struct AugmentDraws {
  double hflip = 0.0;
  double vflip = 0.0;
  double angle = 0.5;
};

// hflip when draws.hflip < p, vflip likewise, then rotate by
// -max + 2 * max * draws.angle degrees.
Image augment(const Image& image, const AugmentDraws& draws, const AugmentPolicy& policy);
// Consumes exactly three draws.
Image augment(const Image& image, Rng& rng, const AugmentPolicy& policy);

// (3, H, W) with values / 255.
Tensor to_tensor(const Image& image);
// Inverse of to_tensor: scales by 255, rounds half-up, clamps.
Image from_tensor(const Tensor& tensor);

// Half-up rounding to a byte, clamped to [0, 255].
std::uint8_t round_byte(double value);
std::uint8_t quantize(double value01);

}  // namespace fundus::data
