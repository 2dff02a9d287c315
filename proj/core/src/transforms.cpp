#include "fundus/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fundus/error.hpp"

namespace fundus::data {

Image crop_black_border(const Image& image, int threshold) {
  if (threshold < 0 || threshold > 255) throw std::invalid_argument("crop threshold must lie in [0, 255]");
  std::size_t x0 = image.width, y0 = image.height, x1 = 0, y1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const int sum = image.at(x, y, 0) + image.at(x, y, 1) + image.at(x, y, 2);
      if (sum > 3 * threshold) {
        any = true;
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (!any) return image;
  Image out(x1 - x0 + 1, y1 - y0 + 1);
  for (std::size_t y = 0; y < out.height; ++y)
    std::copy_n(&image.pixels[((y0 + y) * image.width + x0) * 3], out.width * 3, &out.pixels[y * out.width * 3]);
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> axis_taps(std::size_t src, std::size_t dst) {
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  std::vector<Tap> taps(dst);
  for (std::size_t d = 0; d < dst; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    taps[d] = {lo, std::min(lo + 1, src - 1), s - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

std::uint8_t round_byte(double value) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(value + 0.5), 0.0, 255.0));
}

std::uint8_t quantize(double value01) { return round_byte(value01 * 255.0); }

std::vector<double> resample_bilinear(std::span<const double> plane, std::size_t width, std::size_t height,
                                      std::size_t out_width, std::size_t out_height) {
  if (width == 0 || height == 0 || out_width == 0 || out_height == 0)
    throw std::invalid_argument("resample dimensions must be >= 1");
  if (plane.size() != width * height) throw ShapeError("resample plane size does not match its dimensions");
  const auto tx = axis_taps(width, out_width);
  const auto ty = axis_taps(height, out_height);
  std::vector<double> out(out_width * out_height);
  for (std::size_t y = 0; y < out_height; ++y) {
    const auto& ry = ty[y];
    for (std::size_t x = 0; x < out_width; ++x) {
      const auto& rx = tx[x];
      const double top = plane[ry.lo * width + rx.lo] * (1.0 - rx.frac) + plane[ry.lo * width + rx.hi] * rx.frac;
      const double bottom = plane[ry.hi * width + rx.lo] * (1.0 - rx.frac) + plane[ry.hi * width + rx.hi] * rx.frac;
      out[y * out_width + x] = top * (1.0 - ry.frac) + bottom * ry.frac;
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t out_width, std::size_t out_height) {
  if (out_width == 0 || out_height == 0) throw std::invalid_argument("resize dimensions must be >= 1");
  Image out(out_width, out_height);
  std::vector<double> plane(image.width * image.height);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = image.pixels[i * 3 + c];
    const auto r = resample_bilinear(plane, image.width, image.height, out_width, out_height);
    for (std::size_t i = 0; i < r.size(); ++i) out.pixels[i * 3 + c] = round_byte(r[i]);
  }
  return out;
}

Image hflip(const Image& image) {
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

Image vflip(const Image& image) {
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    std::copy_n(&image.pixels[(image.height - 1 - y) * image.width * 3], image.width * 3,
                &out.pixels[y * image.width * 3]);
  return out;
}

Image rotate(const Image& image, double angle_degrees) {
  double cos_a = 0.0, sin_a = 0.0;
  const double quarter = angle_degrees / 90.0;
  if (std::isfinite(quarter) && quarter == std::round(quarter)) {
    const long k = ((static_cast<long>(std::fmod(std::round(quarter), 4.0)) % 4) + 4) % 4;
    constexpr double kCos[] = {1.0, 0.0, -1.0, 0.0};
    constexpr double kSin[] = {0.0, 1.0, 0.0, -1.0};
    cos_a = kCos[k];
    sin_a = kSin[k];
  } else {
    const double rad = angle_degrees * std::numbers::pi / 180.0;
    cos_a = std::cos(rad);
    sin_a = std::sin(rad);
  }

  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double max_x = static_cast<double>(image.width - 1), max_y = static_cast<double>(image.height - 1);
  constexpr double kEdge = 1e-9;
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      double sx = cx + dx * cos_a - dy * sin_a;
      double sy = cy + dx * sin_a + dy * cos_a;
      if (sx < -kEdge || sy < -kEdge || sx > max_x + kEdge || sy > max_y + kEdge) continue;
      sx = std::clamp(sx, 0.0, max_x);
      sy = std::clamp(sy, 0.0, max_y);
      const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1.0 - fx) + image.at(x1, y0, c) * fx;
        const double bottom = image.at(x0, y1, c) * (1.0 - fx) + image.at(x1, y1, c) * fx;
        out.at(x, y, c) = round_byte(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Image augment(const Image& image, const AugmentDraws& draws, const AugmentPolicy& policy) {
  Image out = draws.hflip < policy.hflip_probability ? hflip(image) : image;
  if (draws.vflip < policy.vflip_probability) out = vflip(out);
  const double angle = -policy.max_rotation_degrees + 2.0 * policy.max_rotation_degrees * draws.angle;
  if (angle != 0.0) out = rotate(out, angle);
  return out;
}

Image augment(const Image& image, Rng& rng, const AugmentPolicy& policy) {
  AugmentDraws draws;
  draws.hflip = rng.uniform();
  draws.vflip = rng.uniform();
  draws.angle = rng.uniform();
  return augment(image, draws, policy);
}

Tensor to_tensor(const Image& image) {
  Tensor t({3, image.height, image.width});
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = image.pixels[i * 3 + c] / 255.0;
  return t;
}

Image from_tensor(const Tensor& tensor) {
  if (tensor.rank() != 3 || tensor.dim(0) != 3)
    throw ShapeError("from_tensor expects (3, H, W), got " + shape_string(tensor.shape()));
  Image img(tensor.dim(2), tensor.dim(1));
  const std::size_t plane = img.width * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = quantize(tensor[c * plane + i]);
  return img;
}

}  // namespace fundus::data
