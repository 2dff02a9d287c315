#include "fundus/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace fundus::data {

BlobSample make_blob_image(Label label, Rng& rng, const BlobOptions& options) {
  const double size = static_cast<double>(options.size);
  const double margin = 2.0 * options.sigma;
  BlobSample s;
  s.label = label;
  s.center_x = margin + rng.uniform() * (size - 1.0 - 2.0 * margin);
  s.center_y = margin + rng.uniform() * (size - 1.0 - 2.0 * margin);
  constexpr double kBase[3] = {150.0, 110.0, 90.0};
  const double sign = label == Label::macular_degeneration ? 1.0 : -1.0;

  s.image = Image(options.size, options.size);
  for (std::size_t y = 0; y < options.size; ++y) {
    for (std::size_t x = 0; x < options.size; ++x) {
      const double dx = static_cast<double>(x) - s.center_x, dy = static_cast<double>(y) - s.center_y;
      const double blob = sign * options.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * options.sigma * options.sigma));
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = (rng.uniform() * 2.0 - 1.0) * options.noise;
        s.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(kBase[c] + blob + noise + 0.5), 0.0, 255.0));
      }
    }
  }
  auto lo = [&](double c) { return static_cast<std::size_t>(std::max(0.0, std::floor(c - margin))); };
  auto hi = [&](double c) { return static_cast<std::size_t>(std::min(size - 1.0, std::ceil(c + margin))); };
  s.box = {lo(s.center_x), lo(s.center_y), hi(s.center_x), hi(s.center_y)};
  return s;
}

std::vector<BlobSample> make_blob_corpus(std::size_t count, std::uint64_t seed, const BlobOptions& options) {
  std::vector<BlobSample> corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix(seed ^ i));
    corpus.push_back(make_blob_image(i % 2 == 0 ? Label::macular_degeneration : Label::healthy, rng, options));
  }
  return corpus;
}

Box dilate(const Box& box, std::size_t amount, std::size_t width, std::size_t height) {
  return {box.x0 > amount ? box.x0 - amount : 0, box.y0 > amount ? box.y0 - amount : 0,
          std::min(box.x1 + amount, width - 1), std::min(box.y1 + amount, height - 1)};
}

}  // namespace fundus::data
