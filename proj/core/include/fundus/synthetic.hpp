#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fundus/dataset.hpp"
#include "fundus/image.hpp"
#include "fundus/rng.hpp"

namespace fundus::data {

// Inclusive pixel rectangle.
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Noisy background with one Gaussian blob. macular_degeneration images get a
// bright blob, healthy images a dark one. The blob's box spans +/- 2 sigma
// around its centre.
struct BlobSample {
  Image image;
  Label label = Label::healthy;
  double center_x = 0.0;
  double center_y = 0.0;
  Box box;
};

struct BlobOptions {
  std::size_t size = 64;
  double sigma = 4.0;
  double amplitude = 100.0;
  double noise = 16.0;
};

BlobSample make_blob_image(Label label, Rng& rng, const BlobOptions& options = {});

// Alternates classes starting with macular_degeneration; image i draws from
// Rng(mix(seed ^ i)).
std::vector<BlobSample> make_blob_corpus(std::size_t count, std::uint64_t seed, const BlobOptions& options = {});

Box dilate(const Box& box, std::size_t amount, std::size_t width, std::size_t height);

}  // namespace fundus::data
