#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

namespace fundus {

// splitmix64. Same seed gives the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept;

  // Uniform in [0, 1) with 53 bits of resolution; one draw.
  double uniform() noexcept;

  // Standard normal via Box-Muller (cosine branch only); two draws.
  double normal() noexcept;

  // Uniform index in [0, bound) by modulo reduction; one draw.
  std::uint64_t below(std::uint64_t bound) noexcept { return next() % bound; }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// First splitmix64 output for the given state. Used to derive independent
// per-item seeds, e.g. mix(seed ^ index).
std::uint64_t mix(std::uint64_t value) noexcept;

// Fisher-Yates with a descending index and modulo draw; consumes n-1 draws.
template <typename T>
void shuffle(T& items, Rng& rng) {
  if (items.size() < 2) return;
  for (std::size_t i = items.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    using std::swap;
    swap(items[i], items[j]);
  }
}

}  // namespace fundus
