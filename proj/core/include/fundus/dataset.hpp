#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/rng.hpp"

namespace fundus::data {

// Class indices: healthy = 0, macular_degeneration = 1 (the positive class).
enum class Label : std::uint8_t { healthy = 0, macular_degeneration = 1 };

std::string_view to_string(Label label);
Label label_from_string(std::string_view text);
inline std::size_t class_index(Label label) { return static_cast<std::size_t>(label); }

struct ManifestRecord {
  std::string path;
  Label label = Label::healthy;

  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::size_t count(Label label) const;
  bool operator==(const Manifest&) const = default;
};

// CSV with header `path,label`, LF line endings. Paths must be unique.
Manifest parse_manifest(std::string_view text);
std::string format_manifest(const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Subsamples the larger class to the size of the smaller one with a full
// Fisher-Yates shuffle of the larger class's records. Output keeps manifest
// order. Consumes n_majority - 1 draws.
Manifest balance_downsample(const Manifest& manifest, Rng& rng);

// ceil(n * ratio) with a 1e-9 guard against representation error.
std::size_t train_count(std::size_t n, double ratio);

struct SplitSpec {
  std::uint64_t seed = 0;
  double train_ratio = 0.0;
  Manifest train;
  Manifest test;
};

// Per class (healthy first), shuffle with one splitmix64 stream seeded by seed
// and put the first train_count(n, ratio) records in train. Both outputs keep
// manifest order.
SplitSpec stratified_split(const Manifest& manifest, double train_ratio, std::uint64_t seed);

struct Sample {
  Image image;
  Label label = Label::healthy;
  std::string path;
};

// Loads every record relative to root; throws DataError naming the first
// unreadable path.
std::vector<Sample> load_samples(const Manifest& manifest, const std::filesystem::path& root);

}  // namespace fundus::data
