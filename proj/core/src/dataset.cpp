#include "fundus/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "fundus/error.hpp"
#include "fundus/io.hpp"

namespace fundus::data {

std::string_view to_string(Label label) {
  return label == Label::healthy ? "healthy" : "macular_degeneration";
}

Label label_from_string(std::string_view text) {
  if (text == "healthy") return Label::healthy;
  if (text == "macular_degeneration") return Label::macular_degeneration;
  throw std::invalid_argument("unknown label '" + std::string(text) + "'");
}

std::size_t Manifest::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const ManifestRecord& r) { return r.label == label; }));
}

Manifest parse_manifest(std::string_view text) {
  constexpr std::string_view kHeader = "path,label";
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const std::size_t end = text.find('\n', pos);
    line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    return true;
  };

  std::string_view line;
  if (!next_line(line) || line != kHeader) throw FormatError("manifest must start with header 'path,label'", 0);
  Manifest m;
  std::set<std::string, std::less<>> seen;
  std::size_t line_start = pos;
  while (next_line(line)) {
    if (line.empty()) {
      if (pos >= text.size()) break;
      throw FormatError("empty manifest line", line_start);
    }
    const std::size_t comma = line.rfind(',');
    if (comma == std::string_view::npos || comma == 0) throw FormatError("manifest line needs 'path,label'", line_start);
    ManifestRecord r;
    r.path = std::string(line.substr(0, comma));
    try {
      r.label = label_from_string(line.substr(comma + 1));
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), line_start + comma + 1);
    }
    if (!seen.insert(r.path).second) throw FormatError("duplicate manifest path '" + r.path + "'", line_start);
    m.records.push_back(std::move(r));
    line_start = pos;
  }
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  std::string out = "path,label\n";
  for (const auto& r : manifest.records) {
    out += r.path;
    out += ',';
    out += to_string(r.label);
    out += '\n';
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(io::read_text_file(path));
  } catch (const FormatError& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  io::write_file_atomic(path, format_manifest(manifest));
}

namespace {

std::vector<std::size_t> indices_of(const Manifest& m, Label label) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].label == label) idx.push_back(i);
  return idx;
}

Manifest select(const Manifest& m, std::vector<std::size_t> keep) {
  std::sort(keep.begin(), keep.end());
  Manifest out;
  for (auto i : keep) out.records.push_back(m.records[i]);
  return out;
}

}  // namespace

Manifest balance_downsample(const Manifest& manifest, Rng& rng) {
  auto healthy = indices_of(manifest, Label::healthy);
  auto md = indices_of(manifest, Label::macular_degeneration);
  if (healthy.empty() || md.empty()) throw DataError("balancing needs records of both classes");
  if (healthy.size() == md.size()) return manifest;
  auto& majority = healthy.size() > md.size() ? healthy : md;
  const auto& minority = healthy.size() > md.size() ? md : healthy;
  shuffle(majority, rng);
  majority.resize(minority.size());
  std::vector<std::size_t> keep = healthy;
  keep.insert(keep.end(), md.begin(), md.end());
  return select(manifest, std::move(keep));
}

std::size_t train_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * ratio - 1e-9));
}

SplitSpec stratified_split(const Manifest& manifest, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw std::invalid_argument("train ratio must lie in (0, 1)");
  SplitSpec spec;
  spec.seed = seed;
  spec.train_ratio = train_ratio;
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (Label label : {Label::healthy, Label::macular_degeneration}) {
    auto idx = indices_of(manifest, label);
    if (idx.size() < 2)
      throw DataError("class '" + std::string(to_string(label)) + "' has " + std::to_string(idx.size()) +
                    " records; splitting needs at least 2");
    shuffle(idx, rng);
    const std::size_t k = train_count(idx.size(), train_ratio);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  spec.train = select(manifest, std::move(train));
  spec.test = select(manifest, std::move(test));
  return spec;
}

std::vector<Sample> load_samples(const Manifest& manifest, const std::filesystem::path& root) {
  std::vector<Sample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) samples.push_back({load_ppm(root / r.path), r.label, r.path});
  return samples;
}

}  // namespace fundus::data
