#include "fundus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "fundus/error.hpp"
#include "fundus/io.hpp"

namespace fundus::io {

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'D', 'G', 'C'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void context(std::string what) { context_ = std::move(what); }
  std::size_t offset() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n)
      throw FormatError("truncated checkpoint while reading " + context_, bytes_.size());
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  double f64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string text() {
    const std::uint32_t n = u32();
    const auto s = take(n);
    return {s.begin(), s.end()};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const models::Model& model) {
  Writer w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.text(models::architecture_to_json(model.config()));
  const auto& entries = model.params().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.text(e.name);
    w.u8(static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.value.values()) w.f64(v);
  }
  return w.take();
}

models::Model load_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.context("magic");
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic", 0);
  r.context("format version");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);

  r.context("architecture");
  const std::size_t arch_at = r.offset();
  const std::string arch_json = r.text();
  models::ArchitectureConfig config;
  try {
    config = models::architecture_from_json(arch_json);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid embedded architecture: ") + e.what(), arch_at);
  }

  r.context("tensor count");
  const std::uint32_t count = r.u32();
  nn::ParamStore params;
  for (std::uint32_t t = 0; t < count; ++t) {
    r.context("tensor #" + std::to_string(t) + " name");
    const std::string name = r.text();
    r.context("tensor '" + name + "'");
    const std::size_t rank = r.u8();
    if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0", r.offset() - 1);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t shape_at = r.offset();
    std::size_t n = 1;
    for (auto d : shape) {
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension", shape_at);
      n *= d;
    }
    if (n > (bytes.size() - r.offset()) / 8)
      throw FormatError("truncated checkpoint while reading tensor '" + name + "'", bytes.size());
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    try {
      params.add(name, Tensor(shape, std::move(values)), true);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), shape_at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after the last tensor", r.offset());
  try {
    return models::Model::from_parameters(std::move(config), std::move(params));
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint does not match its architecture: ") + e.what(), r.offset());
  }
}

void write_checkpoint(const std::filesystem::path& path, const models::Model& model) {
  write_file_atomic(path, save_checkpoint(model));
}

models::Model read_checkpoint(const std::filesystem::path& path) { return load_checkpoint(read_file(path)); }

}  // namespace fundus::io
