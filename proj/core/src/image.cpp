#include "fundus/image.hpp"

#include <cctype>
#include <string>

#include "fundus/error.hpp"
#include "fundus/io.hpp"

namespace fundus::data {

namespace {

constexpr std::size_t kMaxDimension = 1u << 16;

struct HeaderReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > kMaxDimension * 16) throw FormatError(std::string("netpbm ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("netpbm header: expected ") + what, start);
    return value;
  }
};

struct Header {
  std::size_t width, height, payload_offset;
};

Header read_header(std::span<const std::uint8_t> bytes, char kind) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != kind)
    throw FormatError(std::string("not a binary netpbm file: expected magic P") + kind, 0);
  HeaderReader r{bytes, 2};
  if (r.pos < bytes.size() && !std::isspace(bytes[r.pos]) && bytes[r.pos] != '#')
    throw FormatError("netpbm header: expected whitespace after magic", r.pos);
  const std::size_t width_at = r.pos;
  const std::size_t width = r.number("width");
  const std::size_t height = r.number("height");
  if (width == 0 || height == 0 || width > kMaxDimension || height > kMaxDimension)
    throw FormatError("netpbm header: invalid dimensions " + std::to_string(width) + "x" + std::to_string(height),
                      width_at);
  r.skip_space_and_comments();
  const std::size_t maxval_at = r.pos;
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) throw FormatError("netpbm maxval " + std::to_string(maxval) + " unsupported (need 255)", maxval_at);
  if (r.pos >= bytes.size() || !std::isspace(bytes[r.pos]))
    throw FormatError("netpbm header: expected single whitespace after maxval", r.pos);
  return {width, height, r.pos + 1};
}

std::span<const std::uint8_t> payload(std::span<const std::uint8_t> bytes, const Header& h, std::size_t channels) {
  const std::size_t needed = h.width * h.height * channels;
  const std::size_t available = bytes.size() > h.payload_offset ? bytes.size() - h.payload_offset : 0;
  if (available < needed)
    throw FormatError("truncated netpbm payload: expected " + std::to_string(needed) + " bytes, got " +
                          std::to_string(available),
                      h.payload_offset + available);
  return bytes.subspan(h.payload_offset, needed);
}

std::vector<std::uint8_t> header_bytes(char kind, std::size_t width, std::size_t height) {
  const std::string header =
      std::string("P") + kind + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  return {header.begin(), header.end()};
}

}  // namespace

Image read_ppm(std::span<const std::uint8_t> bytes) {
  const Header h = read_header(bytes, '6');
  const auto data = payload(bytes, h, 3);
  Image img;
  img.width = h.width;
  img.height = h.height;
  img.pixels.assign(data.begin(), data.end());
  return img;
}

std::vector<std::uint8_t> write_ppm(const Image& image) {
  if (image.pixels.size() != image.width * image.height * 3)
    throw std::invalid_argument("image pixel buffer does not match its dimensions");
  auto out = header_bytes('6', image.width, image.height);
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage read_pgm(std::span<const std::uint8_t> bytes) {
  const Header h = read_header(bytes, '5');
  const auto data = payload(bytes, h, 1);
  return {h.width, h.height, {data.begin(), data.end()}};
}

std::vector<std::uint8_t> write_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height)
    throw std::invalid_argument("gray image buffer does not match its dimensions");
  auto out = header_bytes('5', image.width, image.height);
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image load_ppm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return read_ppm(bytes);
  } catch (const FormatError& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void save_ppm(const std::filesystem::path& path, const Image& image) { io::write_file_atomic(path, write_ppm(image)); }

void save_pgm(const std::filesystem::path& path, const GrayImage& image) {
  io::write_file_atomic(path, write_pgm(image));
}

}  // namespace fundus::data
