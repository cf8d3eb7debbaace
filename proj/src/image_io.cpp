#include "panodepth/image_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace panodepth {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Cursor over a Netpbm-style ASCII header.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view token(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) ++pos_;
    if (pos_ == start) throw ParseError(std::string("missing ") + what, start);
    return bytes_.substr(start, pos_ - start);
  }

  long integer(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    const std::string_view tok = token(what);
    long value = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || value <= 0) {
      throw ParseError(std::string("invalid ") + what + " '" + std::string(tok) + "'", start);
    }
    return value;
  }

  // Exactly one whitespace byte separates the header from the payload.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      throw ParseError("expected single whitespace after header", pos_);
    }
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string encode_netpbm(const Image8& img, const char* magic, int channels) {
  if (img.channels() != channels) {
    throw ShapeError(std::string(magic) + " needs " + std::to_string(channels) + " channel(s)");
  }
  std::ostringstream out;
  out << magic << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  std::string bytes = out.str();
  bytes.append(reinterpret_cast<const char*>(img.data().data()), img.data().size());
  return bytes;
}

Image8 decode_netpbm(std::string_view bytes, std::string_view magic, int channels) {
  HeaderReader reader(bytes);
  const std::string_view tag = reader.token("magic number");
  if (tag != magic) {
    throw ParseError("expected magic '" + std::string(magic) + "', found '" + std::string(tag) + "'", 0);
  }
  const long width = reader.integer("width");
  const long height = reader.integer("height");
  const std::size_t maxval_at = reader.position();
  if (reader.integer("maxval") != 255) throw ParseError("only maxval 255 is supported", maxval_at);
  reader.end_of_header();
  const std::size_t offset = reader.position();
  const std::size_t need = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() - offset < need) {
    throw ParseError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - offset),
                     bytes.size());
  }
  Image8 img(static_cast<int>(width), static_cast<int>(height), channels);
  std::memcpy(img.data().data(), bytes.data() + offset, need);
  return img;
}

std::uint32_t to_little_endian(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    x = (x >> 24) | ((x >> 8) & 0xFF00u) | ((x << 8) & 0xFF0000u) | (x << 24);
  }
  return x;
}

}  // namespace

std::string encode_ppm(const Image8& img) { return encode_netpbm(img, "P6", 3); }
Image8 decode_ppm(std::string_view bytes) { return decode_netpbm(bytes, "P6", 3); }
std::string encode_pgm(const Image8& img) { return encode_netpbm(img, "P5", 1); }
Image8 decode_pgm(std::string_view bytes) { return decode_netpbm(bytes, "P5", 1); }

std::string encode_pfm(const Image<float>& img) {
  if (img.channels() != 1) throw ShapeError("PFM writer supports grayscale only");
  std::ostringstream header;
  header << "Pf\n" << img.width() << ' ' << img.height() << "\n-1.0\n";
  std::string bytes = header.str();
  const std::size_t offset = bytes.size();
  bytes.resize(offset + img.size() * 4);
  char* out = bytes.data() + offset;
  for (int v = img.height() - 1; v >= 0; --v) {
    for (int u = 0; u < img.width(); ++u) {
      const std::uint32_t word = to_little_endian(std::bit_cast<std::uint32_t>(img.at(u, v)));
      std::memcpy(out, &word, 4);
      out += 4;
    }
  }
  return bytes;
}

Image<float> decode_pfm(std::string_view bytes) {
  HeaderReader reader(bytes);
  const std::string_view tag = reader.token("magic number");
  if (tag == "PF") throw ParseError("color PFM ('PF') is not supported", 0);
  if (tag != "Pf") throw ParseError("expected magic 'Pf', found '" + std::string(tag) + "'", 0);
  const long width = reader.integer("width");
  const long height = reader.integer("height");
  const std::size_t scale_at = reader.position();
  const std::string_view scale_tok = reader.token("scale");
  double scale = 0.0;
  auto [ptr, ec] = std::from_chars(scale_tok.data(), scale_tok.data() + scale_tok.size(), scale);
  if (ec != std::errc() || ptr != scale_tok.data() + scale_tok.size() || scale == 0.0) {
    throw ParseError("invalid scale '" + std::string(scale_tok) + "'", scale_at);
  }
  if (scale > 0.0) {
    throw ParseError("big-endian PFM (positive scale) is not supported", scale_at);
  }
  reader.end_of_header();
  const std::size_t offset = reader.position();
  const std::size_t need = static_cast<std::size_t>(width) * height * 4;
  if (bytes.size() - offset < need) {
    throw ParseError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - offset),
                     bytes.size());
  }
  Image<float> img(static_cast<int>(width), static_cast<int>(height), 1);
  const char* in = bytes.data() + offset;
  for (int v = img.height() - 1; v >= 0; --v) {
    for (int u = 0; u < img.width(); ++u) {
      std::uint32_t word;
      std::memcpy(&word, in, 4);
      img.at(u, v) = std::bit_cast<float>(to_little_endian(word));
      in += 4;
    }
  }
  return img;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return buffer.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Image8 quantize(const ColorImage& img) {
  Image8 out(img.width(), img.height(), img.channels());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float c = std::clamp(img.data()[i], 0.0f, 1.0f);
    out.data()[i] = static_cast<std::uint8_t>(std::lround(255.0f * c));
  }
  return out;
}

ColorImage dequantize(const Image8& img) {
  ColorImage out(img.width(), img.height(), img.channels());
  for (std::size_t i = 0; i < img.size(); ++i) out.data()[i] = img.data()[i] / 255.0f;
  return out;
}

namespace {

template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

}  // namespace

void save_color(const std::string& path, const ColorImage& img) {
  write_file(path, encode_ppm(quantize(img)));
}

ColorImage load_color(const std::string& path) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] { return dequantize(decode_ppm(bytes)); });
}

void save_depth(const std::string& path, const DepthMap& depth) {
  write_file(path, encode_pfm(depth));
}

DepthMap load_depth(const std::string& path) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] { return decode_pfm(bytes); });
}

void save_mask(const std::string& path, const ValidityMask& mask) {
  Image8 out(mask.width(), mask.height(), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] = mask.data()[i] ? 255 : 0;
  write_file(path, encode_pgm(out));
}

ValidityMask load_mask(const std::string& path) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] {
    Image8 raw = decode_pgm(bytes);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const std::uint8_t value = raw.data()[i];
      if (value != 0 && value != 255) {
        throw ParseError("mask value " + std::to_string(value) + " is neither 0 nor 255",
                         bytes.size() - raw.size() + i);
      }
      raw.data()[i] = value ? 1 : 0;
    }
    return raw;
  });
}

}  // namespace panodepth
