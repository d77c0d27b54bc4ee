#include "ddrmpr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "ddrmpr/errors.hpp"
#include "ddrmpr/tensor_io.hpp"

namespace ddrmpr {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

bool is_png(const std::vector<std::uint8_t>& b) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

RealImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError("cannot decode PNG " + name + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  // 8-bit sRGB output; 16-bit inputs are reduced by libpng.
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t c = color ? 3 : 1;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG " + name + ": " + img.message);
  }
  RealImage out(img.height, img.width, c, ValueRange::unit);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i] / 255.0;
  png_image_free(&img);
  return out;
}

// Whitespace/comment-aware PNM header token.
std::size_t pnm_token(const std::vector<std::uint8_t>& b, std::size_t& pos,
                      const std::string& name) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t v = 0, digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (++digits > 9) throw FormatError("PNM " + name + ": number too large");
  }
  if (!digits) throw FormatError("PNM " + name + ": malformed header");
  return v;
}

RealImage decode_pnm(const std::vector<std::uint8_t>& b, const std::string& name) {
  if (b.size() < 2 || b[0] != 'P') throw FormatError(name + ": not a PNG or PNM file");
  const char kind = static_cast<char>(b[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw FormatError("PNM " + name + ": unsupported variant P" + std::string(1, kind));
  }
  const std::size_t c = (kind == '3' || kind == '6') ? 3 : 1;
  std::size_t pos = 2;
  const std::size_t w = pnm_token(b, pos, name), h = pnm_token(b, pos, name);
  const std::size_t maxval = pnm_token(b, pos, name);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw FormatError("PNM " + name + ": invalid dimensions or maxval");
  }
  RealImage out(h, w, c, ValueRange::unit);
  const double denom = static_cast<double>(maxval);
  if (kind == '2' || kind == '3') {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t v = pnm_token(b, pos, name);
      if (v > maxval) throw FormatError("PNM " + name + ": sample exceeds maxval");
      out[i] = static_cast<double>(v) / denom;
    }
    return out;
  }
  ++pos;  // single whitespace byte after maxval
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (b.size() < pos + out.size() * bps) throw FormatError("PNM " + name + ": truncated data");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t v = bps == 1 ? b[pos + i] : (b[pos + 2 * i] << 8) | b[pos + 2 * i + 1];
    out[i] = static_cast<double>(std::min(v, maxval)) / denom;
  }
  return out;
}

std::vector<std::uint8_t> quantize(const RealImage& img) {
  std::vector<std::uint8_t> q(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i], 0.0, 1.0);
    q[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return q;
}

}  // namespace

RealImage read_image(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return is_png(bytes) ? decode_png(bytes, path.string()) : decode_pnm(bytes, path.string());
}

void write_image(const std::filesystem::path& path, const RealImage& img) {
  const std::size_t c = img.channels();
  if (c != 1 && c != 3) throw ShapeError("write_image: need 1 or 3 channels");
  if (img.empty()) throw ShapeError("write_image: empty image");
  const std::vector<std::uint8_t> q = quantize(img);
  const std::string ext = lower_ext(path);
  std::vector<std::uint8_t> out;
  if (ext == ".png") {
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width());
    pi.height = static_cast<png_uint_32>(img.height());
    pi.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, q.data(), 0, nullptr)) {
      throw IoError(std::string("cannot encode PNG: ") + pi.message);
    }
    out.resize(size);
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, q.data(), 0, nullptr)) {
      throw IoError(std::string("cannot encode PNG: ") + pi.message);
    }
    out.resize(size);
  } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    if (ext == ".pgm" && c != 1) throw ShapeError("write_image: .pgm needs one channel");
    if (ext == ".ppm" && c != 3) throw ShapeError("write_image: .ppm needs three channels");
    const std::string header = std::string(c == 3 ? "P6" : "P5") + "\n" +
                               std::to_string(img.width()) + " " +
                               std::to_string(img.height()) + "\n255\n";
    out.assign(header.begin(), header.end());
    out.insert(out.end(), q.begin(), q.end());
  } else {
    throw ArgumentError("write_image: unsupported extension '" + ext + "'");
  }
  write_file_atomic(path, out);
}

}  // namespace ddrmpr
