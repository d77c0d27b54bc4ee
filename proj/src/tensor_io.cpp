#include "ddrmpr/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "ddrmpr/errors.hpp"

namespace ddrmpr {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'R', 'T'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_dprt(const Tensor& t) {
  const std::size_t width = t.dtype == Tensor::DType::f32_complex ? 2 : 1;
  if (t.values.size() != t.element_count() * width) {
    throw ShapeError("encode_dprt: payload length does not match dims");
  }
  if (t.dims.size() > 255) throw ShapeError("encode_dprt: rank exceeds 255");
  std::vector<std::uint8_t> out;
  out.reserve(7 + 4 * t.dims.size() + 4 * t.values.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_dprt(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("DPRT: bad magic");
  }
  if (bytes[4] != kVersion) throw FormatError("DPRT: unsupported version");
  if (bytes[5] > 1) throw FormatError("DPRT: unknown dtype");
  Tensor t;
  t.dtype = static_cast<Tensor::DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  std::size_t pos = 7;
  if (bytes.size() < pos + 4 * rank) throw FormatError("DPRT: truncated header");
  for (std::size_t i = 0; i < rank; ++i, pos += 4) t.dims.push_back(get_u32(&bytes[pos]));
  const std::size_t count =
      t.element_count() * (t.dtype == Tensor::DType::f32_complex ? 2 : 1);
  if (bytes.size() != pos + 4 * count) throw FormatError("DPRT: payload length mismatch");
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i, pos += 4) {
    t.values[i] = std::bit_cast<float>(get_u32(&bytes[pos]));
  }
  return t;
}

void write_dprt(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_dprt(t));
}

Tensor read_dprt(const std::filesystem::path& path) { return decode_dprt(read_file_bytes(path)); }

Tensor to_tensor(const RealImage& img) {
  Tensor t;
  t.dtype = Tensor::DType::f32_real;
  t.dims = {static_cast<std::uint32_t>(img.height()), static_cast<std::uint32_t>(img.width()),
            static_cast<std::uint32_t>(img.channels())};
  t.values.reserve(img.size());
  for (double v : img.values()) t.values.push_back(static_cast<float>(v));
  return t;
}

RealImage image_from_tensor(const Tensor& t, ValueRange range) {
  if (t.dtype != Tensor::DType::f32_real) throw FormatError("DPRT: expected a real tensor");
  std::size_t h = 0, w = 0, c = 1;
  if (t.dims.size() == 3) {
    h = t.dims[0], w = t.dims[1], c = t.dims[2];
  } else if (t.dims.size() == 2) {
    h = t.dims[0], w = t.dims[1];
  } else if (t.dims.size() == 1) {
    h = t.dims[0], w = 1;
  } else {
    throw FormatError("DPRT: image tensors must have rank 1..3");
  }
  std::vector<double> data(t.values.begin(), t.values.end());
  return RealImage(h, w, c, std::move(data), range);
}

Tensor to_tensor(const ComplexField& field) {
  Tensor t;
  t.dtype = Tensor::DType::f32_complex;
  t.dims = {static_cast<std::uint32_t>(field.height()), static_cast<std::uint32_t>(field.width())};
  t.values.reserve(2 * field.size());
  for (const Complex& z : field.values()) {
    t.values.push_back(static_cast<float>(z.real()));
    t.values.push_back(static_cast<float>(z.imag()));
  }
  return t;
}

ComplexField field_from_tensor(const Tensor& t) {
  if (t.dtype != Tensor::DType::f32_complex || t.dims.size() != 2) {
    throw FormatError("DPRT: expected a rank-2 complex tensor");
  }
  std::vector<Complex> data(t.element_count());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = {t.values[2 * i], t.values[2 * i + 1]};
  return ComplexField(t.dims[0], t.dims[1], std::move(data));
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  thread_local std::mt19937_64 tag_rng{std::random_device{}()};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(tag_rng() & 0xffffffu);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into place: " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace ddrmpr
