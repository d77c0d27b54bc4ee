#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddrmpr/field_ops.hpp"

namespace ddrmpr {

/// In-memory form of a DPRT file:
///   "DPRT" | u8 version=1 | u8 dtype | u8 rank | rank x u32 dims | payload
/// All integers and f32 values are little-endian. Complex payloads are
/// interleaved (re, im).
struct Tensor {
  enum class DType : std::uint8_t { f32_real = 0, f32_complex = 1 };

  DType dtype = DType::f32_real;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;  // element count * (complex ? 2 : 1)

  std::size_t element_count() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::vector<std::uint8_t> encode_dprt(const Tensor& t);
Tensor decode_dprt(const std::vector<std::uint8_t>& bytes);

void write_dprt(const std::filesystem::path& path, const Tensor& t);
Tensor read_dprt(const std::filesystem::path& path);

/// Images are stored with dims [H, W, C].
Tensor to_tensor(const RealImage& img);
RealImage image_from_tensor(const Tensor& t, ValueRange range = ValueRange::unit);
/// Complex fields are stored with dims [H, W].
Tensor to_tensor(const ComplexField& field);
ComplexField field_from_tensor(const Tensor& t);

/// Writes via a temporary sibling file and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace ddrmpr
