#pragma once

#include <filesystem>

#include "ddrmpr/field_ops.hpp"

namespace ddrmpr {

/// Reads an 8/16-bit PNG or a binary/ASCII PGM/PPM into unit range. Gray
/// images give one channel, color images three; alpha is dropped.
RealImage read_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG (.png) or binary PGM/PPM (.pgm/.ppm/.pnm) atomically.
/// Values are clamped to [0, 1] and rounded; 1 or 3 channels.
void write_image(const std::filesystem::path& path, const RealImage& img);

}  // namespace ddrmpr
