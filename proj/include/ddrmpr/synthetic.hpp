#pragma once

#include <cstddef>

#include "ddrmpr/field_ops.hpp"
#include "ddrmpr/rng.hpp"

namespace ddrmpr {

/// Piecewise-constant test image: 3 to 5 axis-aligned rectangles with values
/// in [0.2, 1] painted over a zero background, identical in every channel.
RealImage piecewise_constant_image(std::size_t height, std::size_t width, std::size_t channels,
                                   Rng& rng);

}  // namespace ddrmpr
