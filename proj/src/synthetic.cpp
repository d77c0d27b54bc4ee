#include "ddrmpr/synthetic.hpp"

#include <algorithm>

#include "ddrmpr/errors.hpp"

namespace ddrmpr {

RealImage piecewise_constant_image(std::size_t height, std::size_t width, std::size_t channels,
                                   Rng& rng) {
  if (height < 3 || width < 3 || channels == 0) {
    throw ShapeError("piecewise_constant_image: need at least 3x3x1");
  }
  RealImage img(height, width, channels, ValueRange::unit);
  const auto pick = [&](std::size_t span) {
    return std::min(span - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(span)));
  };
  const std::size_t count = 3 + pick(3);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t y0 = pick(height - 2), x0 = pick(width - 2);
    const std::size_t rh = 2 + pick(height / 2), rw = 2 + pick(width / 2);
    const double v = 0.2 + 0.8 * rng.uniform();
    for (std::size_t y = y0; y < std::min(height, y0 + rh); ++y)
      for (std::size_t x = x0; x < std::min(width, x0 + rw); ++x)
        for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) = v;
  }
  return img;
}

}  // namespace ddrmpr
