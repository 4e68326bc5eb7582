#include "forestchat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace forestchat {

namespace {

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace

SyntheticPair make_synthetic_forest_pair(const SyntheticSpec& spec) {
  const int w = spec.width;
  const int h = spec.height;
  std::vector<std::uint8_t> truth(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  for (const auto& rect : spec.clearings) {
    for (int r = std::max(0, rect.row); r < std::min(h, rect.row + rect.height); ++r) {
      for (int c = std::max(0, rect.col); c < std::min(w, rect.col + rect.width); ++c) {
        truth[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c)] = 1;
      }
    }
  }

  std::mt19937 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  auto jitter = [&] { return spec.noise_sigma > 0.0 ? noise(rng) : 0.0; };

  Raster before(w, h, 3);
  Raster after(w, h, 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // Canopy texture: smooth undulation in brightness and greenness.
      const double canopy = 10.0 * std::sin(r * 0.21) * std::cos(c * 0.17) +
                            6.0 * std::sin((r + 2 * c) * 0.05);
      const double forest[3] = {38.0 + 0.4 * canopy, 104.0 + canopy, 42.0 + 0.3 * canopy};
      const double soil_var = 5.0 * std::sin(r * 0.3 + c * 0.11);
      const double soil[3] = {138.0 + soil_var, 102.0 + 0.8 * soil_var, 70.0 + 0.5 * soil_var};
      const bool cleared =
          truth[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c)] != 0;
      for (int ch = 0; ch < 3; ++ch) {
        before.at(r, c, ch) = clamp_u8(forest[ch] + jitter());
        after.at(r, c, ch) = clamp_u8((cleared ? soil[ch] : forest[ch]) + jitter());
      }
    }
  }
  SyntheticPair out;
  out.pair = make_image_pair("synthetic", std::move(before), std::move(after));
  out.truth = ChangeMask(w, h, std::move(truth), MaskProvenance::GroundTruth, ClassDomain::Binary);
  return out;
}

}  // namespace forestchat
