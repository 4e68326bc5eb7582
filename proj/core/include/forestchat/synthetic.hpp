#pragma once

#include <cstdint>
#include <vector>

#include "forestchat/raster.hpp"

namespace forestchat {

struct PixelRect {
  int row;
  int col;
  int height;
  int width;
};

/// Parameters for a synthetic forest scene where the listed rectangles are
/// cleared (forest replaced by bare soil) in the second epoch.
struct SyntheticSpec {
  int width = 256;
  int height = 256;
  std::vector<PixelRect> clearings;
  /// Standard deviation of additive Gaussian noise on the 8-bit scale,
  /// drawn independently for each epoch, pixel and channel.
  double noise_sigma = 0.0;
  std::uint32_t seed = 7;
};

struct SyntheticPair {
  ImagePair pair;
  ChangeMask truth;
};

/// Deterministic for a given spec.
SyntheticPair make_synthetic_forest_pair(const SyntheticSpec& spec);

}  // namespace forestchat
