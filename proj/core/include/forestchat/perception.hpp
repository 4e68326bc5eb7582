#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "forestchat/raster.hpp"

namespace forestchat {

struct Dataset;

enum class ChangeDirection { Loss, Gain, Both };

std::string_view to_string(ChangeDirection direction);
/// Throws Error{InvalidArgument}.
ChangeDirection change_direction_from_string(std::string_view name);

struct DetectionParams {
  int kernel_radius = 1;
  int min_area_px = 16;
  ChangeDirection direction = ChangeDirection::Loss;
};

/// Real-valued grid, row-major.
struct ScalarField {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

/// Matches each channel of epoch B to epoch A's mean and standard deviation
/// with a linear map. Epoch A and zero-variance channels of B pass through.
ImagePair normalize_radiometry(const ImagePair& pair);
/// Same, with the statistics taken only over pixels where `sample` is
/// non-zero (row-major, one entry per pixel). An empty span means all pixels.
ImagePair normalize_radiometry(const ImagePair& pair, std::span<const std::uint8_t> sample);

/// Pixels left in the lower Otsu class of |excess_green(A) - excess_green(B)|,
/// as a 0/1 row-major vector; empty when that difference is constant.
std::vector<std::uint8_t> stable_pixels(const ImagePair& pair);

/// 2g - r - b on chromaticity-normalised RGB (0 where r+g+b = 0).
/// Throws Error{ChannelCountError} for non-RGB input.
ScalarField excess_green(const Raster& raster);

inline constexpr int kDefaultOtsuBins = 256;

/// Histogram split chosen by Otsu's criterion. Values in bins
/// [edge_index, bins) form the upper class.
struct OtsuSplit {
  double threshold = 0.0;
  int edge_index = 1;
  int bins = kDefaultOtsuBins;
  double min = 0.0;
  double max = 0.0;

  /// Histogram bin a value falls in, clamped to [0, bins).
  int bin_of(double value) const;
  bool upper(double value) const { return bin_of(value) >= edge_index; }
};

/// Histogram over [min, max]; returns the interior bin edge maximising
/// w0*w1*(mu0-mu1)^2, lowest edge on ties. The comparison is exact.
/// Throws Error{ConstantField} when min == max and Error{InvalidArgument}
/// for an empty field or fewer than 2 bins.
OtsuSplit otsu_split(const ScalarField& field, int bins = kDefaultOtsuBins);
double otsu_threshold(const ScalarField& field, int bins = kDefaultOtsuBins);

enum class MorphOp { Erode, Dilate, Open, Close };

/// Square structuring element of side 2r+1. Dilation sees out-of-bounds
/// pixels as background; erosion only considers in-bounds pixels, so the
/// image border never erodes a region on its own.
/// Throws Error{NonBinaryMask} or Error{InvalidArgument} for r < 0.
ChangeMask morph(const ChangeMask& mask, MorphOp op, int kernel_radius);

/// Removes 8-connected components smaller than min_area_px.
ChangeMask remove_small_components(const ChangeMask& mask, int min_area_px);

struct DetectionResult {
  ChangeMask mask;
  /// Set when the difference field was constant; the mask is then all zero.
  bool no_change_detected = false;
  double threshold = 0.0;
  std::vector<std::string> warnings;
};

/// Classical baseline: normalise radiometry on the stable pixels, difference the excess-green
/// index, Otsu-threshold it, open then close, drop small components.
/// Throws Error{ChannelCountError} for non-RGB pairs.
DetectionResult detect_changes(const ImagePair& pair, const DetectionParams& params = {});

/// Reads `<dir>/<pair_id>.png` for every entry id, binarises, checks the
/// shape against the entry's ground-truth mask. Throws
/// Error{MissingPrediction} naming the first absent id, or
/// Error{DimensionMismatch}.
std::map<std::string, ChangeMask> load_external_predictions(const std::filesystem::path& dir,
                                                            const Dataset& dataset,
                                                            const std::vector<std::string>& ids);
std::map<std::string, ChangeMask> load_external_predictions(const std::filesystem::path& dir,
                                                            const Dataset& dataset);

}  // namespace forestchat
