#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forestchat/raster.hpp"

namespace forestchat {

enum class Connectivity { Four = 4, Eight = 8 };

struct BoundingBox {
  int min_row;
  int min_col;
  int max_row;
  int max_col;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Centroid {
  double row;
  double col;
};

/// Connected components of the changed pixels. Component ids run from 1 in
/// raster-scan order of each component's first pixel; 0 is background.
/// Per-component vectors are indexed by id - 1.
struct ComponentLabeling {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
  int num_components = 0;
  std::vector<std::int64_t> areas;
  std::vector<Centroid> centroids;
  std::vector<BoundingBox> bounding_boxes;

  std::int32_t at(int row, int col) const {
    return labels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(col)];
  }
};

/// Throws Error{NonBinaryMask}.
ComponentLabeling label_components(const ChangeMask& mask,
                                   Connectivity connectivity = Connectivity::Eight);

/// Cells of the 3x3 spatial partition, in northwest-to-southeast order.
enum class GridCell {
  Northwest,
  North,
  Northeast,
  West,
  Center,
  East,
  Southwest,
  South,
  Southeast,
};

inline constexpr std::size_t kGridCells = 9;

std::string_view to_string(GridCell cell);
std::optional<GridCell> grid_cell_from_string(std::string_view name);

/// Which 3x3 cell a pixel falls in. Each axis splits into three equal bands
/// of extent/3; the remainder goes to the last band.
GridCell grid_cell_of(int row, int col, int width, int height);

struct MaskStats {
  int width = 0;
  int height = 0;
  std::int64_t changed_pixels = 0;
  double change_percent = 0.0;
  int num_patches = 0;
  double largest_patch_percent = 0.0;
  /// Cell holding the largest patch's centroid; empty when there is no change.
  std::optional<GridCell> largest_patch_cell;
  double mean_patch_area_px = 0.0;
  /// Fraction of changed pixels per cell, row-major northwest..southeast.
  std::array<double, kGridCells> grid_fractions{};
  std::vector<GridCell> dominant_cells;
};

/// Tolerance used when deciding which cells tie for the maximum fraction.
inline constexpr double kDominanceTolerance = 1e-9;

/// Patches use 8-connectivity. Throws Error{NonBinaryMask}.
MaskStats compute_stats(const ChangeMask& mask);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const noexcept { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& other) noexcept {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    tn += other.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Change is the positive class. Throws Error{DimensionMismatch} or
/// Error{NonBinaryMask}.
ConfusionCounts compare_masks(const ChangeMask& ground_truth, const ChangeMask& predicted);

}  // namespace forestchat
