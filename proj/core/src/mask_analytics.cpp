#include "forestchat/mask_analytics.hpp"

#include <algorithm>
#include <numeric>

#include "forestchat/error.hpp"

namespace forestchat {

namespace {

// Union-find over provisional labels; roots are always the smallest label of
// their set so the final relabel pass can stay in raster order.
class DisjointSets {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t find(std::int32_t x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      auto& p = parent_[static_cast<std::size_t>(x)];
      p = parent_[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[static_cast<std::size_t>(a)] = b;
  }

 private:
  std::vector<std::int32_t> parent_;
};

int band_of(int index, int extent) {
  const int band = extent / 3;
  if (band == 0) return 2;
  return std::min(index / band, 2);
}

}  // namespace

ComponentLabeling label_components(const ChangeMask& mask, Connectivity connectivity) {
  require_binary(mask, "label_components");
  const int width = mask.width();
  const int height = mask.height();
  ComponentLabeling out;
  out.width = width;
  out.height = height;
  out.labels.assign(mask.pixel_count(), 0);

  auto idx = [width](int row, int col) {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  };

  // First pass: provisional labels from already-visited neighbours.
  DisjointSets sets;
  sets.make();  // slot 0 is background
  const bool eight = connectivity == Connectivity::Eight;
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      if (mask.at(row, col) == 0) continue;
      std::int32_t assigned = 0;
      auto visit = [&](int r, int c) {
        if (r < 0 || c < 0 || c >= width) return;
        const std::int32_t n = out.labels[idx(r, c)];
        if (n == 0) return;
        if (assigned == 0) {
          assigned = n;
        } else {
          sets.unite(assigned, n);
        }
      };
      visit(row, col - 1);
      visit(row - 1, col);
      if (eight) {
        visit(row - 1, col - 1);
        visit(row - 1, col + 1);
      }
      out.labels[idx(row, col)] = assigned != 0 ? assigned : sets.make();
    }
  }

  // Second pass: resolve roots and renumber in order of first appearance.
  std::vector<std::int32_t> final_id;
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      auto& label = out.labels[idx(row, col)];
      if (label == 0) continue;
      const auto root = static_cast<std::size_t>(sets.find(label));
      if (final_id.size() <= root) final_id.resize(root + 1, 0);
      if (final_id[root] == 0) {
        final_id[root] = ++out.num_components;
        out.areas.push_back(0);
        out.centroids.push_back({0.0, 0.0});
        out.bounding_boxes.push_back({row, col, row, col});
      }
      label = final_id[root];
      const auto k = static_cast<std::size_t>(label - 1);
      out.areas[k] += 1;
      out.centroids[k].row += row;
      out.centroids[k].col += col;
      auto& box = out.bounding_boxes[k];
      box.min_row = std::min(box.min_row, row);
      box.min_col = std::min(box.min_col, col);
      box.max_row = std::max(box.max_row, row);
      box.max_col = std::max(box.max_col, col);
    }
  }
  for (std::size_t k = 0; k < out.areas.size(); ++k) {
    out.centroids[k].row /= static_cast<double>(out.areas[k]);
    out.centroids[k].col /= static_cast<double>(out.areas[k]);
  }
  return out;
}

std::string_view to_string(GridCell cell) {
  switch (cell) {
    case GridCell::Northwest: return "northwest";
    case GridCell::North: return "north";
    case GridCell::Northeast: return "northeast";
    case GridCell::West: return "west";
    case GridCell::Center: return "center";
    case GridCell::East: return "east";
    case GridCell::Southwest: return "southwest";
    case GridCell::South: return "south";
    case GridCell::Southeast: return "southeast";
  }
  return "center";
}

std::optional<GridCell> grid_cell_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kGridCells; ++i) {
    const auto cell = static_cast<GridCell>(i);
    if (to_string(cell) == name) return cell;
  }
  return std::nullopt;
}

GridCell grid_cell_of(int row, int col, int width, int height) {
  return static_cast<GridCell>(band_of(row, height) * 3 + band_of(col, width));
}

MaskStats compute_stats(const ChangeMask& mask) {
  require_binary(mask, "compute_stats");
  const ComponentLabeling components = label_components(mask, Connectivity::Eight);

  MaskStats stats;
  stats.width = mask.width();
  stats.height = mask.height();
  const auto total = static_cast<std::int64_t>(mask.pixel_count());

  std::array<std::int64_t, kGridCells> cell_counts{};
  for (int row = 0; row < mask.height(); ++row) {
    for (int col = 0; col < mask.width(); ++col) {
      if (mask.at(row, col) == 0) continue;
      ++stats.changed_pixels;
      ++cell_counts[static_cast<std::size_t>(grid_cell_of(row, col, mask.width(), mask.height()))];
    }
  }

  stats.change_percent =
      static_cast<double>(100 * stats.changed_pixels) / static_cast<double>(total);
  stats.num_patches = components.num_components;
  if (stats.changed_pixels == 0) return stats;

  const auto largest = static_cast<std::size_t>(
      std::max_element(components.areas.begin(), components.areas.end()) -
      components.areas.begin());
  stats.largest_patch_percent =
      static_cast<double>(100 * components.areas[largest]) / static_cast<double>(total);
  const Centroid& c = components.centroids[largest];
  stats.largest_patch_cell =
      grid_cell_of(static_cast<int>(c.row + 0.5), static_cast<int>(c.col + 0.5), mask.width(),
                   mask.height());
  stats.mean_patch_area_px =
      static_cast<double>(stats.changed_pixels) / static_cast<double>(stats.num_patches);

  for (std::size_t i = 0; i < kGridCells; ++i) {
    stats.grid_fractions[i] =
        static_cast<double>(cell_counts[i]) / static_cast<double>(stats.changed_pixels);
  }
  const double best = *std::max_element(stats.grid_fractions.begin(), stats.grid_fractions.end());
  for (std::size_t i = 0; i < kGridCells; ++i) {
    if (stats.grid_fractions[i] >= best - kDominanceTolerance) {
      stats.dominant_cells.push_back(static_cast<GridCell>(i));
    }
  }
  return stats;
}

ConfusionCounts compare_masks(const ChangeMask& ground_truth, const ChangeMask& predicted) {
  require_same_dims(ground_truth, predicted);
  require_binary(ground_truth, "compare_masks");
  require_binary(predicted, "compare_masks");
  ConfusionCounts counts;
  const auto gt = ground_truth.labels();
  const auto pred = predicted.labels();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g = gt[i] != 0;
    const bool p = pred[i] != 0;
    if (g && p) {
      ++counts.tp;
    } else if (p) {
      ++counts.fp;
    } else if (g) {
      ++counts.fn;
    } else {
      ++counts.tn;
    }
  }
  return counts;
}

}  // namespace forestchat
