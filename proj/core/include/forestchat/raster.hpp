#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace forestchat {

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
class Raster {
 public:
  Raster() = default;
  /// Throws Error{InvalidArgument} if the buffer size does not match the shape.
  Raster(int width, int height, int channels, std::vector<std::uint8_t> data);
  /// Zero-filled raster.
  Raster(int width, int height, int channels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::uint8_t at(int row, int col, int channel = 0) const {
    return data_[index(row, col, channel)];
  }
  std::uint8_t& at(int row, int col, int channel = 0) {
    return data_[index(row, col, channel)];
  }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  bool same_shape(const Raster& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int row, int col, int channel) const noexcept {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(col)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(channel);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Two co-registered epochs of the same scene.
struct ImagePair {
  std::string id;
  Raster epoch_a;
  Raster epoch_b;
  std::optional<double> resolution_m_per_px;
  std::optional<std::string> interval_note;

  int width() const noexcept { return epoch_a.width(); }
  int height() const noexcept { return epoch_a.height(); }
};

/// Builds a pair after checking that both epochs share width, height and
/// channel count. Throws Error{DimensionMismatch} naming both shapes.
ImagePair make_image_pair(std::string id, Raster epoch_a, Raster epoch_b);

enum class MaskProvenance { GroundTruth, Predicted, Derived };
enum class ClassDomain { Binary, MultiClass };

std::string to_string(MaskProvenance provenance);

/// Per-pixel class grid. Binary masks hold only 0 (no change) and 1 (change).
class ChangeMask {
 public:
  ChangeMask() = default;
  /// Throws Error{InvalidArgument} on a size mismatch, or when a Binary mask
  /// carries a label other than 0/1.
  ChangeMask(int width, int height, std::vector<std::uint8_t> labels, MaskProvenance provenance,
             ClassDomain domain);

  /// All-zero binary mask.
  static ChangeMask zeros(int width, int height, MaskProvenance provenance);

  /// Picks Binary when every label is 0 or 1, MultiClass otherwise.
  static ChangeMask from_labels(int width, int height, std::vector<std::uint8_t> labels,
                                MaskProvenance provenance);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return labels_.size(); }
  MaskProvenance provenance() const noexcept { return provenance_; }
  ClassDomain class_domain() const noexcept { return domain_; }
  bool is_binary() const noexcept { return domain_ == ClassDomain::Binary; }

  std::uint8_t at(int row, int col) const {
    return labels_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
                   static_cast<std::size_t>(col)];
  }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }

  std::size_t count_nonzero() const noexcept;

  ChangeMask with_provenance(MaskProvenance provenance) const;

  friend bool operator==(const ChangeMask&, const ChangeMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> labels_;
  MaskProvenance provenance_ = MaskProvenance::Derived;
  ClassDomain domain_ = ClassDomain::Binary;
};

/// Throws Error{NonBinaryMask} unless the mask is Binary.
void require_binary(const ChangeMask& mask, std::string_view what);

/// Throws Error{DimensionMismatch} unless both masks share width and height.
void require_same_dims(const ChangeMask& a, const ChangeMask& b);

/// Bilinear resampling with half-pixel (edge-aligned) sample centers, each
/// channel independently, rounded half-up to 8 bits. Throws
/// Error{InvalidTarget} for non-positive targets.
Raster resize_bilinear(const Raster& raster, int target_width, int target_height);

/// Nearest-neighbour resampling for label grids, same sample-center
/// convention as resize_bilinear.
ChangeMask resize_nearest(const ChangeMask& mask, int target_width, int target_height);

/// label > 0 becomes 1. Provenance is kept; the result is always Binary.
ChangeMask binarize_mask(const ChangeMask& mask);

/// TN pixels are drawn as the base pixel scaled by this factor.
inline constexpr double kOverlayDimFactor = 0.5;

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kOverlayAgreement{255, 255, 0};
inline constexpr Rgb kOverlayFalsePositive{255, 0, 0};
inline constexpr Rgb kOverlayFalseNegative{0, 200, 0};

/// RGB comparison image: yellow for TP, red for FP, green for FN and the
/// dimmed base pixel for TN. A gray base is replicated across channels.
Raster render_comparison_overlay(const ChangeMask& ground_truth, const ChangeMask& predicted,
                                 const Raster& base);

}  // namespace forestchat
