#include "forestchat/raster.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "forestchat/error.hpp"

namespace forestchat {

namespace {

std::size_t expected_size(int width, int height, int channels) {
  return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
         static_cast<std::size_t>(channels);
}

std::string shape_string(const Raster& r) {
  return fmt::format("{}x{}x{}", r.width(), r.height(), r.channels());
}

// Source coordinate for a destination index under the half-pixel convention.
double source_coordinate(int dst, int src_extent, int dst_extent) {
  const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_extent) /
                       static_cast<double>(dst_extent) -
                   0.5;
  return std::clamp(s, 0.0, static_cast<double>(src_extent - 1));
}

}  // namespace

Raster::Raster(int width, int height, int channels, std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("raster dimensions must be positive, got {}x{}", width, height));
  }
  if (channels != 1 && channels != 3) {
    throw Error(ErrorKind::ChannelCountError,
                fmt::format("raster must have 1 or 3 channels, got {}", channels));
  }
  if (data_.size() != expected_size(width, height, channels)) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("raster buffer holds {} samples, shape {}x{}x{} needs {}",
                            data_.size(), width, height, channels,
                            expected_size(width, height, channels)));
  }
}

Raster::Raster(int width, int height, int channels)
    : Raster(width, height, channels,
             std::vector<std::uint8_t>(width > 0 && height > 0 && channels > 0
                                           ? expected_size(width, height, channels)
                                           : 0)) {}

ImagePair make_image_pair(std::string id, Raster epoch_a, Raster epoch_b) {
  if (!epoch_a.same_shape(epoch_b)) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("epoch shapes differ: A is {}, B is {}", shape_string(epoch_a),
                            shape_string(epoch_b)));
  }
  ImagePair pair;
  pair.id = std::move(id);
  pair.epoch_a = std::move(epoch_a);
  pair.epoch_b = std::move(epoch_b);
  return pair;
}

std::string to_string(MaskProvenance provenance) {
  switch (provenance) {
    case MaskProvenance::GroundTruth: return "ground_truth";
    case MaskProvenance::Predicted: return "predicted";
    case MaskProvenance::Derived: return "derived";
  }
  return "derived";
}

ChangeMask::ChangeMask(int width, int height, std::vector<std::uint8_t> labels,
                       MaskProvenance provenance, ClassDomain domain)
    : width_(width), height_(height), labels_(std::move(labels)), provenance_(provenance),
      domain_(domain) {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("mask dimensions must be positive, got {}x{}", width, height));
  }
  if (labels_.size() != expected_size(width, height, 1)) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("mask holds {} labels, shape {}x{} needs {}", labels_.size(), width,
                            height, expected_size(width, height, 1)));
  }
  if (domain == ClassDomain::Binary &&
      std::any_of(labels_.begin(), labels_.end(), [](std::uint8_t v) { return v > 1; })) {
    throw Error(ErrorKind::InvalidArgument, "binary mask contains labels other than 0 and 1");
  }
}

ChangeMask ChangeMask::zeros(int width, int height, MaskProvenance provenance) {
  return ChangeMask(width, height, std::vector<std::uint8_t>(expected_size(width, height, 1)),
                    provenance, ClassDomain::Binary);
}

ChangeMask ChangeMask::from_labels(int width, int height, std::vector<std::uint8_t> labels,
                                   MaskProvenance provenance) {
  const bool binary =
      std::all_of(labels.begin(), labels.end(), [](std::uint8_t v) { return v <= 1; });
  return ChangeMask(width, height, std::move(labels), provenance,
                    binary ? ClassDomain::Binary : ClassDomain::MultiClass);
}

std::size_t ChangeMask::count_nonzero() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(labels_.begin(), labels_.end(), [](std::uint8_t v) { return v != 0; }));
}

ChangeMask ChangeMask::with_provenance(MaskProvenance provenance) const {
  ChangeMask copy = *this;
  copy.provenance_ = provenance;
  return copy;
}

void require_binary(const ChangeMask& mask, std::string_view what) {
  if (!mask.is_binary()) {
    throw Error(ErrorKind::NonBinaryMask,
                fmt::format("{} requires a binary mask; binarize multi-class labels first", what));
  }
}

void require_same_dims(const ChangeMask& a, const ChangeMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("mask shapes differ: {}x{} vs {}x{}", a.width(), a.height(),
                            b.width(), b.height()));
  }
}

Raster resize_bilinear(const Raster& raster, int target_width, int target_height) {
  if (target_width < 1 || target_height < 1) {
    throw Error(ErrorKind::InvalidTarget,
                fmt::format("resize target must be positive, got {}x{}", target_width,
                            target_height));
  }
  const int channels = raster.channels();
  Raster out(target_width, target_height, channels);

  struct Tap {
    int lo;
    int hi;
    double frac;
  };
  auto taps = [](int dst_extent, int src_extent) {
    std::vector<Tap> result(static_cast<std::size_t>(dst_extent));
    for (int i = 0; i < dst_extent; ++i) {
      const double s = source_coordinate(i, src_extent, dst_extent);
      const int lo = static_cast<int>(std::floor(s));
      result[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, src_extent - 1), s - lo};
    }
    return result;
  };
  const auto xs = taps(target_width, raster.width());
  const auto ys = taps(target_height, raster.height());

  for (int row = 0; row < target_height; ++row) {
    const Tap& ty = ys[static_cast<std::size_t>(row)];
    for (int col = 0; col < target_width; ++col) {
      const Tap& tx = xs[static_cast<std::size_t>(col)];
      for (int c = 0; c < channels; ++c) {
        const double top = raster.at(ty.lo, tx.lo, c) * (1.0 - tx.frac) +
                           raster.at(ty.lo, tx.hi, c) * tx.frac;
        const double bottom = raster.at(ty.hi, tx.lo, c) * (1.0 - tx.frac) +
                              raster.at(ty.hi, tx.hi, c) * tx.frac;
        const double value = top * (1.0 - ty.frac) + bottom * ty.frac;
        out.at(row, col, c) =
            static_cast<std::uint8_t>(std::clamp(std::floor(value + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

ChangeMask resize_nearest(const ChangeMask& mask, int target_width, int target_height) {
  if (target_width < 1 || target_height < 1) {
    throw Error(ErrorKind::InvalidTarget,
                fmt::format("resize target must be positive, got {}x{}", target_width,
                            target_height));
  }
  auto nearest = [](int dst, int src_extent, int dst_extent) {
    const double s = source_coordinate(dst, src_extent, dst_extent);
    return std::min(static_cast<int>(std::floor(s + 0.5)), src_extent - 1);
  };
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(target_width) *
                                   static_cast<std::size_t>(target_height));
  for (int row = 0; row < target_height; ++row) {
    const int sr = nearest(row, mask.height(), target_height);
    for (int col = 0; col < target_width; ++col) {
      labels[static_cast<std::size_t>(row) * static_cast<std::size_t>(target_width) +
             static_cast<std::size_t>(col)] =
          mask.at(sr, nearest(col, mask.width(), target_width));
    }
  }
  return ChangeMask(target_width, target_height, std::move(labels), mask.provenance(),
                    mask.class_domain());
}

ChangeMask binarize_mask(const ChangeMask& mask) {
  std::vector<std::uint8_t> labels(mask.labels().begin(), mask.labels().end());
  for (auto& v : labels) v = v > 0 ? 1 : 0;
  return ChangeMask(mask.width(), mask.height(), std::move(labels), mask.provenance(),
                    ClassDomain::Binary);
}

Raster render_comparison_overlay(const ChangeMask& ground_truth, const ChangeMask& predicted,
                                 const Raster& base) {
  require_binary(ground_truth, "render_comparison_overlay");
  require_binary(predicted, "render_comparison_overlay");
  require_same_dims(ground_truth, predicted);
  if (base.width() != ground_truth.width() || base.height() != ground_truth.height()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("overlay base is {}x{}, masks are {}x{}", base.width(), base.height(),
                            ground_truth.width(), ground_truth.height()));
  }

  Raster out(base.width(), base.height(), 3);
  auto paint = [&out](int row, int col, Rgb color) {
    out.at(row, col, 0) = color.r;
    out.at(row, col, 1) = color.g;
    out.at(row, col, 2) = color.b;
  };
  for (int row = 0; row < base.height(); ++row) {
    for (int col = 0; col < base.width(); ++col) {
      const bool gt = ground_truth.at(row, col) != 0;
      const bool pred = predicted.at(row, col) != 0;
      if (gt && pred) {
        paint(row, col, kOverlayAgreement);
      } else if (pred) {
        paint(row, col, kOverlayFalsePositive);
      } else if (gt) {
        paint(row, col, kOverlayFalseNegative);
      } else {
        for (int c = 0; c < 3; ++c) {
          const int src = base.channels() == 3 ? c : 0;
          out.at(row, col, c) = static_cast<std::uint8_t>(
              std::floor(base.at(row, col, src) * kOverlayDimFactor + 0.5));
        }
      }
    }
  }
  return out;
}

}  // namespace forestchat
