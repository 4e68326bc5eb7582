#include "forestchat/perception.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "forestchat/dataset.hpp"
#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "forestchat/mask_analytics.hpp"

namespace forestchat {

namespace {

using u128 = unsigned __int128;

// Between-class variance up to a positive constant, kept as an exact
// fraction numerator/denominator. Bin indices stand in for bin centres; the
// criterion is invariant under that affine change of units.
struct Separation {
  u128 numerator = 0;
  u128 denominator = 1;
};

Separation separation(std::int64_t n0, std::int64_t s0, std::int64_t n1, std::int64_t s1) {
  if (n0 == 0 || n1 == 0) return {};
  const __int128 d = static_cast<__int128>(s0) * n1 - static_cast<__int128>(s1) * n0;
  const u128 mag = static_cast<u128>(d < 0 ? -d : d);
  return {mag * mag, static_cast<u128>(n0) * static_cast<u128>(n1)};
}

// Exact a < b on fractions without overflowing: compare integer parts, then
// remainders cross-multiplied (each remainder is below its denominator).
bool less_than(const Separation& a, const Separation& b) {
  const u128 qa = a.numerator / a.denominator;
  const u128 qb = b.numerator / b.denominator;
  if (qa != qb) return qa < qb;
  const u128 ra = a.numerator % a.denominator;
  const u128 rb = b.numerator % b.denominator;
  return ra * b.denominator < rb * a.denominator;
}

std::uint8_t round_to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// 1-D window pass; erosion requires every in-bounds sample in the window set.
void morph_line(const std::uint8_t* in, std::uint8_t* out, int n, std::ptrdiff_t stride,
                int radius, bool erode) {
  std::vector<int> prefix(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + (in[i * stride] ? 1 : 0);
  }
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - radius);
    const int hi = std::min(n - 1, i + radius);
    const int ones = prefix[static_cast<std::size_t>(hi) + 1] - prefix[static_cast<std::size_t>(lo)];
    out[i * stride] = erode ? (ones == hi - lo + 1 ? 1 : 0) : (ones > 0 ? 1 : 0);
  }
}

ChangeMask morph_basic(const ChangeMask& mask, bool erode, int radius) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<std::uint8_t> src(mask.labels().begin(), mask.labels().end());
  std::vector<std::uint8_t> tmp(src.size());
  std::vector<std::uint8_t> dst(src.size());
  for (int row = 0; row < h; ++row) {
    const std::size_t off = static_cast<std::size_t>(row) * static_cast<std::size_t>(w);
    morph_line(src.data() + off, tmp.data() + off, w, 1, radius, erode);
  }
  for (int col = 0; col < w; ++col) {
    morph_line(tmp.data() + col, dst.data() + col, h, w, radius, erode);
  }
  return ChangeMask(w, h, std::move(dst), mask.provenance(), ClassDomain::Binary);
}

}  // namespace

std::string_view to_string(ChangeDirection direction) {
  switch (direction) {
    case ChangeDirection::Loss: return "loss";
    case ChangeDirection::Gain: return "gain";
    case ChangeDirection::Both: return "both";
  }
  return "loss";
}

ChangeDirection change_direction_from_string(std::string_view name) {
  if (name == "loss") return ChangeDirection::Loss;
  if (name == "gain") return ChangeDirection::Gain;
  if (name == "both") return ChangeDirection::Both;
  throw Error(ErrorKind::InvalidArgument,
              fmt::format("direction must be loss, gain or both, got '{}'", name));
}

ImagePair normalize_radiometry(const ImagePair& pair) {
  return normalize_radiometry(pair, {});
}

ImagePair normalize_radiometry(const ImagePair& pair, std::span<const std::uint8_t> sample) {
  if (!pair.epoch_a.same_shape(pair.epoch_b)) {
    throw Error(ErrorKind::DimensionMismatch, "normalize_radiometry: epoch shapes differ");
  }
  if (!sample.empty() && sample.size() != pair.epoch_a.pixel_count()) {
    throw Error(ErrorKind::DimensionMismatch, "normalize_radiometry: sample mask size differs from the pair");
  }
  ImagePair out = pair;
  const Raster& a = pair.epoch_a;
  Raster& b = out.epoch_b;
  double n = static_cast<double>(a.pixel_count());
  if (!sample.empty()) n = static_cast<double>(std::count_if(sample.begin(), sample.end(), [](auto v) { return v != 0; }));
  if (n == 0.0) return out;
  for (int c = 0; c < a.channels(); ++c) {
    double sum_a = 0.0, sum_b = 0.0, sq_a = 0.0, sq_b = 0.0;
    for (int row = 0; row < a.height(); ++row) {
      for (int col = 0; col < a.width(); ++col) {
        if (!sample.empty() &&
            sample[static_cast<std::size_t>(row) * static_cast<std::size_t>(a.width()) + static_cast<std::size_t>(col)] == 0) {
          continue;
        }
        const double va = a.at(row, col, c);
        const double vb = pair.epoch_b.at(row, col, c);
        sum_a += va;
        sum_b += vb;
        sq_a += va * va;
        sq_b += vb * vb;
      }
    }
    const double mean_a = sum_a / n;
    const double mean_b = sum_b / n;
    const double std_a = std::sqrt(std::max(0.0, sq_a / n - mean_a * mean_a));
    const double std_b = std::sqrt(std::max(0.0, sq_b / n - mean_b * mean_b));
    if (std_b < 1e-12) continue;
    const double gain = std_a / std_b;
    for (int row = 0; row < a.height(); ++row) {
      for (int col = 0; col < a.width(); ++col) {
        const double vb = pair.epoch_b.at(row, col, c);
        b.at(row, col, c) = round_to_u8((vb - mean_b) * gain + mean_a);
      }
    }
  }
  return out;
}

ScalarField excess_green(const Raster& raster) {
  if (raster.channels() != 3) {
    throw Error(ErrorKind::ChannelCountError,
                fmt::format("excess_green needs an RGB raster, got {} channel(s)",
                            raster.channels()));
  }
  ScalarField field{raster.width(), raster.height(), {}};
  field.values.resize(raster.pixel_count());
  std::size_t i = 0;
  for (int row = 0; row < raster.height(); ++row) {
    for (int col = 0; col < raster.width(); ++col, ++i) {
      const double r = raster.at(row, col, 0);
      const double g = raster.at(row, col, 1);
      const double b = raster.at(row, col, 2);
      const double sum = r + g + b;
      field.values[i] = sum > 0.0 ? (2.0 * g - r - b) / sum : 0.0;
    }
  }
  return field;
}

int OtsuSplit::bin_of(double value) const {
  const double scaled = (value - min) / (max - min) * static_cast<double>(bins);
  const int bin = static_cast<int>(std::floor(scaled));
  return std::clamp(bin, 0, bins - 1);
}

OtsuSplit otsu_split(const ScalarField& field, int bins) {
  if (field.values.empty()) {
    throw Error(ErrorKind::InvalidArgument, "otsu_threshold: empty field");
  }
  if (bins < 2) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("otsu_threshold: need at least 2 bins, got {}", bins));
  }
  const auto [lo, hi] = std::minmax_element(field.values.begin(), field.values.end());
  OtsuSplit split;
  split.bins = bins;
  split.min = *lo;
  split.max = *hi;
  if (!(split.max > split.min)) {
    throw Error(ErrorKind::ConstantField, "otsu_threshold: field is constant");
  }

  std::vector<std::int64_t> histogram(static_cast<std::size_t>(bins), 0);
  for (double v : field.values) ++histogram[static_cast<std::size_t>(split.bin_of(v))];

  std::int64_t total_n = 0;
  std::int64_t total_s = 0;
  for (int i = 0; i < bins; ++i) {
    total_n += histogram[static_cast<std::size_t>(i)];
    total_s += static_cast<std::int64_t>(i) * histogram[static_cast<std::size_t>(i)];
  }

  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  Separation best;
  int best_edge = 1;
  for (int edge = 1; edge < bins; ++edge) {
    n0 += histogram[static_cast<std::size_t>(edge - 1)];
    s0 += static_cast<std::int64_t>(edge - 1) * histogram[static_cast<std::size_t>(edge - 1)];
    const Separation current = separation(n0, s0, total_n - n0, total_s - s0);
    if (edge == 1 || less_than(best, current)) {
      best = current;
      best_edge = edge;
    }
  }
  split.edge_index = best_edge;
  split.threshold = split.min + static_cast<double>(best_edge) * (split.max - split.min) /
                                    static_cast<double>(bins);
  return split;
}

double otsu_threshold(const ScalarField& field, int bins) {
  return otsu_split(field, bins).threshold;
}

ChangeMask morph(const ChangeMask& mask, MorphOp op, int kernel_radius) {
  require_binary(mask, "morph");
  if (kernel_radius < 0) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("kernel radius must be non-negative, got {}", kernel_radius));
  }
  if (kernel_radius == 0) return mask;
  switch (op) {
    case MorphOp::Erode: return morph_basic(mask, true, kernel_radius);
    case MorphOp::Dilate: return morph_basic(mask, false, kernel_radius);
    case MorphOp::Open:
      return morph_basic(morph_basic(mask, true, kernel_radius), false, kernel_radius);
    case MorphOp::Close:
      return morph_basic(morph_basic(mask, false, kernel_radius), true, kernel_radius);
  }
  return mask;
}

ChangeMask remove_small_components(const ChangeMask& mask, int min_area_px) {
  require_binary(mask, "remove_small_components");
  if (min_area_px <= 1) return mask;
  const ComponentLabeling components = label_components(mask, Connectivity::Eight);
  std::vector<std::uint8_t> labels(mask.labels().begin(), mask.labels().end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto id = components.labels[i];
    if (id != 0 && components.areas[static_cast<std::size_t>(id - 1)] < min_area_px) {
      labels[i] = 0;
    }
  }
  return ChangeMask(mask.width(), mask.height(), std::move(labels), mask.provenance(),
                    ClassDomain::Binary);
}

std::vector<std::uint8_t> stable_pixels(const ImagePair& pair) {
  const ScalarField before = excess_green(pair.epoch_a);
  const ScalarField after = excess_green(pair.epoch_b);
  ScalarField diff{before.width, before.height, std::vector<double>(before.values.size())};
  for (std::size_t i = 0; i < diff.values.size(); ++i) {
    diff.values[i] = std::abs(before.values[i] - after.values[i]);
  }
  OtsuSplit split;
  try {
    split = otsu_split(diff);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ConstantField) throw;
    return {};
  }
  std::vector<std::uint8_t> keep(diff.values.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = split.upper(diff.values[i]) ? 0 : 1;
  return keep;
}

DetectionResult detect_changes(const ImagePair& pair, const DetectionParams& params) {
  if (pair.epoch_a.channels() != 3 || pair.epoch_b.channels() != 3) {
    throw Error(ErrorKind::ChannelCountError, "detect_changes needs an RGB image pair");
  }
  if (params.kernel_radius < 0 || params.min_area_px < 0) {
    throw Error(ErrorKind::InvalidArgument,
                "detect_changes: kernel_radius and min_area_px must be non-negative");
  }
  const ImagePair normalized = normalize_radiometry(pair, stable_pixels(pair));
  const ScalarField before = excess_green(normalized.epoch_a);
  const ScalarField after = excess_green(normalized.epoch_b);

  ScalarField diff{before.width, before.height, std::vector<double>(before.values.size())};
  for (std::size_t i = 0; i < diff.values.size(); ++i) {
    const double d = before.values[i] - after.values[i];
    switch (params.direction) {
      case ChangeDirection::Loss: diff.values[i] = d; break;
      case ChangeDirection::Gain: diff.values[i] = -d; break;
      case ChangeDirection::Both: diff.values[i] = std::abs(d); break;
    }
  }

  DetectionResult result;
  OtsuSplit split;
  try {
    split = otsu_split(diff);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ConstantField) throw;
    result.mask = ChangeMask::zeros(pair.width(), pair.height(), MaskProvenance::Predicted);
    result.no_change_detected = true;
    result.warnings.push_back("no_change_detected: the index difference is constant");
    return result;
  }
  result.threshold = split.threshold;

  // The upper Otsu class must also move in the requested direction.
  std::vector<std::uint8_t> labels(diff.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = split.upper(diff.values[i]) && diff.values[i] > 0.0 ? 1 : 0;
  }
  ChangeMask mask(pair.width(), pair.height(), std::move(labels), MaskProvenance::Predicted,
                  ClassDomain::Binary);
  mask = morph(mask, MorphOp::Open, params.kernel_radius);
  mask = morph(mask, MorphOp::Close, params.kernel_radius);
  mask = remove_small_components(mask, params.min_area_px);
  result.mask = std::move(mask);
  return result;
}

std::map<std::string, ChangeMask> load_external_predictions(const std::filesystem::path& dir,
                                                            const Dataset& dataset,
                                                            const std::vector<std::string>& ids) {
  std::map<std::string, ChangeMask> out;
  for (const auto& id : ids) {
    const auto path = dir / (id + ".png");
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorKind::MissingPrediction,
                  fmt::format("missing prediction for pair '{}' (expected {})", id, path.string()));
    }
    ChangeMask mask = binarize_mask(read_mask(path, MaskProvenance::Predicted));
    if (const DatasetEntry* entry = dataset.find(id); entry != nullptr && !entry->mask.empty()) {
      const ImageShape gt = probe_image_shape(dataset.resolve(entry->mask));
      if (gt.width != mask.width() || gt.height != mask.height()) {
        throw Error(ErrorKind::DimensionMismatch,
                    fmt::format("prediction for '{}' is {}x{}, ground truth is {}x{}", id,
                                mask.width(), mask.height(), gt.width, gt.height));
      }
    }
    out.emplace(id, std::move(mask));
  }
  return out;
}

std::map<std::string, ChangeMask> load_external_predictions(const std::filesystem::path& dir,
                                                            const Dataset& dataset) {
  return load_external_predictions(dir, dataset, dataset.ids());
}

}  // namespace forestchat
