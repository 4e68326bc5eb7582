#include <doctest.h>

#include <fstream>

#include "forestchat/dataset.hpp"
#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "forestchat/mask_analytics.hpp"
#include "forestchat/perception.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace forestchat;

namespace {

ScalarField field_from_histogram(const std::vector<std::int64_t>& hist) {
  // Integer values v land in bin v when min = 0 and max = bins.
  ScalarField f;
  const int bins = static_cast<int>(hist.size());
  for (int i = 0; i < bins; ++i) {
    for (std::int64_t k = 0; k < hist[static_cast<std::size_t>(i)]; ++k) f.values.push_back(i);
  }
  f.values.push_back(0.0);
  f.values.push_back(bins);
  f.width = static_cast<int>(f.values.size());
  f.height = 1;
  return f;
}

double iou_change(const ChangeMask& gt, const ChangeMask& pred) {
  const auto c = compare_masks(gt, pred);
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
}

}  // namespace

TEST_SUITE("perception") {
  TEST_CASE("excess green on chromaticity-normalised RGB") {
    Raster r(3, 1, 3, {0, 255, 0, 100, 100, 100, 0, 0, 0});
    const auto f = excess_green(r);
    CHECK(f.values[0] == doctest::Approx(2.0));
    CHECK(f.values[1] == doctest::Approx(0.0));
    CHECK(f.values[2] == 0.0);
    try {
      excess_green(Raster(2, 2, 1));
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ChannelCountError);
    }
  }

  TEST_CASE("otsu equals exhaustive search on random histograms") {
    std::mt19937 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      const int bins = 2 + trial % 40;
      std::vector<std::int64_t> hist(static_cast<std::size_t>(bins));
      std::uniform_int_distribution<int> count(0, 30);
      for (auto& h : hist) h = count(rng);
      const auto f = field_from_histogram(hist);
      auto with_ends = hist;
      ++with_ends.front();
      ++with_ends.back();
      const auto split = otsu_split(f, bins);
      CHECK(split.edge_index == oracle::otsu_edge(with_ends));
      CHECK(split.threshold == static_cast<double>(split.edge_index));
    }
  }

  TEST_CASE("otsu separates a bimodal field between the modes") {
    ScalarField f{100, 1, {}};
    for (int i = 0; i < 50; ++i) f.values.push_back(0.1 + 0.001 * i);
    for (int i = 0; i < 50; ++i) f.values.push_back(0.9 - 0.001 * i);
    const double t = otsu_threshold(f);
    CHECK(t > 0.15);
    CHECK(t < 0.85);
  }

  TEST_CASE("otsu error cases") {
    ScalarField constant{3, 1, {0.5, 0.5, 0.5}};
    ScalarField empty{0, 0, {}};
    ScalarField two{2, 1, {0.0, 1.0}};
    auto kind = [](auto fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.kind();
      }
      return ErrorKind::IoError;
    };
    CHECK(kind([&] { otsu_threshold(constant); }) == ErrorKind::ConstantField);
    CHECK(kind([&] { otsu_threshold(empty); }) == ErrorKind::InvalidArgument);
    CHECK(kind([&] { otsu_threshold(two, 1); }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("dilation grows a point into a square, erosion restores it") {
    const auto point = fctest::rect_mask(9, 9, {{4, 4, 1, 1}}, MaskProvenance::Predicted);
    const auto grown = morph(point, MorphOp::Dilate, 2);
    CHECK(grown == fctest::rect_mask(9, 9, {{2, 2, 5, 5}}, MaskProvenance::Predicted));
    CHECK(morph(grown, MorphOp::Erode, 2) == point);
    CHECK(morph(point, MorphOp::Open, 1).count_nonzero() == 0);
    CHECK(morph(point, MorphOp::Close, 1) == point);
  }

  TEST_CASE("erosion does not eat regions touching the border") {
    const auto full = fctest::rect_mask(6, 6, {{0, 0, 6, 6}}, MaskProvenance::Predicted);
    CHECK(morph(full, MorphOp::Erode, 1) == full);
    const auto edge = fctest::rect_mask(6, 6, {{0, 0, 3, 6}}, MaskProvenance::Predicted);
    CHECK(morph(edge, MorphOp::Erode, 1) ==
          fctest::rect_mask(6, 6, {{0, 0, 2, 6}}, MaskProvenance::Predicted));
  }

  TEST_CASE("small components are removed") {
    const auto m = fctest::rect_mask(20, 20, {{0, 0, 2, 2}, {10, 10, 5, 5}}, MaskProvenance::Predicted);
    const auto kept = remove_small_components(m, 16);
    CHECK(kept == fctest::rect_mask(20, 20, {{10, 10, 5, 5}}, MaskProvenance::Predicted));
  }

  TEST_CASE("radiometric normalisation matches epoch statistics") {
    Raster a(4, 1, 3, {10, 20, 30, 20, 30, 40, 30, 40, 50, 40, 50, 60});
    Raster b(4, 1, 3, {60, 70, 80, 80, 90, 100, 100, 110, 120, 120, 130, 140});
    const auto n = normalize_radiometry(make_image_pair("n", a, b));
    CHECK(n.epoch_a == a);
    CHECK(n.epoch_b == a);
  }

  TEST_CASE("sampled normalization ignores pixels outside the sample") {
    Raster a(4, 1, 3, {10, 20, 30, 20, 30, 40, 30, 40, 50, 40, 50, 60});
    Raster b(4, 1, 3, {60, 70, 80, 80, 90, 100, 100, 110, 120, 250, 10, 5});
    const std::vector<std::uint8_t> sample = {1, 1, 1, 0};
    const auto n = normalize_radiometry(make_image_pair("n", a, b), sample);
    for (int col = 0; col < 3; ++col) {
      for (int c = 0; c < 3; ++c) CHECK(n.epoch_b.at(0, col, c) == a.at(0, col, c));
    }
    CHECK_THROWS_AS(normalize_radiometry(make_image_pair("n", a, b), std::vector<std::uint8_t>{1, 1}), Error);
  }

  TEST_CASE("stable pixels exclude the cleared area") {
    SyntheticSpec spec;
    spec.clearings = {{40, 40, 82, 82}};
    const auto syn = make_synthetic_forest_pair(spec);
    const auto keep = stable_pixels(syn.pair);
    REQUIRE(keep.size() == syn.truth.pixel_count());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (syn.truth.labels()[i]) REQUIRE(keep[i] == 0);
    }
    CHECK(stable_pixels(make_image_pair("same", syn.pair.epoch_a, syn.pair.epoch_a)).empty());
  }

  TEST_CASE("detection recovers injected clearings") {
    SyntheticSpec spec;
    spec.clearings = {{40, 60, 50, 70}, {150, 20, 30, 30}};
    const auto syn = make_synthetic_forest_pair(spec);
    const auto det = detect_changes(syn.pair);
    CHECK_FALSE(det.no_change_detected);
    CHECK(det.mask.provenance() == MaskProvenance::Predicted);
    CHECK(iou_change(syn.truth, det.mask) >= 0.95);
  }

  TEST_CASE("identical epochs give an empty mask") {
    SyntheticSpec spec;
    const auto syn = make_synthetic_forest_pair(spec);
    const auto same = make_image_pair("same", syn.pair.epoch_a, syn.pair.epoch_a);
    const auto det = detect_changes(same);
    CHECK(det.mask.count_nonzero() == 0);
    CHECK(det.no_change_detected);
  }

  TEST_CASE("synthetic pairs are deterministic per seed") {
    SyntheticSpec spec;
    spec.clearings = {{10, 10, 20, 20}};
    spec.noise_sigma = 5.0;
    const auto x = make_synthetic_forest_pair(spec);
    const auto y = make_synthetic_forest_pair(spec);
    CHECK(x.pair.epoch_b == y.pair.epoch_b);
    CHECK(x.truth.count_nonzero() == 400);
  }

  TEST_CASE("detection rejects gray pairs") {
    const auto p = make_image_pair("g", Raster(8, 8, 1), Raster(8, 8, 1));
    try {
      detect_changes(p);
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ChannelCountError);
    }
  }

  TEST_CASE("external predictions: missing file is named") {
    fctest::TempDir dir("pred");
    Dataset ds;
    ds.id = "t";
    ds.root = dir.path();
    ds.entries.push_back({"p1", "a.png", "b.png", "gt1.png", {}, ClassDomain::Binary});
    ds.entries.push_back({"p2", "a.png", "b.png", "gt2.png", {}, ClassDomain::Binary});
    const auto m = fctest::rect_mask(8, 8, {{0, 0, 2, 2}});
    write_mask_png(m, dir / "gt1.png");
    write_mask_png(m, dir / "gt2.png");
    std::filesystem::create_directories(dir / "pred");
    write_mask_png(m, dir.path() / "pred" / "p1.png");
    try {
      load_external_predictions(dir / "pred", ds);
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingPrediction);
      CHECK(std::string(e.what()).find("p2") != std::string::npos);
    }
    write_mask_png(fctest::rect_mask(8, 9, {}), dir.path() / "pred" / "p2.png");
    try {
      load_external_predictions(dir / "pred", ds);
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
    write_mask_png(m, dir.path() / "pred" / "p2.png");
    const auto preds = load_external_predictions(dir / "pred", ds);
    CHECK(preds.size() == 2);
    CHECK(preds.at("p2").provenance() == MaskProvenance::Predicted);
  }
}
