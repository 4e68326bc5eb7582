#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "forestchat/caption_engine.hpp"
#include "forestchat/eval_metrics.hpp"
#include "forestchat/raster.hpp"
#include "forestchat/synthetic.hpp"

namespace fctest {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("forestchat_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct Corpus {
  std::vector<forestchat::Tokens> candidates;
  std::vector<forestchat::ReferenceGroup> references;
};

/// Small random corpus over a tiny vocabulary. Candidates are mutated
/// copies of a reference so that higher-order n-grams match now and then.
inline Corpus random_corpus(std::mt19937& rng, int max_pairs = 10, int max_len = 12) {
  static const std::vector<std::string> vocab = {"forest", "loss", "the", "of", "in",
                                                 "north", "patch", "small", "area", "cleared"};
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto sentence = [&](int len) {
    forestchat::Tokens t;
    for (int i = 0; i < len; ++i) t.push_back(vocab[static_cast<std::size_t>(pick(0, 9))]);
    return t;
  };
  Corpus c;
  const int pairs = pick(1, max_pairs);
  for (int p = 0; p < pairs; ++p) {
    forestchat::ReferenceGroup refs;
    const int n_refs = pick(1, 4);
    for (int r = 0; r < n_refs; ++r) refs.push_back(sentence(pick(1, max_len)));
    forestchat::Tokens cand = refs[static_cast<std::size_t>(pick(0, n_refs - 1))];
    const int edits = pick(0, 4);
    for (int e = 0; e < edits && !cand.empty(); ++e) {
      const auto at = static_cast<std::size_t>(pick(0, static_cast<int>(cand.size()) - 1));
      switch (pick(0, 2)) {
        case 0: cand[at] = vocab[static_cast<std::size_t>(pick(0, 9))]; break;
        case 1: cand.erase(cand.begin() + static_cast<long>(at)); break;
        default:
          if (static_cast<int>(cand.size()) < max_len) {
            cand.insert(cand.begin() + static_cast<long>(at), vocab[static_cast<std::size_t>(pick(0, 9))]);
          }
      }
    }
    if (pick(0, 15) == 0) cand = sentence(pick(1, max_len));
    c.candidates.push_back(cand);
    c.references.push_back(refs);
  }
  return c;
}

/// Binary mask with the listed rectangles set.
inline forestchat::ChangeMask rect_mask(int width, int height,
                                        const std::vector<forestchat::PixelRect>& rects,
                                        forestchat::MaskProvenance provenance =
                                            forestchat::MaskProvenance::GroundTruth) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(width * height), 0);
  for (const auto& r : rects) {
    for (int y = r.row; y < r.row + r.height && y < height; ++y) {
      for (int x = r.col; x < r.col + r.width && x < width; ++x) {
        labels[static_cast<std::size_t>(y * width + x)] = 1;
      }
    }
  }
  return forestchat::ChangeMask(width, height, std::move(labels), provenance,
                                forestchat::ClassDomain::Binary);
}

inline forestchat::ChangeMask random_mask(std::mt19937& rng, int width, int height, double density) {
  std::bernoulli_distribution on(density);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(width * height));
  for (auto& v : labels) v = on(rng) ? 1 : 0;
  return forestchat::ChangeMask(width, height, std::move(labels),
                                forestchat::MaskProvenance::Predicted, forestchat::ClassDomain::Binary);
}

}  // namespace fctest
