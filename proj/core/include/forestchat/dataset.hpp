#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forestchat/caption_engine.hpp"
#include "forestchat/raster.hpp"

namespace forestchat {

inline constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val", "test"};

struct ManifestCaption {
  std::string text;
  CaptionOrigin origin = CaptionOrigin::Human;
};

struct DatasetEntry {
  std::string pair_id;
  /// Paths relative to the dataset root (absolute paths are kept as-is).
  std::filesystem::path a;
  std::filesystem::path b;
  std::filesystem::path mask;
  std::vector<ManifestCaption> captions;
  /// MultiClass for sources whose masks carry several change classes.
  ClassDomain mask_domain = ClassDomain::Binary;

  CaptionSet caption_set() const;
};

struct Dataset {
  std::string id;
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
  std::map<std::string, std::vector<std::string>> splits;
  std::vector<std::string> notes;

  const DatasetEntry* find(const std::string& pair_id) const;
  std::filesystem::path resolve(const std::filesystem::path& relative) const;
  /// Ids of one split, or every entry id (manifest order) for "all".
  std::vector<std::string> ids(std::string_view split = "all") const;
};

/// Checks split disjointness and referential integrity. Throws
/// Error{DuplicateId}, Error{DuplicateSplit} or Error{DanglingSplitRef}.
void validate_dataset(const Dataset& dataset);

/// Parses a manifest document. Relative roots resolve against base_dir.
/// Throws Error{SchemaError} plus the validate_dataset errors.
Dataset parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir);
Dataset load_manifest(const std::filesystem::path& path);

std::string manifest_to_json(const Dataset& dataset);
void save_manifest(const Dataset& dataset, const std::filesystem::path& path);

/// Converts a LEVIR-CC style caption file ({"images": [{filename, filepath,
/// split, sentences: [{raw, tokens}]}]}) into a dataset rooted at image_root,
/// with images at <split>/{A,B,label}/<filename>.
Dataset convert_levir_cc(std::string_view json_text, const std::filesystem::path& image_root,
                         std::string id = "levir-mci");
Dataset load_levir_cc(const std::filesystem::path& caption_file,
                      const std::filesystem::path& image_root);

/// Builds a dataset from an A/ B/ label/ directory layout, optionally nested
/// under train/ val/ test/. Pairs are the file names present in both A and B.
Dataset discover_dataset(const std::filesystem::path& root, std::string id);

/// Default keyword set for the tree-related subset.
const std::vector<std::string>& default_tree_keywords();

/// Keeps entries where any caption contains a keyword as a whole token,
/// case-insensitively. Throws Error{EmptyKeywords}.
Dataset filter_tree_subset(const Dataset& dataset, const std::vector<std::string>& keywords);

inline constexpr std::array<std::size_t, 3> kLevirTreesPublishedSplits = {1518, 374, 413};
inline constexpr std::array<std::size_t, 3> kForestChangePublishedSplits = {270, 31, 33};

struct SubsetReport {
  Dataset dataset;
  std::map<std::string, std::size_t> source_counts;
  std::map<std::string, std::size_t> subset_counts;
  /// Differences against the published 1518/374/413 split sizes, one line each.
  std::vector<std::string> discrepancies;
};

/// Applies the keyword filter split by split and flags masks MultiClass.
SubsetReport build_levir_trees_manifest(const Dataset& source,
                                        const std::vector<std::string>& keywords);

inline constexpr int kCoverageHistogramBins = 20;

struct DatasetStats {
  std::map<std::string, std::size_t> split_counts;
  std::size_t n_entries = 0;
  /// Per-entry change percent, manifest order.
  std::vector<std::pair<std::string, double>> coverage;
  double coverage_mean = 0.0;
  double coverage_max = 0.0;
  /// 5-point-wide bins over [0,100]; the last bin is closed.
  std::array<std::size_t, kCoverageHistogramBins> coverage_histogram{};
  std::size_t n_captions = 0;
  double caption_length_mean = 0.0;
  std::map<std::size_t, std::size_t> caption_length_counts;
  std::size_t vocabulary_size = 0;
};

/// Loads every entry's mask (binarised) and caption set. Errors are
/// rethrown with the offending pair id. Workers > 1 parallelises mask loading;
/// results do not depend on the worker count.
DatasetStats corpus_statistics(const Dataset& dataset, unsigned workers = 1);

}  // namespace forestchat
