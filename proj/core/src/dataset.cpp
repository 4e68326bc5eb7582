#include "forestchat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "forestchat/mask_analytics.hpp"
#include "parallel.hpp"

namespace forestchat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorKind::IoError, fmt::format("cannot open {}", path.string()));
  std::stringstream buffer;
  buffer << file.rdbuf();
  return buffer.str();
}

const json& require(const json& object, const char* key, std::string_view where) {
  if (!object.is_object() || !object.contains(key)) {
    throw Error(ErrorKind::SchemaError, fmt::format("{}: missing '{}'", where, key));
  }
  return object.at(key);
}

std::string require_string(const json& object, const char* key, std::string_view where) {
  const json& value = require(object, key, where);
  if (!value.is_string()) {
    throw Error(ErrorKind::SchemaError, fmt::format("{}: '{}' must be a string", where, key));
  }
  return value.get<std::string>();
}

std::string canonical_split(std::string name) {
  if (name == "valid" || name == "validation") return "val";
  return name;
}

bool is_split_name(std::string_view name) {
  return std::find(kSplitNames.begin(), kSplitNames.end(), name) != kSplitNames.end();
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> normalized_keywords(const std::vector<std::string>& keywords) {
  std::set<std::string> unique;
  for (const auto& k : keywords) {
    for (auto& token : normalize_tokens(k)) unique.insert(std::move(token));
  }
  return {unique.begin(), unique.end()};
}

std::vector<std::string> sorted_files(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& item : fs::directory_iterator(dir)) {
    if (item.is_regular_file()) names.push_back(item.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

void discover_layout(const fs::path& root, const fs::path& prefix, Dataset& dataset,
                     std::vector<std::string>* split_ids) {
  const fs::path base = root / prefix;
  for (const auto& name : sorted_files(base / "A")) {
    if (!fs::exists(base / "B" / name)) continue;
    DatasetEntry entry;
    entry.pair_id = fs::path(name).stem().string();
    entry.a = prefix / "A" / name;
    entry.b = prefix / "B" / name;
    if (fs::exists(base / "label" / name)) entry.mask = prefix / "label" / name;
    if (split_ids != nullptr) split_ids->push_back(entry.pair_id);
    dataset.entries.push_back(std::move(entry));
  }
}

}  // namespace

CaptionSet DatasetEntry::caption_set() const {
  CaptionSet set;
  set.pair_id = pair_id;
  for (const auto& c : captions) set.captions.push_back({normalize_tokens(c.text), c.origin});
  return set;
}

const DatasetEntry* Dataset::find(const std::string& pair_id) const {
  const auto it = std::find_if(entries.begin(), entries.end(),
                               [&](const DatasetEntry& e) { return e.pair_id == pair_id; });
  return it == entries.end() ? nullptr : &*it;
}

fs::path Dataset::resolve(const fs::path& relative) const {
  return relative.is_absolute() ? relative : root / relative;
}

std::vector<std::string> Dataset::ids(std::string_view split) const {
  if (split == "all") {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.pair_id);
    return out;
  }
  const auto it = splits.find(std::string(split));
  if (it == splits.end()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("dataset '{}' has no split '{}'", id, split));
  }
  return it->second;
}

void validate_dataset(const Dataset& dataset) {
  std::set<std::string> ids;
  for (const auto& e : dataset.entries) {
    if (!ids.insert(e.pair_id).second) {
      throw Error(ErrorKind::DuplicateId, fmt::format("duplicate pair id '{}'", e.pair_id));
    }
  }
  std::map<std::string, std::string> owner;
  for (const auto& [split, members] : dataset.splits) {
    for (const auto& id : members) {
      if (!ids.contains(id)) {
        throw Error(ErrorKind::DanglingSplitRef,
                    fmt::format("split '{}' references unknown pair id '{}'", split, id));
      }
      const auto [it, inserted] = owner.emplace(id, split);
      if (!inserted) {
        throw Error(ErrorKind::DuplicateSplit,
                    fmt::format("pair id '{}' appears in both '{}' and '{}'", id, it->second,
                                split));
      }
    }
  }
}

Dataset parse_manifest(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaError, fmt::format("manifest is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw Error(ErrorKind::SchemaError, "manifest must be an object");

  Dataset dataset;
  dataset.id = require_string(doc, "id", "manifest");
  const fs::path root = doc.contains("root") ? fs::path(require_string(doc, "root", "manifest"))
                                             : fs::path(".");
  dataset.root = (root.is_absolute() ? root : base_dir / root).lexically_normal();
  if (!dataset.root.has_filename() && dataset.root.has_relative_path()) dataset.root = dataset.root.parent_path();

  const json& entries = require(doc, "entries", "manifest");
  if (!entries.is_array()) throw Error(ErrorKind::SchemaError, "manifest: 'entries' must be a list");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& item = entries[i];
    const std::string where = fmt::format("manifest entry {}", i);
    DatasetEntry entry;
    entry.pair_id = require_string(item, "pair_id", where);
    if (entry.pair_id.empty()) throw Error(ErrorKind::SchemaError, where + ": empty pair_id");
    entry.a = require_string(item, "a", where);
    entry.b = require_string(item, "b", where);
    if (item.contains("mask") && !item.at("mask").is_null()) {
      entry.mask = require_string(item, "mask", where);
    }
    if (item.contains("mask_domain")) {
      const std::string domain = require_string(item, "mask_domain", where);
      if (domain == "multiclass") {
        entry.mask_domain = ClassDomain::MultiClass;
      } else if (domain != "binary") {
        throw Error(ErrorKind::SchemaError, fmt::format("{}: bad mask_domain '{}'", where, domain));
      }
    }
    if (item.contains("captions")) {
      const json& captions = item.at("captions");
      if (!captions.is_array()) {
        throw Error(ErrorKind::SchemaError, where + ": 'captions' must be a list");
      }
      for (const json& c : captions) {
        ManifestCaption caption;
        caption.text = require_string(c, "text", where);
        caption.origin = c.contains("origin")
                             ? caption_origin_from_string(require_string(c, "origin", where))
                             : CaptionOrigin::Human;
        entry.captions.push_back(std::move(caption));
      }
    }
    dataset.entries.push_back(std::move(entry));
  }

  if (doc.contains("splits")) {
    const json& splits = doc.at("splits");
    if (!splits.is_object()) throw Error(ErrorKind::SchemaError, "manifest: 'splits' must be an object");
    for (const auto& [name, members] : splits.items()) {
      if (!is_split_name(name)) {
        throw Error(ErrorKind::SchemaError, fmt::format("manifest: unknown split '{}'", name));
      }
      if (!members.is_array()) {
        throw Error(ErrorKind::SchemaError, fmt::format("manifest: split '{}' must be a list", name));
      }
      auto& ids = dataset.splits[name];
      for (const json& id : members) {
        if (!id.is_string()) {
          throw Error(ErrorKind::SchemaError, fmt::format("manifest: split '{}' holds a non-string id", name));
        }
        ids.push_back(id.get<std::string>());
      }
    }
  }
  if (doc.contains("notes") && doc.at("notes").is_array()) {
    for (const json& note : doc.at("notes")) {
      if (note.is_string()) dataset.notes.push_back(note.get<std::string>());
    }
  }
  validate_dataset(dataset);
  return dataset;
}

Dataset load_manifest(const fs::path& path) {
  return parse_manifest(read_text(path), path.parent_path());
}

std::string manifest_to_json(const Dataset& dataset) {
  json doc;
  doc["id"] = dataset.id;
  doc["root"] = dataset.root.generic_string();
  doc["entries"] = json::array();
  for (const auto& e : dataset.entries) {
    json item;
    item["pair_id"] = e.pair_id;
    item["a"] = e.a.generic_string();
    item["b"] = e.b.generic_string();
    item["mask"] = e.mask.generic_string();
    if (e.mask_domain == ClassDomain::MultiClass) item["mask_domain"] = "multiclass";
    item["captions"] = json::array();
    for (const auto& c : e.captions) {
      item["captions"].push_back({{"text", c.text}, {"origin", std::string(to_string(c.origin))}});
    }
    doc["entries"].push_back(std::move(item));
  }
  doc["splits"] = json::object();
  for (const auto& [name, ids] : dataset.splits) doc["splits"][name] = ids;
  if (!dataset.notes.empty()) doc["notes"] = dataset.notes;
  return doc.dump(2) + "\n";
}

void save_manifest(const Dataset& dataset, const fs::path& path) {
  Dataset copy = dataset;
  const fs::path dir = fs::absolute(path).parent_path();
  const fs::path root = fs::absolute(dataset.root);
  const fs::path relative = root.lexically_relative(dir);
  copy.root = relative.empty() ? root : relative;
  std::ofstream file(path);
  if (!file) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
  file << manifest_to_json(copy);
}

Dataset convert_levir_cc(std::string_view json_text, const fs::path& image_root, std::string id) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaError, fmt::format("caption file is not valid JSON: {}", e.what()));
  }
  const json& images = require(doc, "images", "caption file");
  if (!images.is_array()) throw Error(ErrorKind::SchemaError, "caption file: 'images' must be a list");

  Dataset dataset;
  dataset.id = std::move(id);
  dataset.root = image_root;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const json& item = images[i];
    const std::string where = fmt::format("caption file image {}", i);
    const std::string filename = require_string(item, "filename", where);
    const std::string split = canonical_split(
        item.contains("split") ? require_string(item, "split", where)
                               : require_string(item, "filepath", where));
    const std::string folder =
        item.contains("filepath") ? require_string(item, "filepath", where) : split;
    DatasetEntry entry;
    entry.pair_id = fs::path(filename).stem().string();
    entry.a = fs::path(folder) / "A" / filename;
    entry.b = fs::path(folder) / "B" / filename;
    entry.mask = fs::path(folder) / "label" / filename;
    entry.mask_domain = ClassDomain::MultiClass;
    if (item.contains("sentences")) {
      for (const json& sentence : item.at("sentences")) {
        std::string text;
        if (sentence.contains("raw") && sentence.at("raw").is_string()) {
          text = trim(sentence.at("raw").get<std::string>());
        } else if (sentence.contains("tokens") && sentence.at("tokens").is_array()) {
          text = join_tokens(sentence.at("tokens").get<std::vector<std::string>>());
        }
        if (!text.empty()) entry.captions.push_back({std::move(text), CaptionOrigin::Human});
      }
    }
    if (is_split_name(split)) dataset.splits[split].push_back(entry.pair_id);
    dataset.entries.push_back(std::move(entry));
  }
  validate_dataset(dataset);
  return dataset;
}

Dataset load_levir_cc(const fs::path& caption_file, const fs::path& image_root) {
  return convert_levir_cc(read_text(caption_file), image_root);
}

Dataset discover_dataset(const fs::path& root, std::string id) {
  Dataset dataset;
  dataset.id = std::move(id);
  dataset.root = root;
  bool any_split = false;
  for (auto split : kSplitNames) {
    if (fs::is_directory(root / split / "A")) {
      any_split = true;
      auto& ids = dataset.splits[std::string(split)];
      discover_layout(root, split, dataset, &ids);
    }
  }
  if (!any_split) discover_layout(root, "", dataset, nullptr);
  validate_dataset(dataset);
  return dataset;
}

const std::vector<std::string>& default_tree_keywords() {
  static const std::vector<std::string> keywords = {
      "tree", "trees", "forest", "forests", "woodland", "woodlands", "woods", "vegetation"};
  return keywords;
}

Dataset filter_tree_subset(const Dataset& dataset, const std::vector<std::string>& keywords) {
  const auto wanted = normalized_keywords(keywords);
  if (wanted.empty()) throw Error(ErrorKind::EmptyKeywords, "keyword set is empty");
  const std::set<std::string> lookup(wanted.begin(), wanted.end());

  Dataset out;
  out.id = dataset.id;
  out.root = dataset.root;
  out.notes = dataset.notes;
  std::set<std::string> kept;
  for (const auto& entry : dataset.entries) {
    const bool match = std::any_of(entry.captions.begin(), entry.captions.end(), [&](const auto& c) {
      const auto tokens = normalize_tokens(c.text);
      return std::any_of(tokens.begin(), tokens.end(),
                         [&](const std::string& t) { return lookup.contains(t); });
    });
    if (match) {
      kept.insert(entry.pair_id);
      out.entries.push_back(entry);
    }
  }
  for (const auto& [name, ids] : dataset.splits) {
    auto& filtered = out.splits[name];
    for (const auto& id : ids) {
      if (kept.contains(id)) filtered.push_back(id);
    }
  }
  std::string joined;
  for (const auto& k : wanted) joined += (joined.empty() ? "" : ", ") + k;
  const std::string note = "keyword filter: " + joined;
  if (std::find(out.notes.begin(), out.notes.end(), note) == out.notes.end()) {
    out.notes.push_back(note);
  }
  return out;
}

SubsetReport build_levir_trees_manifest(const Dataset& source,
                                        const std::vector<std::string>& keywords) {
  SubsetReport report;
  report.dataset = filter_tree_subset(source, keywords);
  report.dataset.id = "levir-mci-trees";
  for (auto& entry : report.dataset.entries) entry.mask_domain = ClassDomain::MultiClass;
  for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
    const std::string name(kSplitNames[i]);
    const auto src = source.splits.find(name);
    const auto dst = report.dataset.splits.find(name);
    report.source_counts[name] = src == source.splits.end() ? 0 : src->second.size();
    report.subset_counts[name] = dst == report.dataset.splits.end() ? 0 : dst->second.size();
    const std::size_t published = kLevirTreesPublishedSplits[i];
    if (report.subset_counts[name] != published) {
      report.discrepancies.push_back(
          fmt::format("{}: {} pairs retained, published subset has {} ({:+d})", name,
                      report.subset_counts[name], published,
                      static_cast<long long>(report.subset_counts[name]) -
                          static_cast<long long>(published)));
    }
  }
  return report;
}

DatasetStats corpus_statistics(const Dataset& dataset, unsigned workers) {
  DatasetStats stats;
  stats.n_entries = dataset.entries.size();
  for (const auto& [name, ids] : dataset.splits) stats.split_counts[name] = ids.size();

  std::vector<double> coverage(dataset.entries.size(), 0.0);
  detail::parallel_for(dataset.entries.size(), workers, [&](std::size_t i) {
    const DatasetEntry& entry = dataset.entries[i];
    try {
      if (entry.mask.empty()) {
        throw Error(ErrorKind::SchemaError, "entry has no mask path");
      }
      const ChangeMask mask =
          binarize_mask(read_mask(dataset.resolve(entry.mask), MaskProvenance::GroundTruth));
      coverage[i] = compute_stats(mask).change_percent;
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("pair '{}': {}", entry.pair_id, e.what()));
    }
  });

  double sum = 0.0;
  for (std::size_t i = 0; i < coverage.size(); ++i) {
    stats.coverage.emplace_back(dataset.entries[i].pair_id, coverage[i]);
    sum += coverage[i];
    stats.coverage_max = std::max(stats.coverage_max, coverage[i]);
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(coverage[i] / 5.0),
                                           kCoverageHistogramBins - 1);
    ++stats.coverage_histogram[bin];
  }
  if (!coverage.empty()) stats.coverage_mean = sum / static_cast<double>(coverage.size());

  std::set<std::string> vocabulary;
  std::size_t total_length = 0;
  for (const auto& entry : dataset.entries) {
    for (const auto& caption : entry.captions) {
      const auto tokens = normalize_tokens(caption.text);
      ++stats.n_captions;
      total_length += tokens.size();
      ++stats.caption_length_counts[tokens.size()];
      vocabulary.insert(tokens.begin(), tokens.end());
    }
  }
  stats.vocabulary_size = vocabulary.size();
  if (stats.n_captions > 0) {
    stats.caption_length_mean =
        static_cast<double>(total_length) / static_cast<double>(stats.n_captions);
  }
  return stats;
}

}  // namespace forestchat
