#include "forestchat/records.hpp"

#include <fmt/format.h>

#include "forestchat/error.hpp"

namespace forestchat {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& value) {
  return value ? json(*value) : json(nullptr);
}

std::string cell(const std::optional<double>& value, double scale = 1.0) {
  return value ? fmt::format("{:.2f}", *value * scale) : std::string("-");
}

}  // namespace

json to_record(const MaskStats& stats) {
  json grid = json::object();
  for (std::size_t i = 0; i < kGridCells; ++i) {
    grid[std::string(to_string(static_cast<GridCell>(i)))] = stats.grid_fractions[i];
  }
  json dominant = json::array();
  for (auto c : stats.dominant_cells) dominant.push_back(std::string(to_string(c)));
  return {
      {"width", stats.width},
      {"height", stats.height},
      {"changed_pixels", stats.changed_pixels},
      {"change_percent", stats.change_percent},
      {"num_patches", stats.num_patches},
      {"largest_patch_percent", stats.largest_patch_percent},
      {"largest_patch_cell", stats.largest_patch_cell
                                 ? json(std::string(to_string(*stats.largest_patch_cell)))
                                 : json(nullptr)},
      {"mean_patch_area_px", stats.mean_patch_area_px},
      {"grid_fractions", grid},
      {"dominant_cells", dominant},
  };
}

MaskStats mask_stats_from_record(const json& record) {
  try {
    MaskStats stats;
    stats.width = record.at("width").get<int>();
    stats.height = record.at("height").get<int>();
    stats.changed_pixels = record.at("changed_pixels").get<std::int64_t>();
    stats.change_percent = record.at("change_percent").get<double>();
    stats.num_patches = record.at("num_patches").get<int>();
    stats.largest_patch_percent = record.at("largest_patch_percent").get<double>();
    const json& cell_name = record.at("largest_patch_cell");
    if (!cell_name.is_null()) {
      stats.largest_patch_cell = grid_cell_from_string(cell_name.get<std::string>());
    }
    stats.mean_patch_area_px = record.at("mean_patch_area_px").get<double>();
    for (std::size_t i = 0; i < kGridCells; ++i) {
      stats.grid_fractions[i] =
          record.at("grid_fractions").at(std::string(to_string(static_cast<GridCell>(i)))).get<double>();
    }
    for (const auto& name : record.at("dominant_cells")) {
      const auto c = grid_cell_from_string(name.get<std::string>());
      if (!c) throw Error(ErrorKind::SchemaError, "unknown grid cell in stats record");
      stats.dominant_cells.push_back(*c);
    }
    return stats;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, fmt::format("bad stats record: {}", e.what()));
  }
}

json to_record(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

json to_record(const SegScores& s) {
  return {{"miou", s.miou}, {"iou_nc", optional_number(s.iou_nc)}, {"iou_c", optional_number(s.iou_c)}};
}

json to_record(const CaptionScores& s) {
  return {{"b1", s.bleu.b[0]},      {"b2", s.bleu.b[1]},        {"b3", s.bleu.b[2]},
          {"b4", s.bleu.b[3]},      {"meteor_lite", s.meteor},  {"rouge_l", s.rouge_l},
          {"cider_d", s.cider_d}};
}

json to_record(const CaptionSet& set) {
  json captions = json::array();
  for (const auto& c : set.captions) {
    captions.push_back({{"origin", std::string(to_string(c.origin))},
                        {"text", join_tokens(c.tokens)},
                        {"tokens", c.tokens}});
  }
  return {{"pair_id", set.pair_id}, {"captions", captions}};
}

json to_record(const EvalReport& report) {
  json out = {
      {"dataset_id", report.dataset_id},
      {"model", report.model},
      {"n_pairs", report.n_pairs},
      {"channels", {{"detection", report.has_detection()}, {"captioning", report.has_captioning()}}},
      {"seg", report.seg ? to_record(*report.seg) : json(nullptr)},
      {"confusion", report.confusion ? to_record(*report.confusion) : json(nullptr)},
      {"cap", report.cap ? to_record(*report.cap) : json(nullptr)},
  };
  json per_pair = json::array();
  for (const auto& p : report.per_pair) {
    json item = {{"pair_id", p.pair_id}};
    if (p.confusion) item["confusion"] = to_record(*p.confusion);
    if (p.seg) item["seg"] = to_record(*p.seg);
    if (p.meteor) item["meteor_lite"] = *p.meteor;
    if (p.rouge_l) item["rouge_l"] = *p.rouge_l;
    if (p.cider_d) item["cider_d"] = *p.cider_d;
    per_pair.push_back(std::move(item));
  }
  out["per_pair"] = per_pair;
  out["notes"] = report.notes;
  return out;
}

json to_record(const DatasetStats& s) {
  json coverage = json::array();
  for (const auto& [id, pct] : s.coverage) coverage.push_back({{"pair_id", id}, {"change_percent", pct}});
  json lengths = json::object();
  for (const auto& [len, count] : s.caption_length_counts) lengths[std::to_string(len)] = count;
  return {
      {"n_entries", s.n_entries},
      {"split_counts", s.split_counts},
      {"coverage_mean", s.coverage_mean},
      {"coverage_max", s.coverage_max},
      {"coverage_histogram", s.coverage_histogram},
      {"coverage", coverage},
      {"n_captions", s.n_captions},
      {"caption_length_mean", s.caption_length_mean},
      {"caption_length_counts", lengths},
      {"vocabulary_size", s.vocabulary_size},
  };
}

std::string format_report_table(const EvalReport& report) {
  std::string out;
  out += fmt::format("{:<16} | {:<10} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>7} | {:>7}\n",
                     "Dataset", "Model", "mIoU", "IoU_nc", "IoU_c", "B1", "B2", "B3", "B4",
                     "METEOR", "ROUGE_L", "CIDEr-D");
  std::optional<double> miou, nc, c;
  if (report.seg) {
    miou = report.seg->miou;
    nc = report.seg->iou_nc;
    c = report.seg->iou_c;
  }
  std::array<std::optional<double>, 7> caps;
  if (report.cap) {
    caps = {report.cap->bleu.b[0], report.cap->bleu.b[1], report.cap->bleu.b[2],
            report.cap->bleu.b[3], report.cap->meteor,    report.cap->rouge_l,
            report.cap->cider_d};
  }
  out += fmt::format("{:<16} | {:<10} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6} | {:>7} | {:>7}\n",
                     report.dataset_id, report.model, cell(miou), cell(nc), cell(c),
                     cell(caps[0], 100.0), cell(caps[1], 100.0), cell(caps[2], 100.0),
                     cell(caps[3], 100.0), cell(caps[4], 100.0), cell(caps[5], 100.0),
                     cell(caps[6], 100.0));
  out += fmt::format("pairs: {}\n", report.n_pairs);
  for (const auto& note : report.notes) out += "note: " + note + "\n";
  return out;
}

std::string emit_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::Record) return to_record(report).dump(2) + "\n";
  return format_report_table(report);
}

std::string format_dataset_stats(const DatasetStats& s, const std::string& dataset_id) {
  std::string out = fmt::format("dataset: {}\nentries: {}\n", dataset_id, s.n_entries);
  for (const auto& [name, n] : s.split_counts) out += fmt::format("split {}: {}\n", name, n);
  out += fmt::format("change cover: mean {:.2f}%, max {:.2f}%\n", s.coverage_mean, s.coverage_max);
  out += "change cover histogram (5% bins):\n";
  for (std::size_t i = 0; i < s.coverage_histogram.size(); ++i) {
    out += fmt::format("  [{:>3}, {:>3}{} {}\n", i * 5, i * 5 + 5,
                       i + 1 == s.coverage_histogram.size() ? "]" : ")", s.coverage_histogram[i]);
  }
  out += fmt::format("captions: {}, mean length {:.2f} tokens, vocabulary {}\n", s.n_captions,
                     s.caption_length_mean, s.vocabulary_size);
  out += "caption length distribution:\n";
  for (const auto& [len, n] : s.caption_length_counts) out += fmt::format("  {:>3}: {}\n", len, n);
  return out;
}

}  // namespace forestchat
