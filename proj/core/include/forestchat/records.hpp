#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "forestchat/caption_engine.hpp"
#include "forestchat/dataset.hpp"
#include "forestchat/eval_metrics.hpp"
#include "forestchat/mask_analytics.hpp"

// Machine-readable records for artifacts and reports. Key names are stable;
// consumers (HTTP clients, scripts) depend on them.

namespace forestchat {

nlohmann::json to_record(const MaskStats& stats);
nlohmann::json to_record(const ConfusionCounts& counts);
nlohmann::json to_record(const SegScores& scores);
nlohmann::json to_record(const CaptionScores& scores);
nlohmann::json to_record(const CaptionSet& captions);
nlohmann::json to_record(const EvalReport& report);
nlohmann::json to_record(const DatasetStats& stats);

/// Restores a MaskStats from its record. Throws Error{SchemaError}.
MaskStats mask_stats_from_record(const nlohmann::json& record);

enum class ReportFormat { Table, Record };

/// Table columns: mIoU IoU_nc IoU_c B1 B2 B3 B4 METEOR ROUGE_L CIDEr-D.
/// Segmentation in percent, caption metrics x100, two decimals; absent
/// channels print "-".
std::string format_report_table(const EvalReport& report);
std::string emit_report(const EvalReport& report, ReportFormat format);

std::string format_dataset_stats(const DatasetStats& stats, const std::string& dataset_id);

}  // namespace forestchat
