#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "forestchat/dataset.hpp"
#include "forestchat/eval_metrics.hpp"

// Re-scoring of externally produced predictions against a manifest.

namespace forestchat {

struct EvalRequest {
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> pred_dir;  // <pair_id>.png per pair
  std::optional<std::filesystem::path> captions;  // candidate captions file
  std::string split = "all";
  std::string model = "external";
  bool per_pair = true;
  unsigned workers = 0;  // 0 picks the hardware concurrency
};

/// Candidate captions as either {"pair_id": "text", ...} or
/// [{"pair_id": ..., "caption": ...}, ...]. Throws Error{SchemaError} or
/// Error{DuplicateId}.
std::map<std::string, Tokens> parse_candidate_captions(std::string_view json_text);
std::map<std::string, Tokens> load_candidate_captions(const std::filesystem::path& path);

/// Loads ground truth and references from the manifest for the requested
/// split plus whichever prediction channels the request names. Throws
/// Error{EmptyInput} when neither channel is requested.
EvalInputs load_eval_inputs(const EvalRequest& request, const Dataset& dataset);

EvalReport run_eval(const EvalRequest& request);
EvalReport run_eval(const EvalRequest& request, const Dataset& dataset);

}  // namespace forestchat
