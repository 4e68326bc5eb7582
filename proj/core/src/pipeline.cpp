#include "forestchat/pipeline.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "forestchat/perception.hpp"

namespace forestchat {

namespace fs = std::filesystem;
using nlohmann::json;

std::map<std::string, Tokens> parse_candidate_captions(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaError, fmt::format("captions file is not valid JSON: {}", e.what()));
  }
  std::map<std::string, Tokens> out;
  auto add = [&](const std::string& id, const json& text) {
    if (!text.is_string()) {
      throw Error(ErrorKind::SchemaError, fmt::format("caption for '{}' must be a string", id));
    }
    if (!out.emplace(id, normalize_tokens(text.get<std::string>())).second) {
      throw Error(ErrorKind::DuplicateId, fmt::format("two candidate captions for '{}'", id));
    }
  };
  if (doc.is_object()) {
    for (const auto& [id, text] : doc.items()) add(id, text);
  } else if (doc.is_array()) {
    for (const auto& item : doc) {
      if (!item.is_object() || !item.contains("pair_id") || !item["pair_id"].is_string() ||
          !item.contains("caption")) {
        throw Error(ErrorKind::SchemaError, "caption records need 'pair_id' and 'caption'");
      }
      add(item["pair_id"].get<std::string>(), item["caption"]);
    }
  } else {
    throw Error(ErrorKind::SchemaError, "captions file must be an object or a list");
  }
  return out;
}

std::map<std::string, Tokens> load_candidate_captions(const fs::path& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorKind::IoError, fmt::format("cannot open {}", path.string()));
  std::stringstream buffer;
  buffer << file.rdbuf();
  return parse_candidate_captions(buffer.str());
}

EvalInputs load_eval_inputs(const EvalRequest& request, const Dataset& dataset) {
  if (!request.pred_dir && !request.captions) {
    throw Error(ErrorKind::EmptyInput, "nothing to score: give a prediction directory, captions, or both");
  }
  const std::vector<std::string> ids = dataset.ids(request.split);
  EvalInputs inputs;
  if (request.pred_dir) {
    if (!fs::is_directory(*request.pred_dir)) {
      throw Error(ErrorKind::IoError,
                  fmt::format("prediction directory {} does not exist", request.pred_dir->string()));
    }
    inputs.pred_masks = load_external_predictions(*request.pred_dir, dataset, ids);
    for (const auto& id : ids) {
      const DatasetEntry* entry = dataset.find(id);
      if (entry->mask.empty()) {
        throw Error(ErrorKind::SchemaError, fmt::format("pair '{}' has no ground-truth mask", id));
      }
      inputs.gt_masks.emplace(id, binarize_mask(read_mask(dataset.resolve(entry->mask),
                                                          MaskProvenance::GroundTruth)));
    }
  }
  if (request.captions) {
    inputs.cand_captions = load_candidate_captions(*request.captions);
    const std::set<std::string> wanted(ids.begin(), ids.end());
    std::erase_if(inputs.cand_captions, [&](const auto& kv) {
      return dataset.find(kv.first) != nullptr && !wanted.contains(kv.first);
    });
    for (const auto& id : ids) {
      ReferenceGroup refs;
      for (const auto& c : dataset.find(id)->captions) refs.push_back(normalize_tokens(c.text));
      inputs.ref_captions.emplace(id, std::move(refs));
    }
  }
  return inputs;
}

EvalReport run_eval(const EvalRequest& request, const Dataset& dataset) {
  EvalOptions options;
  options.dataset_id = dataset.id;
  options.model = request.model;
  options.per_pair = request.per_pair;
  options.workers = request.workers ? request.workers : std::max(1u, std::thread::hardware_concurrency());
  return evaluate_dataset(load_eval_inputs(request, dataset), options);
}

EvalReport run_eval(const EvalRequest& request) { return run_eval(request, load_manifest(request.manifest)); }

}  // namespace forestchat
