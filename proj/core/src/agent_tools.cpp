#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "forestchat/records.hpp"

namespace forestchat {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::Pair: return "pair";
    case ArtifactKind::Mask: return "mask";
    case ArtifactKind::Stats: return "stats";
    case ArtifactKind::Captions: return "captions";
    case ArtifactKind::Overlay: return "overlay";
    case ArtifactKind::Evaluation: return "evaluation";
    case ArtifactKind::DatasetSummary: return "dataset_summary";
    case ArtifactKind::Confusion: return "confusion";
  }
  return "unknown";
}

std::string_view to_string(CallStatus status) {
  switch (status) {
    case CallStatus::Pending: return "pending";
    case CallStatus::Ok: return "ok";
    case CallStatus::Failed: return "failed";
  }
  return "unknown";
}

std::string_view to_string(ParamType type) {
  switch (type) {
    case ParamType::String: return "string";
    case ParamType::Path: return "path";
    case ParamType::Integer: return "integer";
    case ParamType::Real: return "number";
    case ParamType::Boolean: return "boolean";
    case ParamType::ArtifactRef: return "artifact_id";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Artifact records

namespace {

json rgb_json(Rgb c) { return json::array({c.r, c.g, c.b}); }

json value_record(const LoadedPair& p) {
  json out = {{"pair_id", p.pair.id},
              {"width", p.pair.width()},
              {"height", p.pair.height()},
              {"channels", p.pair.epoch_a.channels()},
              {"has_ground_truth", p.ground_truth.has_value()}};
  if (p.ground_truth) out["ground_truth_changed_pixels"] = p.ground_truth->count_nonzero();
  return out;
}

json value_record(const ChangeMask& m) {
  return {{"width", m.width()},
          {"height", m.height()},
          {"provenance", to_string(m.provenance())},
          {"binary", m.is_binary()},
          {"changed_pixels", m.count_nonzero()}};
}

json value_record(const MaskStats& s) {
  json out = to_record(s);
  out["severity"] = std::string(to_string(severity_bucket(s.change_percent).name));
  out["patchiness"] = std::string(to_string(patchiness_of(s.num_patches)));
  return out;
}

json value_record(const CaptionSet& c) { return to_record(c); }

json value_record(const Raster& r) {
  return {{"width", r.width()},
          {"height", r.height()},
          {"legend",
           {{"agreement", rgb_json(kOverlayAgreement)},
            {"false_positive", rgb_json(kOverlayFalsePositive)},
            {"false_negative", rgb_json(kOverlayFalseNegative)},
            {"dim_factor", kOverlayDimFactor}}}};
}

json value_record(const PairEvaluation& e) {
  return {{"confusion", to_record(e.confusion)}, {"seg", to_record(e.seg)}};
}

json value_record(const DatasetSummary& d) {
  return {{"dataset_id", d.dataset_id}, {"stats", to_record(d.stats)}};
}

json value_record(const ConfusionCounts& c) { return to_record(c); }

void scan_text_numbers(std::string_view text, std::vector<double>& out) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      std::size_t j = i;
      while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.')) ++j;
      std::string token(text.substr(i, j - i));
      while (!token.empty() && token.back() == '.') token.pop_back();
      try {
        out.push_back(std::stod(token));
      } catch (const std::exception&) {
      }
      i = j;
    } else {
      ++i;
    }
  }
}

void collect_numbers(const json& node, std::vector<double>& out) {
  if (node.is_number()) {
    out.push_back(node.get<double>());
  } else if (node.is_string()) {
    scan_text_numbers(node.get_ref<const std::string&>(), out);
  } else if (node.is_structured()) {
    for (const auto& item : node.items()) {
      if (node.is_object()) scan_text_numbers(item.key(), out);
      collect_numbers(item.value(), out);
    }
  }
}

}  // namespace

json artifact_record(const Artifact& artifact) {
  json out = {{"id", artifact.id},
              {"kind", std::string(to_string(artifact.kind))},
              {"produced_by", artifact.produced_by},
              {"inputs", artifact.inputs},
              {"warnings", artifact.warnings}};
  out["value"] = std::visit([](const auto& v) { return value_record(v); }, artifact.value);
  return out;
}

std::vector<double> artifact_numbers(const Artifact& artifact) {
  std::vector<double> out;
  collect_numbers(artifact_record(artifact).at("value"), out);
  for (const auto& w : artifact.warnings) scan_text_numbers(w, out);
  return out;
}

// ---------------------------------------------------------------------------
// Tool context

const Artifact* ToolContext::input(const std::string& slot) const {
  const auto it = inputs.find(slot);
  return it == inputs.end() ? nullptr : it->second.get();
}

fs::path ToolContext::path_arg(const std::string& name) const {
  const fs::path given = args.at(name).get<std::string>();
  if (!data_root) return given;
  const fs::path root = fs::weakly_canonical(*data_root);
  const fs::path full = fs::weakly_canonical(given.is_absolute() ? given : root / given);
  const fs::path rel = full.lexically_relative(root);
  if (rel.empty() || *rel.begin() == "..") {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("path '{}' escapes the data root", given.string()));
  }
  return full;
}

// ---------------------------------------------------------------------------
// Registry

void ToolRegistry::register_tool(Tool tool) {
  std::set<std::string> names;
  for (const auto& p : tool.spec.params) {
    if (!names.insert(p.name).second) {
      throw Error(ErrorKind::InvalidArgument,
                  fmt::format("tool '{}' declares parameter '{}' twice", tool.spec.name, p.name));
    }
  }
  const std::string name = tool.spec.name;
  if (!tools_.emplace(name, std::move(tool)).second) {
    throw Error(ErrorKind::DuplicateTool, fmt::format("tool '{}' is already registered", name));
  }
}

const Tool* ToolRegistry::find(std::string_view name) const {
  const auto it = tools_.find(name);
  return it == tools_.end() ? nullptr : &it->second;
}

std::vector<const ToolSpec*> ToolRegistry::list() const {
  std::vector<const ToolSpec*> out;
  for (const auto& [name, tool] : tools_) out.push_back(&tool.spec);
  return out;
}

namespace {

bool type_matches(ParamType type, const json& v) {
  switch (type) {
    case ParamType::String: return v.is_string();
    case ParamType::Path:
    case ParamType::ArtifactRef: return v.is_string() && !v.get_ref<const std::string&>().empty();
    case ParamType::Integer: return v.is_number_integer();
    case ParamType::Real: return v.is_number();
    case ParamType::Boolean: return v.is_boolean();
  }
  return false;
}

}  // namespace

void ToolRegistry::validate_call(ToolCall& call) const {
  const Tool* tool = find(call.tool);
  if (!tool) throw Error(ErrorKind::UnknownTool, fmt::format("unknown tool '{}'", call.tool));
  if (call.args.is_null()) call.args = json::object();
  if (!call.args.is_object()) {
    throw Error(ErrorKind::InvalidPlan, fmt::format("arguments of '{}' must be an object", call.tool));
  }
  for (const auto& item : call.args.items()) {
    const auto& params = tool->spec.params;
    const auto p = std::find_if(params.begin(), params.end(),
                                [&](const ParamSpec& s) { return s.name == item.key(); });
    if (p == params.end()) {
      throw Error(ErrorKind::InvalidPlan,
                  fmt::format("tool '{}' has no argument '{}'", call.tool, item.key()));
    }
    if (!type_matches(p->type, item.value())) {
      throw Error(ErrorKind::InvalidPlan,
                  fmt::format("argument '{}' of '{}' must be of type {}", p->name, call.tool,
                              to_string(p->type)));
    }
    if (!p->choices.empty() &&
        std::find(p->choices.begin(), p->choices.end(), item.value().get<std::string>()) ==
            p->choices.end()) {
      throw Error(ErrorKind::InvalidPlan,
                  fmt::format("argument '{}' of '{}' must be one of: {}", p->name, call.tool,
                              fmt::join(p->choices, ", ")));
    }
  }
  for (const auto& p : tool->spec.params) {
    if (call.args.contains(p.name)) continue;
    if (p.required) {
      throw Error(ErrorKind::InvalidPlan,
                  fmt::format("tool '{}' requires argument '{}'", call.tool, p.name));
    }
    if (p.default_value) call.args[p.name] = *p.default_value;
  }
}

void ToolRegistry::validate(Plan& plan, std::size_t max_steps) const {
  if (plan.steps.size() > max_steps) {
    throw Error(ErrorKind::PlanTooLong,
                fmt::format("plan has {} steps, the limit is {}", plan.steps.size(), max_steps));
  }
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    try {
      validate_call(plan.steps[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("step {}: {}", i + 1, e.what()));
    }
  }
}

json ToolRegistry::specs_json() const {
  json out = json::array();
  for (const ToolSpec* spec : list()) {
    json params = json::array();
    for (const auto& p : spec->params) {
      json item = {{"name", p.name},
                   {"type", std::string(to_string(p.type))},
                   {"required", p.required},
                   {"description", p.description}};
      if (p.default_value) item["default"] = *p.default_value;
      if (!p.choices.empty()) item["choices"] = p.choices;
      params.push_back(std::move(item));
    }
    out.push_back({{"name", spec->name},
                   {"description", spec->description},
                   {"parameters", params},
                   {"result_kind", std::string(to_string(spec->result_kind))}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Builtin tools

namespace {

const ChangeMask& mask_of(const Artifact& a) {
  if (const auto* m = std::get_if<ChangeMask>(&a.value)) return *m;
  if (const auto* p = std::get_if<LoadedPair>(&a.value); p && p->ground_truth) return *p->ground_truth;
  throw Error(ErrorKind::MissingArtifact, fmt::format("artifact {} holds no mask", a.id));
}

const ImagePair& pair_of(const Artifact& a) { return std::get<LoadedPair>(a.value).pair; }

ChangeMask binary(const ChangeMask& m, std::vector<std::string>& warnings) {
  if (m.is_binary()) return m;
  warnings.push_back("multi-class mask collapsed to change / no change");
  return binarize_mask(m);
}

DetectionParams detection_params(const ToolContext& ctx) {
  DetectionParams params = ctx.session.config().detection;
  if (ctx.args.contains("min_area")) params.min_area_px = ctx.args["min_area"].get<int>();
  if (ctx.args.contains("kernel_radius")) params.kernel_radius = ctx.args["kernel_radius"].get<int>();
  if (ctx.args.contains("direction")) {
    params.direction = change_direction_from_string(ctx.args["direction"].get<std::string>());
  }
  if (params.min_area_px < 0 || params.kernel_radius < 0) {
    throw Error(ErrorKind::InvalidArgument, "min_area and kernel_radius must not be negative");
  }
  return params;
}

ParamSpec param(std::string name, ParamType type, bool required, std::string description,
                std::optional<json> default_value = std::nullopt,
                std::vector<std::string> choices = {}) {
  return ParamSpec{std::move(name), type, required, std::move(default_value), std::move(description),
                   std::move(choices)};
}

Tool load_pair_tool() {
  Tool t;
  t.spec = {"load_pair",
            "Load two co-registered epoch images (and optionally a reference change mask) as the current pair.",
            {param("path_a", ParamType::Path, true, "earlier epoch image"),
             param("path_b", ParamType::Path, true, "later epoch image"),
             param("mask", ParamType::Path, false, "reference change mask")},
            ArtifactKind::Pair};
  t.run = [](const ToolContext& ctx) {
    LoadedPair loaded{load_image_pair(ctx.path_arg("path_a"), ctx.path_arg("path_b")), std::nullopt};
    if (ctx.args.contains("mask")) {
      ChangeMask gt = read_mask(ctx.path_arg("mask"), MaskProvenance::GroundTruth);
      if (gt.width() != loaded.pair.width() || gt.height() != loaded.pair.height()) {
        throw Error(ErrorKind::DimensionMismatch,
                    fmt::format("mask is {}x{} but the pair is {}x{}", gt.width(), gt.height(),
                                loaded.pair.width(), loaded.pair.height()));
      }
      loaded.ground_truth = std::move(gt);
    }
    return ToolOutput{std::move(loaded), {}};
  };
  return t;
}

Tool detect_changes_tool() {
  Tool t;
  t.spec = {"detect_changes",
            "Classical change detection on the loaded pair (excess-green difference, Otsu split, morphology).",
            {param("min_area", ParamType::Integer, false, "smallest kept patch in pixels; session setting when omitted"),
             param("kernel_radius", ParamType::Integer, false, "morphology radius; session setting when omitted"),
             param("direction", ParamType::String, false, "which vegetation change to flag", std::nullopt,
                   {"loss", "gain", "both"})},
            ArtifactKind::Mask};
  t.inputs = {{"pair", ArtifactKind::Pair, MaskRole::Any, true, ""}};
  t.run = [](const ToolContext& ctx) {
    DetectionResult r = detect_changes(pair_of(*ctx.input("pair")), detection_params(ctx));
    return ToolOutput{std::move(r.mask), std::move(r.warnings)};
  };
  return t;
}

Tool load_prediction_tool() {
  Tool t;
  t.spec = {"load_prediction",
            "Load an externally produced change mask as the current prediction.",
            {param("path", ParamType::Path, true, "mask image")},
            ArtifactKind::Mask};
  t.inputs = {{"pair", ArtifactKind::Pair, MaskRole::Any, false, ""}};
  t.run = [](const ToolContext& ctx) {
    std::vector<std::string> warnings;
    ChangeMask m = binary(read_mask(ctx.path_arg("path"), MaskProvenance::Predicted), warnings);
    if (const Artifact* pair = ctx.input("pair")) {
      const ImagePair& p = pair_of(*pair);
      if (m.width() != p.width() || m.height() != p.height()) {
        throw Error(ErrorKind::DimensionMismatch,
                    fmt::format("prediction is {}x{} but the pair is {}x{}", m.width(), m.height(),
                                p.width(), p.height()));
      }
    }
    return ToolOutput{std::move(m), std::move(warnings)};
  };
  return t;
}

Tool compute_stats_tool() {
  Tool t;
  t.spec = {"compute_stats",
            "Change extent, patch count, largest patch and 3x3 location breakdown of a mask.",
            {param("mask", ParamType::ArtifactRef, false, "mask artifact; newest prediction when omitted")},
            ArtifactKind::Stats};
  t.inputs = {{"mask", ArtifactKind::Mask, MaskRole::Predicted, true, "mask"}};
  t.run = [](const ToolContext& ctx) {
    std::vector<std::string> warnings;
    MaskStats s = compute_stats(binary(mask_of(*ctx.input("mask")), warnings));
    return ToolOutput{std::move(s), std::move(warnings)};
  };
  return t;
}

Tool generate_captions_tool() {
  Tool t;
  t.spec = {"generate_captions",
            "Four rule-based captions (extent, patches, location, summary) from mask statistics.",
            {param("stats", ParamType::ArtifactRef, false, "stats artifact; newest when omitted")},
            ArtifactKind::Captions};
  t.inputs = {{"stats", ArtifactKind::Stats, MaskRole::Any, true, "stats"},
              {"pair", ArtifactKind::Pair, MaskRole::Any, false, ""}};
  t.run = [](const ToolContext& ctx) {
    const Artifact* pair = ctx.input("pair");
    const std::string pair_id = pair ? pair_of(*pair).id : std::string("pair");
    return ToolOutput{generate_rule_captions(std::get<MaskStats>(ctx.input("stats")->value), pair_id), {}};
  };
  return t;
}

Tool render_overlay_tool() {
  Tool t;
  t.spec = {"render_overlay",
            "Comparison overlay of the prediction against the reference mask over one epoch.",
            {param("mask", ParamType::ArtifactRef, false, "prediction artifact; newest when omitted"),
             param("ground_truth", ParamType::ArtifactRef, false, "reference artifact; loaded one when omitted"),
             param("epoch", ParamType::String, false, "background epoch", json("b"), {"a", "b"})},
            ArtifactKind::Overlay};
  t.inputs = {{"mask", ArtifactKind::Mask, MaskRole::Predicted, true, "mask"},
              {"ground_truth", ArtifactKind::Mask, MaskRole::GroundTruth, false, "ground_truth"},
              {"pair", ArtifactKind::Pair, MaskRole::Any, true, ""}};
  t.run = [](const ToolContext& ctx) {
    std::vector<std::string> warnings;
    const ChangeMask pred = binary(mask_of(*ctx.input("mask")), warnings);
    const Artifact* gt_artifact = ctx.input("ground_truth");
    ChangeMask gt = pred;
    if (gt_artifact) {
      gt = binary(mask_of(*gt_artifact), warnings);
    } else {
      warnings.push_back("no reference mask loaded; detected change is drawn as agreement");
    }
    const ImagePair& p = pair_of(*ctx.input("pair"));
    const Raster& base = ctx.args.value("epoch", std::string("b")) == "a" ? p.epoch_a : p.epoch_b;
    return ToolOutput{render_comparison_overlay(gt, pred, base), std::move(warnings)};
  };
  return t;
}

Tool evaluate_pair_tool() {
  Tool t;
  t.spec = {"evaluate_pair",
            "IoU scores of the prediction against the reference mask.",
            {param("mask", ParamType::ArtifactRef, false, "prediction artifact; newest when omitted"),
             param("ground_truth", ParamType::ArtifactRef, false, "reference artifact; loaded one when omitted")},
            ArtifactKind::Evaluation};
  t.inputs = {{"mask", ArtifactKind::Mask, MaskRole::Predicted, true, "mask"},
              {"ground_truth", ArtifactKind::Mask, MaskRole::GroundTruth, true, "ground_truth"}};
  t.run = [](const ToolContext& ctx) {
    std::vector<std::string> warnings;
    PairEvaluation e;
    e.confusion = compare_masks(binary(mask_of(*ctx.input("ground_truth")), warnings),
                                binary(mask_of(*ctx.input("mask")), warnings));
    e.seg = iou_from_confusion(e.confusion);
    return ToolOutput{e, std::move(warnings)};
  };
  return t;
}

Tool compare_masks_tool() {
  Tool t;
  t.spec = {"compare_masks",
            "Pixel confusion counts between a reference and a candidate mask.",
            {param("reference", ParamType::ArtifactRef, false, "reference artifact; loaded one when omitted"),
             param("candidate", ParamType::ArtifactRef, false, "candidate artifact; newest prediction when omitted")},
            ArtifactKind::Confusion};
  t.inputs = {{"reference", ArtifactKind::Mask, MaskRole::GroundTruth, true, "reference"},
              {"candidate", ArtifactKind::Mask, MaskRole::Predicted, true, "candidate"}};
  t.run = [](const ToolContext& ctx) {
    std::vector<std::string> warnings;
    ConfusionCounts c = compare_masks(binary(mask_of(*ctx.input("reference")), warnings),
                                      binary(mask_of(*ctx.input("candidate")), warnings));
    return ToolOutput{c, std::move(warnings)};
  };
  return t;
}

Tool dataset_summary_tool() {
  Tool t;
  t.spec = {"dataset_summary",
            "Split sizes, change-cover distribution and caption statistics of a dataset manifest.",
            {param("manifest", ParamType::Path, true, "manifest file"),
             param("split", ParamType::String, false, "restrict to one split", json("all"),
                   {"all", "train", "val", "test"})},
            ArtifactKind::DatasetSummary};
  t.run = [](const ToolContext& ctx) {
    Dataset d = load_manifest(ctx.path_arg("manifest"));
    const std::string split = ctx.args.value("split", std::string("all"));
    if (split != "all") {
      const auto keep = d.ids(split);
      const std::set<std::string> wanted(keep.begin(), keep.end());
      std::erase_if(d.entries, [&](const DatasetEntry& e) { return !wanted.contains(e.pair_id); });
      std::erase_if(d.splits, [&](const auto& kv) { return kv.first != split; });
    }
    DatasetSummary s{d.id, corpus_statistics(d)};
    return ToolOutput{std::move(s), {}};
  };
  return t;
}

}  // namespace

void register_builtin_tools(ToolRegistry& registry) {
  registry.register_tool(load_pair_tool());
  registry.register_tool(detect_changes_tool());
  registry.register_tool(load_prediction_tool());
  registry.register_tool(compute_stats_tool());
  registry.register_tool(generate_captions_tool());
  registry.register_tool(render_overlay_tool());
  registry.register_tool(evaluate_pair_tool());
  registry.register_tool(dataset_summary_tool());
  registry.register_tool(compare_masks_tool());
}

std::shared_ptr<const ToolRegistry> make_builtin_registry() {
  auto registry = std::make_shared<ToolRegistry>();
  register_builtin_tools(*registry);
  return registry;
}

}  // namespace forestchat
