#include <algorithm>
#include <array>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "assets.hpp"
#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"

namespace forestchat {

using nlohmann::json;

namespace {

struct IntentRule {
  std::string_view intent;
  std::vector<std::string_view> words;
};

const std::vector<IntentRule>& intent_rules() {
  static const std::vector<IntentRule> rules = {
      {"amount", {"lost", "loss", "much", "percent", "percentage", "amount", "extent", "area",
                  "deforestation", "deforested", "cleared", "clearing"}},
      {"location", {"where", "location", "located", "locate", "region", "quadrant", "part", "side"}},
      {"describe", {"caption", "captions", "describe", "description", "summarize", "summarise",
                    "summary", "explain"}},
      {"overlay", {"overlay", "show", "display", "visualize", "visualise", "view", "draw", "render"}},
      {"evaluate", {"evaluate", "evaluation", "score", "scores", "accuracy", "accurate", "iou", "miou"}},
      {"compare", {"compare", "comparison", "confusion"}},
      {"detect", {"detect", "detection", "redetect", "rerun"}},
      {"dataset", {"dataset", "manifest", "corpus"}},
      {"prediction", {"prediction", "predicted"}},
  };
  return rules;
}

bool has_suffix(std::string_view s, std::string_view suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail(s.substr(s.size() - suffix.size()));
  std::transform(tail.begin(), tail.end(), tail.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return tail == suffix;
}

std::vector<std::string> raw_words(const std::string& message) {
  std::vector<std::string> out;
  std::istringstream in(message);
  std::string w;
  const std::string_view strip = "\"'`,;:!?()[].";
  while (in >> w) {
    const auto b = w.find_first_not_of(strip);
    if (b == std::string::npos) continue;
    const auto e = w.find_last_not_of(strip);
    out.push_back(w.substr(b, e - b + 1));
  }
  return out;
}

bool is_image_path(const std::string& w) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".tif", ".tiff"}) {
    if (has_suffix(w, ext)) return true;
  }
  return false;
}

std::set<std::string> message_intents(const std::string& message) {
  std::set<std::string> intents;
  for (const auto& token : normalize_tokens(message)) {
    for (const auto& rule : intent_rules()) {
      if (std::find(rule.words.begin(), rule.words.end(), token) != rule.words.end()) {
        intents.insert(std::string(rule.intent));
      }
    }
  }
  return intents;
}

ToolCall call(std::string tool, json args = json::object()) {
  ToolCall c;
  c.tool = std::move(tool);
  c.args = std::move(args);
  return c;
}

}  // namespace

Plan plan_deterministic(const std::string& message, const Session& session) {
  Plan plan;
  std::set<std::string> intents = message_intents(message);

  std::vector<std::string> images;
  std::optional<std::string> manifest;
  for (const auto& w : raw_words(message)) {
    if (is_image_path(w)) images.push_back(w);
    else if (has_suffix(w, ".json") && !manifest) manifest = w;
  }

  if (images.size() >= 2) {
    json args = {{"path_a", images[0]}, {"path_b", images[1]}};
    if (images.size() >= 3) args["mask"] = images[2];
    plan.steps.push_back(call("load_pair", std::move(args)));
    intents.insert("load");
  } else if (images.size() == 1 && intents.contains("prediction")) {
    plan.steps.push_back(call("load_prediction", {{"path", images[0]}}));
    intents.insert("load");
  }
  const bool loads_prediction = !plan.steps.empty() && plan.steps.back().tool == "load_prediction";

  const bool needs_mask = intents.contains("amount") || intents.contains("location") ||
                          intents.contains("describe") || intents.contains("overlay") ||
                          intents.contains("evaluate") || intents.contains("compare");
  if (!loads_prediction && (intents.contains("detect") || needs_mask)) {
    // Keep an externally loaded prediction unless detection is asked for by name.
    const auto newest = session.latest(ArtifactKind::Mask, MaskRole::Predicted);
    const bool external = newest && newest->produced_by == "load_prediction";
    if (intents.contains("detect") || !external) plan.steps.push_back(call("detect_changes"));
  }
  if (intents.contains("amount") || intents.contains("location") || intents.contains("describe")) {
    plan.steps.push_back(call("compute_stats"));
  }
  if (intents.contains("describe")) plan.steps.push_back(call("generate_captions"));
  if (intents.contains("overlay")) plan.steps.push_back(call("render_overlay"));
  if (intents.contains("evaluate")) plan.steps.push_back(call("evaluate_pair"));
  if (intents.contains("compare")) plan.steps.push_back(call("compare_masks"));
  if (intents.contains("dataset") && manifest) {
    json args = {{"manifest", *manifest}};
    for (const char* split : {"train", "val", "test"}) {
      const auto tokens = normalize_tokens(message);
      if (std::find(tokens.begin(), tokens.end(), split) != tokens.end()) {
        args["split"] = split;
        break;
      }
    }
    plan.steps.push_back(call("dataset_summary", std::move(args)));
  }

  intents.erase("prediction");
  if (plan.steps.empty() && !intents.contains("dataset")) intents = {"help"};
  plan.intents = intents;
  plan.rationale = plan.steps.empty() ? "no rule matched"
                                      : fmt::format("matched {}", fmt::join(intents, ", "));
  return plan;
}

// ---------------------------------------------------------------------------
// LLM planner

std::vector<ChatMessage> build_planner_prompt(const std::string& message, const Session& session,
                                              const ToolRegistry& registry) {
  std::string system(assets::kPlannerSystemPrompt);
  system += "\nTools:\n" + registry.specs_json().dump(2) + "\n\nExamples:\n";
  system += assets::kPlannerFewShot;
  std::string user = "Session:\n" + session.summary() + "\nUser: " + message;
  return {{"system", std::move(system)}, {"user", std::move(user)}};
}

Plan parse_plan_block(std::string_view response) {
  std::size_t open = response.find("```plan");
  std::size_t tag_len = 7;
  if (open == std::string_view::npos) {
    open = response.find("```json");
    if (open == std::string_view::npos) {
      open = response.find("```");
      tag_len = 3;
    }
  } else if (response.find("```plan", open + 7) != std::string_view::npos) {
    throw Error(ErrorKind::InvalidPlan, "response contains more than one plan block");
  }
  if (open == std::string_view::npos) throw Error(ErrorKind::InvalidPlan, "response has no fenced plan block");
  const std::size_t body = open + tag_len;
  const std::size_t close = response.find("```", body);
  if (close == std::string_view::npos) throw Error(ErrorKind::InvalidPlan, "plan block is not closed");

  json doc;
  try {
    doc = json::parse(response.substr(body, close - body));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidPlan, fmt::format("plan block is not valid JSON: {}", e.what()));
  }
  Plan plan;
  plan.planner = "llm";
  if (doc.is_object()) {
    if (doc.contains("rationale") && doc["rationale"].is_string()) plan.rationale = doc["rationale"];
    if (!doc.contains("steps")) throw Error(ErrorKind::InvalidPlan, "plan object has no 'steps' list");
    doc = doc["steps"];
  }
  if (!doc.is_array()) throw Error(ErrorKind::InvalidPlan, "plan must be a list of tool calls");
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("tool") || !item["tool"].is_string()) {
      throw Error(ErrorKind::InvalidPlan, "each step needs a string 'tool' field");
    }
    ToolCall c;
    c.tool = item["tool"].get<std::string>();
    if (item.contains("args")) {
      if (!item["args"].is_object() && !item["args"].is_null()) {
        throw Error(ErrorKind::InvalidPlan, fmt::format("arguments of '{}' must be an object", c.tool));
      }
      if (item["args"].is_object()) c.args = item["args"];
    }
    plan.steps.push_back(std::move(c));
  }
  return plan;
}

Plan plan_with_llm(const std::string& message, const Session& session, const ToolRegistry& registry,
                   CompletionClient& client, const LlmPlannerOptions& options) {
  auto messages = build_planner_prompt(message, session, registry);
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string response;
    try {
      response = client.complete(messages);
    } catch (const Error& e) {
      last_error = fmt::format("{}: {}", to_string(e.kind()), e.what());
      spdlog::warn("planner endpoint failed, using rules: {}", e.what());
      break;
    }
    try {
      Plan plan = parse_plan_block(response);
      registry.validate(plan, options.max_steps);
      plan.intents = message_intents(message);
      for (const auto& s : plan.steps) {
        if (s.tool == "compute_stats") plan.intents.insert("amount");
        if (s.tool == "generate_captions") plan.intents.insert("describe");
        if (s.tool == "render_overlay") plan.intents.insert("overlay");
        if (s.tool == "evaluate_pair") plan.intents.insert("evaluate");
        if (s.tool == "compare_masks") plan.intents.insert("compare");
        if (s.tool == "dataset_summary") plan.intents.insert("dataset");
      }
      plan.intents.erase("prediction");
      if (plan.steps.empty()) plan.intents = {"help"};
      if (attempt > 0) plan.notes.push_back(fmt::format("first plan rejected: {}", last_error));
      return plan;
    } catch (const Error& e) {
      last_error = fmt::format("{}: {}", to_string(e.kind()), e.what());
      spdlog::debug("planner attempt {} rejected: {}", attempt + 1, last_error);
      messages.push_back({"assistant", response});
      messages.push_back({"user", fmt::format("That plan was rejected ({}). Reply with one corrected "
                                              "```plan block using only the listed tools.",
                                              e.what())});
    }
  }
  Plan plan = plan_deterministic(message, session);
  plan.fallback = true;
  plan.notes.push_back(fmt::format("llm planner fell back to rules: {}", last_error));
  return plan;
}

}  // namespace forestchat
