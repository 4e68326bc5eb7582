#include <cctype>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "assets.hpp"
#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"

namespace forestchat {

using nlohmann::json;

namespace {

constexpr std::string_view kHelpText =
    "I could not map that request to an analysis step. Ask how much forest was lost, where the "
    "loss is, to describe the change, to show the overlay, or to evaluate the detection against "
    "a reference mask.";

constexpr std::string_view kDatasetHelpText =
    "To summarise a dataset, name its manifest file in the request, for example "
    "forest_change/manifest.json.";

std::string cite(const ToolCall& c) { return fmt::format("[{}]", *c.result_ref); }

std::string pct1(double v) { return fmt::format("{:.1f}", v); }
std::string pct2(double v) { return fmt::format("{:.2f}", v); }

std::string cells_phrase(const MaskStats& s) {
  if (s.dominant_cells.empty()) return "image as a whole";
  std::string out;
  for (std::size_t i = 0; i < s.dominant_cells.size(); ++i) {
    if (i > 0) out += i + 1 == s.dominant_cells.size() ? " and " : ", ";
    out += to_string(s.dominant_cells[i]);
  }
  return out + " part";
}

void stats_sentences(const ToolCall& c, const MaskStats& s, const std::set<std::string>& intents,
                     std::vector<std::string>& out) {
  if (s.changed_pixels == 0) {
    out.push_back(fmt::format("No forest loss was found in the change mask {}.", cite(c)));
    return;
  }
  const std::string severity(to_string(severity_bucket(s.change_percent).name));
  const std::string extent =
      fmt::format("Forest loss covers {} percent of the image, a {} change {}.", pct1(s.change_percent),
                  severity, cite(c));
  const std::string patches =
      s.num_patches == 1
          ? fmt::format("It forms a single patch {}.", cite(c))
          : fmt::format("It is split into {} patches and the largest covers {} percent of the image {}.",
                        s.num_patches, pct1(s.largest_patch_percent), cite(c));
  std::string location = fmt::format("Most of the loss lies in the {} of the image", cells_phrase(s));
  if (s.largest_patch_cell && s.num_patches > 1) {
    location += fmt::format(" and the largest patch sits in the {}", to_string(*s.largest_patch_cell));
  }
  location += " " + cite(c) + ".";

  if (intents.contains("location") && !intents.contains("amount")) {
    out.push_back(location);
    out.push_back(extent);
    return;
  }
  out.push_back(extent);
  out.push_back(patches);
  if (intents.contains("location") || intents.contains("describe")) out.push_back(location);
}

void step_sentences(const ToolCall& c, const Artifact& a, const TurnResult& turn,
                    std::vector<std::string>& out) {
  const auto& intents = turn.plan.intents;
  const bool last = &c == &turn.plan.steps.back();
  if (c.tool == "load_pair") {
    const auto& p = std::get<LoadedPair>(a.value);
    out.push_back(fmt::format("Loaded pair {}, {} by {} pixels{} {}.", p.pair.id, p.pair.width(),
                              p.pair.height(), p.ground_truth ? ", with a reference mask" : "", cite(c)));
  } else if (c.tool == "detect_changes" || c.tool == "load_prediction") {
    const auto& m = std::get<ChangeMask>(a.value);
    if (c.tool == "load_prediction") {
      out.push_back(fmt::format("Loaded the prediction mask {}.", cite(c)));
    } else if (m.count_nonzero() == 0) {
      out.push_back(fmt::format("No vegetation change was detected between the two epochs {}.", cite(c)));
    } else if (!c.cached || last) {
      out.push_back(fmt::format("The change detector flagged {} pixels {}.", m.count_nonzero(), cite(c)));
    }
    if (!c.cached) {
      for (const auto& w : a.warnings) out.push_back(fmt::format("Note: {} {}.", w, cite(c)));
    }
  } else if (c.tool == "compute_stats") {
    stats_sentences(c, std::get<MaskStats>(a.value), intents, out);
  } else if (c.tool == "generate_captions") {
    std::string text = fmt::format("Captions {}:", cite(c));
    for (const auto& cap : std::get<CaptionSet>(a.value).captions) text += "\n- " + join_tokens(cap.tokens);
    out.push_back(text);
  } else if (c.tool == "render_overlay") {
    if (a.warnings.empty()) {
      out.push_back(fmt::format("The overlay {} marks agreement with the reference in yellow, false "
                                "positives in red and false negatives in green.",
                                cite(c)));
    } else {
      out.push_back(fmt::format("The overlay {} draws the detected change in yellow over the dimmed "
                                "epoch because no reference mask is loaded.",
                                cite(c)));
    }
  } else if (c.tool == "evaluate_pair") {
    const auto& e = std::get<PairEvaluation>(a.value);
    const auto iou = [](const std::optional<double>& v) {
      return v ? fmt::format("{} percent", pct2(*v)) : std::string("undefined");
    };
    out.push_back(fmt::format("Against the reference mask the change IoU is {}, the no-change IoU is {} "
                              "and the mIoU is {} percent {}.",
                              iou(e.seg.iou_c), iou(e.seg.iou_nc), pct2(e.seg.miou), cite(c)));
  } else if (c.tool == "compare_masks") {
    const auto& k = std::get<ConfusionCounts>(a.value);
    out.push_back(fmt::format("The masks agree on {} changed and {} unchanged pixels, with {} false "
                              "positives and {} false negatives {}.",
                              k.tp, k.tn, k.fp, k.fn, cite(c)));
  } else if (c.tool == "dataset_summary") {
    const auto& d = std::get<DatasetSummary>(a.value);
    std::string splits;
    for (const auto& [name, n] : d.stats.split_counts) {
      splits += fmt::format("{}{} {}", splits.empty() ? "" : ", ", n, name);
    }
    out.push_back(fmt::format("Dataset {} holds {} pairs{} {}.", d.dataset_id, d.stats.n_entries,
                              splits.empty() ? "" : " (" + splits + ")", cite(c)));
    out.push_back(fmt::format("Change cover averages {} percent with a maximum of {} percent {}.",
                              pct2(d.stats.coverage_mean), pct2(d.stats.coverage_max), cite(c)));
    out.push_back(fmt::format("There are {} captions with a vocabulary of {} words {}.",
                              d.stats.n_captions, d.stats.vocabulary_size, cite(c)));
  }
}

struct NumberToken {
  std::string text;
  int decimals = 0;
};

std::vector<NumberToken> numbers_in(std::string_view s) {
  std::vector<NumberToken> out;
  std::size_t i = 0;
  const auto ident = [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.' || ch == '/';
  };
  while (i < s.size()) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    const bool attached = i > 0 && (ident(s[i - 1]) ||
                                    (s[i - 1] == '-' && i > 1 && ident(s[i - 2])));
    std::size_t j = i;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    int decimals = 0;
    if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
      std::size_t k = j + 1;
      while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
      decimals = static_cast<int>(k - j - 1);
      j = k;
    }
    const bool trailing = j < s.size() && (std::isalpha(static_cast<unsigned char>(s[j])) || s[j] == '_');
    if (!attached && !trailing) out.push_back({std::string(s.substr(i, j - i)), decimals});
    i = j;
    while (i < s.size() && ident(s[i])) ++i;
  }
  return out;
}

bool grounded(const NumberToken& token, const std::vector<double>& evidence) {
  const double claimed = std::stod(token.text);
  for (double v : evidence) {
    if (token.decimals == 0) {
      if (std::abs(v - claimed) < 1e-9) return true;
    } else if (fmt::format("{:.{}f}", v, token.decimals) == token.text) {
      return true;
    }
  }
  return false;
}

std::vector<std::shared_ptr<const Artifact>> cited_artifacts(const TurnResult& turn, const Session& session) {
  std::vector<std::shared_ptr<const Artifact>> out;
  for (const auto& s : turn.plan.steps) {
    if (s.result_ref) {
      if (auto a = session.artifact(*s.result_ref)) out.push_back(std::move(a));
    }
    for (const auto& id : s.input_refs) {
      if (auto a = session.artifact(id)) out.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace

std::string compose_template(const TurnResult& turn, const Session& session) {
  const Plan& plan = turn.plan;
  if (turn.failed && !turn.failed_step) {
    std::string text = "I could not run that request because the plan was rejected.";
    for (const auto& note : plan.notes) {
      if (note.starts_with("plan rejected: ")) text += " " + note.substr(15) + ".";
    }
    return text;
  }
  if (plan.steps.empty()) {
    return std::string(plan.intents.contains("dataset") ? kDatasetHelpText : kHelpText);
  }

  std::vector<std::string> sentences;
  for (const auto& c : plan.steps) {
    if (c.status == CallStatus::Failed) {
      sentences.push_back(fmt::format("The {} step failed: {}.", c.tool, c.error));
      if (&c != &plan.steps.back()) sentences.push_back("The steps after it were not run.");
      break;
    }
    if (c.status != CallStatus::Ok || !c.result_ref) continue;
    const auto artifact = session.artifact(*c.result_ref);
    if (artifact) step_sentences(c, *artifact, turn, sentences);
  }
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

std::vector<std::string> audit_grounding(std::string_view answer, const TurnResult& turn,
                                         const Session& session) {
  std::vector<double> evidence;
  for (const auto& a : cited_artifacts(turn, session)) {
    const auto nums = artifact_numbers(*a);
    evidence.insert(evidence.end(), nums.begin(), nums.end());
  }
  std::vector<std::string> error_text;
  for (const auto& s : turn.plan.steps) {
    if (!s.error.empty()) error_text.push_back(s.error);
  }
  for (const auto& note : turn.plan.notes) error_text.push_back(note);
  for (const auto& text : error_text) {
    for (const auto& t : numbers_in(text)) evidence.push_back(std::stod(t.text));
  }

  std::vector<std::string> ungrounded;
  for (const auto& token : numbers_in(answer)) {
    if (!grounded(token, evidence)) ungrounded.push_back(token.text);
  }
  return ungrounded;
}

void compose_response(TurnResult& turn, const Session& session, ComposeMode mode, CompletionClient* client) {
  turn.answer = compose_template(turn, session);
  turn.compose_mode = "template";
  turn.grounding_fallback = false;
  if (mode != ComposeMode::Llm) return;
  if (!client) {
    turn.grounding_fallback = true;
    turn.plan.notes.push_back("no completion endpoint configured; template answer used");
    return;
  }

  json context = {{"turn", turn_record(turn)}, {"artifacts", json::array()}};
  context["turn"].erase("answer");
  for (const auto& a : cited_artifacts(turn, session)) context["artifacts"].push_back(artifact_record(*a));
  const std::vector<ChatMessage> messages = {
      {"system", std::string(assets::kComposerSystemPrompt)},
      {"user", fmt::format("Message: {}\n\nGrounding context:\n{}", turn.message, context.dump(2))}};
  try {
    std::string answer = client->complete(messages);
    const auto bad = audit_grounding(answer, turn, session);
    if (!bad.empty()) {
      throw Error(ErrorKind::GroundingViolation,
                  fmt::format("answer quotes ungrounded numbers: {}", fmt::join(bad, ", ")));
    }
    turn.answer = std::move(answer);
    turn.compose_mode = "llm";
  } catch (const Error& e) {
    spdlog::warn("composer fell back to template: {}", e.what());
    turn.grounding_fallback = true;
    turn.plan.notes.push_back(fmt::format("{}: {}", to_string(e.kind()), e.what()));
  }
}

}  // namespace forestchat
