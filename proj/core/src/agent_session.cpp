#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"

namespace forestchat {

using nlohmann::json;

void FifoMutex::lock() {
  std::unique_lock lk(mutex_);
  const std::uint64_t ticket = next_ticket_++;
  cv_.wait(lk, [&] { return serving_ == ticket; });
}

void FifoMutex::unlock() {
  {
    std::lock_guard lk(mutex_);
    ++serving_;
  }
  cv_.notify_all();
}

Session::Session(std::string id, SessionConfig config) : id_(std::move(id)), config_(std::move(config)) {}

std::string Session::add_artifact(Artifact artifact) {
  std::unique_lock lk(mutex_);
  artifact.id = fmt::format("a{}", next_artifact_++);
  auto stored = std::make_shared<const Artifact>(std::move(artifact));
  artifacts_.push_back(stored);
  by_id_.emplace(stored->id, stored);
  if (stored->kind == ArtifactKind::Pair) loaded_pair_ = stored->id;
  return stored->id;
}

std::shared_ptr<const Artifact> Session::artifact(const std::string& id) const {
  std::shared_lock lk(mutex_);
  const auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<const Artifact>> Session::artifacts() const {
  std::shared_lock lk(mutex_);
  return artifacts_;
}

std::shared_ptr<const Artifact> Session::latest(ArtifactKind kind, MaskRole role) const {
  std::shared_lock lk(mutex_);
  if (kind == ArtifactKind::Pair) {
    return loaded_pair_ ? by_id_.at(*loaded_pair_) : nullptr;
  }
  for (auto it = artifacts_.rbegin(); it != artifacts_.rend(); ++it) {
    const Artifact& a = **it;
    if (kind == ArtifactKind::Mask && role == MaskRole::GroundTruth) {
      // A reference mask never outlives the pair it was loaded with.
      if (a.kind == ArtifactKind::Pair) {
        const auto& p = std::get<LoadedPair>(a.value);
        if (p.ground_truth) return *it;
        if (loaded_pair_ && a.id == *loaded_pair_) return nullptr;
        continue;
      }
      if (a.kind == ArtifactKind::Mask &&
          std::get<ChangeMask>(a.value).provenance() == MaskProvenance::GroundTruth) {
        return *it;
      }
      continue;
    }
    if (a.kind != kind) continue;
    if (kind == ArtifactKind::Mask && role != MaskRole::Any) {
      const bool gt = std::get<ChangeMask>(a.value).provenance() == MaskProvenance::GroundTruth;
      if (gt != (role == MaskRole::GroundTruth)) continue;
    }
    return *it;
  }
  return nullptr;
}

std::string Session::attach_pair(ImagePair pair, std::optional<ChangeMask> ground_truth) {
  if (ground_truth && (ground_truth->width() != pair.width() || ground_truth->height() != pair.height())) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("mask is {}x{} but the pair is {}x{}", ground_truth->width(),
                            ground_truth->height(), pair.width(), pair.height()));
  }
  if (ground_truth) ground_truth = ground_truth->with_provenance(MaskProvenance::GroundTruth);
  Artifact a;
  a.kind = ArtifactKind::Pair;
  a.produced_by = "upload";
  a.value = LoadedPair{std::move(pair), std::move(ground_truth)};
  return add_artifact(std::move(a));
}

std::optional<std::string> Session::loaded_pair_id() const {
  std::shared_lock lk(mutex_);
  return loaded_pair_;
}

std::optional<std::string> Session::cached(const std::string& key) const {
  std::shared_lock lk(mutex_);
  const auto it = cache_.find(key);
  if (it == cache_.end()) return std::nullopt;
  return it->second;
}

void Session::remember(const std::string& key, const std::string& artifact_id) {
  std::unique_lock lk(mutex_);
  cache_[key] = artifact_id;
}

void Session::append_turn(TurnResult turn) {
  std::unique_lock lk(mutex_);
  turns_.push_back(std::move(turn));
}

std::vector<TurnResult> Session::turns() const {
  std::shared_lock lk(mutex_);
  return turns_;
}

std::size_t Session::turn_count() const {
  std::shared_lock lk(mutex_);
  return turns_.size();
}

std::string Session::summary() const {
  const auto pair = latest(ArtifactKind::Pair);
  std::string out;
  if (pair) {
    const auto& p = std::get<LoadedPair>(pair->value);
    out += fmt::format("loaded pair: {} ({}), {} by {} pixels, reference mask: {}\n", p.pair.id,
                       pair->id, p.pair.width(), p.pair.height(), p.ground_truth ? "yes" : "no");
  } else {
    out += "loaded pair: none\n";
  }
  const auto all = artifacts();
  if (all.empty()) {
    out += "artifacts: none\n";
  } else {
    out += "artifacts:\n";
    for (const auto& a : all) {
      out += fmt::format("  {} {} from {}\n", a->id, to_string(a->kind), a->produced_by);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

std::shared_ptr<const Artifact> resolve_input(const InputSpec& spec, const ToolCall& call,
                                              const Session& session) {
  if (!spec.arg.empty() && call.args.contains(spec.arg)) {
    const std::string id = call.args[spec.arg].get<std::string>();
    auto a = session.artifact(id);
    if (!a) throw Error(ErrorKind::MissingArtifact, fmt::format("artifact '{}' does not exist", id));
    const bool pair_with_gt = a->kind == ArtifactKind::Pair &&
                              std::get<LoadedPair>(a->value).ground_truth.has_value();
    const bool ok = a->kind == spec.kind || (spec.kind == ArtifactKind::Mask && pair_with_gt);
    if (!ok) {
      throw Error(ErrorKind::InvalidArgument,
                  fmt::format("artifact '{}' is a {} artifact, expected {}", id, to_string(a->kind),
                              to_string(spec.kind)));
    }
    return a;
  }
  auto a = session.latest(spec.kind, spec.role);
  if (a || !spec.required) return a;
  switch (spec.kind) {
    case ArtifactKind::Pair:
      throw Error(ErrorKind::NoPairLoaded, "no pair loaded; upload two images first");
    case ArtifactKind::Mask:
      if (spec.role == MaskRole::GroundTruth) {
        throw Error(ErrorKind::MissingArtifact, "no reference mask is loaded for this pair");
      }
      throw Error(ErrorKind::MissingArtifact, "no change mask is available; run detect_changes first");
    case ArtifactKind::Stats:
      throw Error(ErrorKind::MissingArtifact, "no statistics are available; run compute_stats first");
    default:
      throw Error(ErrorKind::MissingArtifact,
                  fmt::format("no {} artifact is available", to_string(spec.kind)));
  }
}

}  // namespace

TurnResult execute_plan(Plan plan, Session& session, const ToolRegistry& registry) {
  TurnResult turn;
  try {
    registry.validate(plan, session.config().max_plan_steps);
  } catch (const Error& e) {
    turn.plan = std::move(plan);
    turn.failed = true;
    turn.plan.notes.push_back(fmt::format("plan rejected: {}", e.what()));
    return turn;
  }
  turn.plan = std::move(plan);

  for (std::size_t i = 0; i < turn.plan.steps.size(); ++i) {
    ToolCall& call = turn.plan.steps[i];
    const Tool& tool = *registry.find(call.tool);
    try {
      ToolContext ctx{call.args, {}, session, session.config().data_root};
      std::string key = call.tool + "|" + call.args.dump();
      for (const auto& spec : tool.inputs) {
        auto a = resolve_input(spec, call, session);
        if (!a) continue;
        key += fmt::format("|{}={}", spec.slot, a->id);
        call.input_refs.push_back(a->id);
        ctx.inputs.emplace(spec.slot, std::move(a));
      }
      const bool cacheable = tool.spec.result_kind != ArtifactKind::Pair;
      if (auto hit = cacheable ? session.cached(key) : std::nullopt) {
        call.result_ref = *hit;
        call.cached = true;
      } else {
        ToolOutput out = tool.run(ctx);
        Artifact artifact;
        artifact.kind = tool.spec.result_kind;
        artifact.produced_by = call.tool;
        artifact.inputs = call.input_refs;
        artifact.warnings = std::move(out.warnings);
        artifact.value = std::move(out.value);
        if (auto* m = std::get_if<ChangeMask>(&artifact.value);
            m && m->provenance() != MaskProvenance::GroundTruth) {
          *m = m->with_provenance(MaskProvenance::Predicted);
        }
        call.result_ref = session.add_artifact(std::move(artifact));
        if (cacheable) session.remember(key, *call.result_ref);
      }
      call.status = CallStatus::Ok;
    } catch (const Error& e) {
      call.status = CallStatus::Failed;
      call.error = e.what();
      call.error_code = to_string(e.kind());
    } catch (const std::exception& e) {
      call.status = CallStatus::Failed;
      call.error = e.what();
      call.error_code = "internal_error";
    }
    if (call.status == CallStatus::Failed) {
      spdlog::debug("session {}: step {} ({}) failed: {}", session.id(), i + 1, call.tool, call.error);
      turn.failed = true;
      turn.failed_step = i;
      break;
    }
  }
  return turn;
}

// ---------------------------------------------------------------------------
// Agent

Agent::Agent(std::shared_ptr<const ToolRegistry> registry, std::shared_ptr<CompletionClient> llm)
    : registry_(std::move(registry)), llm_(std::move(llm)) {}

TurnResult Agent::run_turn(Session& session, const std::string& message, const AgentOptions& options) const {
  std::lock_guard lk(session.turn_lock());
  Plan plan;
  if (options.planner == PlannerKind::Llm && llm_) {
    LlmPlannerOptions po;
    po.max_steps = session.config().max_plan_steps;
    plan = plan_with_llm(message, session, *registry_, *llm_, po);
  } else {
    plan = plan_deterministic(message, session);
    if (options.planner == PlannerKind::Llm) {
      plan.fallback = true;
      plan.notes.push_back("no completion endpoint configured");
    }
  }
  TurnResult turn = execute_plan(std::move(plan), session, *registry_);
  turn.message = message;
  compose_response(turn, session, options.compose, llm_.get());
  session.append_turn(turn);
  return turn;
}

// ---------------------------------------------------------------------------
// Records

json turn_record(const TurnResult& turn) {
  json steps = json::array();
  for (const auto& s : turn.plan.steps) {
    json item = {{"tool", s.tool},
                 {"args", s.args},
                 {"status", std::string(to_string(s.status))},
                 {"cached", s.cached},
                 {"inputs", s.input_refs}};
    item["result_ref"] = s.result_ref ? json(*s.result_ref) : json(nullptr);
    if (s.status == CallStatus::Failed) {
      item["error"] = s.error;
      item["error_code"] = s.error_code;
    }
    steps.push_back(std::move(item));
  }
  json artifacts = json::array();
  for (const auto& s : turn.plan.steps) {
    if (s.result_ref) artifacts.push_back(*s.result_ref);
  }
  return {{"message", turn.message},
          {"planner", turn.plan.planner},
          {"fallback", turn.plan.fallback},
          {"rationale", turn.plan.rationale},
          {"intents", turn.plan.intents},
          {"notes", turn.plan.notes},
          {"steps", steps},
          {"failed", turn.failed},
          {"failed_step", turn.failed_step ? json(*turn.failed_step) : json(nullptr)},
          {"answer", turn.answer},
          {"compose_mode", turn.compose_mode},
          {"grounding_fallback", turn.grounding_fallback},
          {"artifacts", artifacts}};
}

std::string format_transcript(const Session& session) {
  std::string out;
  std::size_t n = 0;
  for (const auto& turn : session.turns()) {
    out += fmt::format("--- turn {}\n", ++n);
    out += fmt::format("user: {}\n", turn.message);
    out += fmt::format("plan ({}{}):", turn.plan.planner, turn.plan.fallback ? ", fallback" : "");
    if (turn.plan.steps.empty()) out += " none";
    out += "\n";
    for (const auto& s : turn.plan.steps) {
      out += fmt::format("  {} {} -> {} [{}{}]", s.tool, s.args.dump(), s.result_ref.value_or("-"),
                         to_string(s.status), s.cached ? ", cached" : "");
      if (s.status == CallStatus::Failed) out += fmt::format(" {}: {}", s.error_code, s.error);
      out += "\n";
    }
    for (const auto& note : turn.plan.notes) out += fmt::format("  note: {}\n", note);
    out += fmt::format("assistant: {}\n", turn.answer);
  }
  return out;
}

}  // namespace forestchat
