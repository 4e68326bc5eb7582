#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "forestchat/caption_engine.hpp"
#include "forestchat/dataset.hpp"
#include "forestchat/eval_metrics.hpp"
#include "forestchat/llm_client.hpp"
#include "forestchat/mask_analytics.hpp"
#include "forestchat/perception.hpp"
#include "forestchat/raster.hpp"

namespace forestchat {

// ---------------------------------------------------------------------------
// Artifacts

enum class ArtifactKind { Pair, Mask, Stats, Captions, Overlay, Evaluation, DatasetSummary, Confusion };

std::string_view to_string(ArtifactKind kind);

struct LoadedPair {
  ImagePair pair;
  std::optional<ChangeMask> ground_truth;
};

struct PairEvaluation {
  ConfusionCounts confusion;
  SegScores seg;
};

struct DatasetSummary {
  std::string dataset_id;
  DatasetStats stats;
};

using ArtifactValue = std::variant<LoadedPair, ChangeMask, MaskStats, CaptionSet, Raster,
                                   PairEvaluation, DatasetSummary, ConfusionCounts>;

struct Artifact {
  std::string id;
  ArtifactKind kind = ArtifactKind::Pair;
  std::string produced_by;
  std::vector<std::string> inputs;
  std::vector<std::string> warnings;
  ArtifactValue value;
};

/// Structured description of an artifact (no pixel payloads).
nlohmann::json artifact_record(const Artifact& artifact);

/// Every number an answer may quote from this artifact.
std::vector<double> artifact_numbers(const Artifact& artifact);

// ---------------------------------------------------------------------------
// Plans and tool calls

enum class CallStatus { Pending, Ok, Failed };
std::string_view to_string(CallStatus status);

struct ToolCall {
  std::string tool;
  nlohmann::json args = nlohmann::json::object();
  CallStatus status = CallStatus::Pending;
  std::optional<std::string> result_ref;
  std::string error;
  std::string error_code;
  bool cached = false;
  std::vector<std::string> input_refs;
};

struct Plan {
  std::vector<ToolCall> steps;
  std::string rationale;
  /// Answer emphasis: amount, location, describe, overlay, evaluate, compare, dataset, help.
  std::set<std::string> intents;
  std::string planner = "deterministic";
  bool fallback = false;
  std::vector<std::string> notes;
};

inline constexpr std::size_t kDefaultMaxPlanSteps = 8;

// ---------------------------------------------------------------------------
// Tool registry

enum class ParamType { String, Path, Integer, Real, Boolean, ArtifactRef };
std::string_view to_string(ParamType type);

struct ParamSpec {
  std::string name;
  ParamType type = ParamType::String;
  bool required = false;
  std::optional<nlohmann::json> default_value;
  std::string description;
  std::vector<std::string> choices;
};

struct ToolSpec {
  std::string name;
  std::string description;
  std::vector<ParamSpec> params;
  ArtifactKind result_kind = ArtifactKind::Stats;
};

/// Which artifact a tool consumes. When the named argument is given it must
/// reference an artifact of the right kind; otherwise the newest matching
/// artifact in the session is used.
enum class MaskRole { Any, Predicted, GroundTruth };

struct InputSpec {
  std::string slot;
  ArtifactKind kind = ArtifactKind::Mask;
  MaskRole role = MaskRole::Any;
  bool required = true;
  std::string arg;  // optional argument naming an explicit artifact id
};

class Session;

struct ToolContext {
  const nlohmann::json& args;
  std::map<std::string, std::shared_ptr<const Artifact>> inputs;
  const Session& session;
  std::optional<std::filesystem::path> data_root;

  const Artifact* input(const std::string& slot) const;
  /// Resolves a path argument, rejecting escapes from the data root.
  std::filesystem::path path_arg(const std::string& name) const;
};

struct ToolOutput {
  ArtifactValue value;
  std::vector<std::string> warnings;
};

struct Tool {
  ToolSpec spec;
  std::vector<InputSpec> inputs;
  std::function<ToolOutput(const ToolContext&)> run;
};

class ToolRegistry {
 public:
  /// Throws Error{DuplicateTool}.
  void register_tool(Tool tool);
  const Tool* find(std::string_view name) const;
  /// Specs sorted by name.
  std::vector<const ToolSpec*> list() const;
  std::size_t size() const noexcept { return tools_.size(); }

  /// Checks tool names, argument names, types, choices and required
  /// arguments, and fills defaults in place. Throws Error{UnknownTool},
  /// Error{InvalidPlan} or Error{PlanTooLong}.
  void validate(Plan& plan, std::size_t max_steps = kDefaultMaxPlanSteps) const;
  void validate_call(ToolCall& call) const;

  nlohmann::json specs_json() const;

 private:
  std::map<std::string, Tool, std::less<>> tools_;
};

/// load_pair, detect_changes, load_prediction, compute_stats,
/// generate_captions, render_overlay, evaluate_pair, dataset_summary,
/// compare_masks. Throws Error{DuplicateTool} if any is already present.
void register_builtin_tools(ToolRegistry& registry);

// ---------------------------------------------------------------------------
// Sessions

/// Lock handing out access in arrival order.
class FifoMutex {
 public:
  void lock();
  void unlock();

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
};

struct TurnResult {
  std::string message;
  Plan plan;
  bool failed = false;
  std::optional<std::size_t> failed_step;
  std::string answer;
  std::string compose_mode = "template";
  bool grounding_fallback = false;
};

struct SessionConfig {
  DetectionParams detection;
  std::size_t max_plan_steps = kDefaultMaxPlanSteps;
  std::optional<std::filesystem::path> data_root;
};

/// Conversation state and artifact store. Artifacts are immutable once
/// stored and may be read concurrently; turns are appended under the
/// session's turn lock.
class Session {
 public:
  Session(std::string id, SessionConfig config = {});

  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return config_; }

  /// Assigns a fresh id ("a1", "a2", ...) and stores the artifact.
  std::string add_artifact(Artifact artifact);
  std::shared_ptr<const Artifact> artifact(const std::string& id) const;
  std::vector<std::shared_ptr<const Artifact>> artifacts() const;
  std::shared_ptr<const Artifact> latest(ArtifactKind kind, MaskRole role = MaskRole::Any) const;

  /// Stores a pair (and optional ground-truth mask) as the loaded pair.
  std::string attach_pair(ImagePair pair, std::optional<ChangeMask> ground_truth = std::nullopt);
  std::optional<std::string> loaded_pair_id() const;

  std::optional<std::string> cached(const std::string& key) const;
  void remember(const std::string& key, const std::string& artifact_id);

  void append_turn(TurnResult turn);
  std::vector<TurnResult> turns() const;
  std::size_t turn_count() const;

  /// Short text for planner prompts: loaded pair, artifact inventory.
  std::string summary() const;

  FifoMutex& turn_lock() const noexcept { return turn_lock_; }

 private:
  std::string id_;
  SessionConfig config_;
  mutable std::shared_mutex mutex_;
  mutable FifoMutex turn_lock_;
  std::vector<std::shared_ptr<const Artifact>> artifacts_;
  std::map<std::string, std::shared_ptr<const Artifact>> by_id_;
  std::map<std::string, std::string> cache_;
  std::optional<std::string> loaded_pair_;
  std::vector<TurnResult> turns_;
  std::uint64_t next_artifact_ = 1;
};

// ---------------------------------------------------------------------------
// Planning, execution, composition

/// Keyword rules over the message tokens. Unknown intent gives an empty
/// plan with the "help" intent.
Plan plan_deterministic(const std::string& message, const Session& session);

struct LlmPlannerOptions {
  std::size_t max_steps = kDefaultMaxPlanSteps;
};

/// Builds the prompt from the shipped preamble, tool specs, few-shot
/// exemplars, session summary and message; expects one ```plan fenced
/// block. One retry with the validation error, then the deterministic plan
/// with fallback = true.
Plan plan_with_llm(const std::string& message, const Session& session,
                   const ToolRegistry& registry, CompletionClient& client,
                   const LlmPlannerOptions& options = {});

/// Assembled prompt, exposed for inspection and tests.
std::vector<ChatMessage> build_planner_prompt(const std::string& message, const Session& session,
                                              const ToolRegistry& registry);

/// Extracts and parses the fenced plan block. Throws Error{InvalidPlan}.
Plan parse_plan_block(std::string_view response);

/// Runs validated steps in order, caching on (tool, args, input ids). The
/// first failure stops the plan; earlier artifacts stay.
TurnResult execute_plan(Plan plan, Session& session, const ToolRegistry& registry);

enum class ComposeMode { Template, Llm };

/// Deterministic answer quoting computed numbers with [artifact] citations.
std::string compose_template(const TurnResult& turn, const Session& session);

/// Numbers in the answer that no cited artifact (or failed-step error)
/// accounts for.
std::vector<std::string> audit_grounding(std::string_view answer, const TurnResult& turn,
                                         const Session& session);

/// LLM mode falls back to the template answer (grounding_fallback = true)
/// when the client fails or the answer quotes an ungrounded number.
void compose_response(TurnResult& turn, const Session& session, ComposeMode mode,
                      CompletionClient* client);

enum class PlannerKind { Deterministic, Llm };

struct AgentOptions {
  PlannerKind planner = PlannerKind::Deterministic;
  ComposeMode compose = ComposeMode::Template;
};

/// Ties planning, execution and composition together for one turn. Turns
/// on the same session are serialised in arrival order.
class Agent {
 public:
  Agent(std::shared_ptr<const ToolRegistry> registry, std::shared_ptr<CompletionClient> llm);

  TurnResult run_turn(Session& session, const std::string& message,
                      const AgentOptions& options = {}) const;

  const ToolRegistry& registry() const noexcept { return *registry_; }
  bool has_llm() const noexcept { return llm_ != nullptr; }

 private:
  std::shared_ptr<const ToolRegistry> registry_;
  std::shared_ptr<CompletionClient> llm_;
};

std::shared_ptr<const ToolRegistry> make_builtin_registry();

nlohmann::json turn_record(const TurnResult& turn);
/// Plain-text transcript of all turns.
std::string format_transcript(const Session& session);

}  // namespace forestchat
