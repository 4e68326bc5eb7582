#include <doctest.h>

#include <atomic>
#include <deque>
#include <regex>
#include <thread>

#include <fmt/format.h>

#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "support.hpp"

using namespace forestchat;
using nlohmann::json;

namespace {

ToolCall step(std::string tool, nlohmann::json args = nlohmann::json::object()) {
  ToolCall c;
  c.tool = std::move(tool);
  c.args = std::move(args);
  return c;
}

/// Replays canned responses and records every prompt it was given.
class ScriptedClient : public CompletionClient {
 public:
  explicit ScriptedClient(std::deque<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::vector<ChatMessage>& messages) override {
    prompts.push_back(messages);
    if (replies_.empty()) throw Error(ErrorKind::EndpointUnreachable, "connection refused");
    auto r = replies_.front();
    replies_.pop_front();
    return r;
  }
  std::vector<std::vector<ChatMessage>> prompts;

 private:
  std::deque<std::string> replies_;
};

struct Workspace {
  fctest::TempDir dir{"agent"};
  SyntheticPair syn;

  Workspace() {
    SyntheticSpec spec;
    spec.clearings = {{20, 150, 60, 80}};
    syn = make_synthetic_forest_pair(spec);
    write_png(syn.pair.epoch_a, dir / "before.png");
    write_png(syn.pair.epoch_b, dir / "after.png");
    write_mask_png(syn.truth, dir / "truth.png");
  }

  SessionConfig config() const {
    SessionConfig c;
    c.data_root = dir.path();
    return c;
  }
};

TurnResult turn(const Agent& agent, Session& s, const std::string& msg) { return agent.run_turn(s, msg); }

}  // namespace

TEST_SUITE("agent_orchestrator") {
  TEST_CASE("builtin registry lists nine tools sorted by name") {
    const auto reg = make_builtin_registry();
    CHECK(reg->size() == 9);
    const auto specs = reg->list();
    for (std::size_t i = 1; i < specs.size(); ++i) CHECK(specs[i - 1]->name < specs[i]->name);
    ToolRegistry again;
    register_builtin_tools(again);
    try {
      register_builtin_tools(again);
      FAIL("no throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DuplicateTool);
    }
    const json specs_json = reg->specs_json();
    CHECK(specs_json.size() == 9);
  }

  TEST_CASE("plan validation rejects bad plans") {
    const auto reg = make_builtin_registry();
    auto kind = [&](Plan p, std::size_t max = kDefaultMaxPlanSteps) {
      try {
        reg->validate(p, max);
      } catch (const Error& e) {
        return e.kind();
      }
      return ErrorKind::IoError;
    };
    Plan unknown;
    unknown.steps.push_back(step("launch_rocket"));
    CHECK(kind(unknown) == ErrorKind::UnknownTool);
    Plan bad_arg;
    bad_arg.steps.push_back(step("detect_changes", {{"speed", 3}}));
    CHECK(kind(bad_arg) == ErrorKind::InvalidPlan);
    Plan bad_type;
    bad_type.steps.push_back(step("detect_changes", {{"min_area", "big"}}));
    CHECK(kind(bad_type) == ErrorKind::InvalidPlan);
    Plan bad_choice;
    bad_choice.steps.push_back(step("detect_changes", {{"direction", "sideways"}}));
    CHECK(kind(bad_choice) == ErrorKind::InvalidPlan);
    Plan missing;
    missing.steps.push_back(step("load_pair", {{"path_a", "x.png"}}));
    CHECK(kind(missing) == ErrorKind::InvalidPlan);
    Plan long_plan;
    for (int i = 0; i < 9; ++i) long_plan.steps.push_back(step("compute_stats"));
    CHECK(kind(long_plan) == ErrorKind::PlanTooLong);

    Plan ok;
    ok.steps.push_back(step("dataset_summary", {{"manifest", "m.json"}}));
    reg->validate(ok);
    CHECK(ok.steps[0].args["split"] == "all");
  }

  TEST_CASE("random plans either validate or raise a plan error") {
    const auto reg = make_builtin_registry();
    std::mt19937 rng(41);
    const std::vector<std::string> tools = {"load_pair", "detect_changes", "compute_stats", "nope",
                                            "render_overlay", "dataset_summary", "compare_masks"};
    const std::vector<json> values = {1, -3, 2.5, "x.png", true, nullptr, json::array(), "loss"};
    const std::vector<std::string> names = {"path_a", "path_b", "min_area", "direction", "mask",
                                            "manifest", "epoch", "zzz"};
    for (int i = 0; i < 300; ++i) {
      Plan p;
      const int n = std::uniform_int_distribution<int>(0, 10)(rng);
      for (int k = 0; k < n; ++k) {
        ToolCall c;
        c.tool = tools[rng() % tools.size()];
        const int nargs = static_cast<int>(rng() % 3);
        for (int a = 0; a < nargs; ++a) c.args[names[rng() % names.size()]] = values[rng() % values.size()];
        p.steps.push_back(c);
      }
      try {
        reg->validate(p);
        for (const auto& s : p.steps) CHECK(reg->find(s.tool) != nullptr);
      } catch (const Error& e) {
        const auto k = e.kind();
        CHECK((k == ErrorKind::UnknownTool || k == ErrorKind::InvalidPlan || k == ErrorKind::PlanTooLong));
      }
    }
  }

  TEST_CASE("deterministic planner maps keywords to steps") {
    Session s("s");
    auto tools_of = [](const Plan& p) {
      std::vector<std::string> out;
      for (const auto& c : p.steps) out.push_back(c.tool);
      return out;
    };
    const auto load = plan_deterministic("compare before.png and after.png please", s);
    CHECK(tools_of(load) == std::vector<std::string>{"load_pair", "detect_changes", "compare_masks"});
    CHECK(load.steps[0].args["path_b"] == "after.png");
    CHECK(tools_of(plan_deterministic("How much forest was lost?", s)) ==
          std::vector<std::string>{"detect_changes", "compute_stats"});
    CHECK(tools_of(plan_deterministic("describe it", s)) ==
          std::vector<std::string>{"detect_changes", "compute_stats", "generate_captions"});
    CHECK(tools_of(plan_deterministic("show overlay", s)) ==
          std::vector<std::string>{"detect_changes", "render_overlay"});
    CHECK(tools_of(plan_deterministic("summarise the dataset data/m.json test split", s)).back() ==
          "dataset_summary");
    const auto help = plan_deterministic("blargh", s);
    CHECK(help.steps.empty());
    CHECK(help.intents == std::set<std::string>{"help"});
    const auto a = plan_deterministic("where is the loss?", s);
    const auto b = plan_deterministic("where is the loss?", s);
    CHECK(tools_of(a) == tools_of(b));
    CHECK(a.intents == b.intents);
  }

  TEST_CASE("a loaded prediction is reused instead of re-detected") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    turn(agent, s, "load before.png after.png");
    const auto loaded = turn(agent, s, "use the prediction truth.png");
    REQUIRE_FALSE(loaded.failed);
    const auto p = plan_deterministic("how much was lost", s);
    CHECK(p.steps.front().tool == "compute_stats");
    CHECK(plan_deterministic("detect again and show how much was lost", s).steps.front().tool == "detect_changes");
  }

  TEST_CASE("full turn sequence with caching and citations") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    const auto t1 = turn(agent, s, "Please load before.png after.png");
    REQUIRE_FALSE(t1.failed);
    CHECK(s.loaded_pair_id().has_value());

    const auto t2 = turn(agent, s, "how much was lost?");
    REQUIRE_FALSE(t2.failed);
    CHECK(t2.answer.find("Forest loss covers") != std::string::npos);
    const std::string stats_ref = *t2.plan.steps.back().result_ref;
    CHECK(t2.answer.find("[" + stats_ref + "]") != std::string::npos);
    CHECK(audit_grounding(t2.answer, t2, s).empty());

    const auto t3 = turn(agent, s, "how much was lost?");
    CHECK(t3.plan.steps[0].cached);
    CHECK(t3.plan.steps[1].cached);
    CHECK(*t3.plan.steps[1].result_ref == stats_ref);
    CHECK(t2.answer.find(t3.answer) != std::string::npos);
    CHECK(t3.answer.find("flagged") == std::string::npos);

    const auto t4 = turn(agent, s, "show overlay");
    REQUIRE_FALSE(t4.failed);
    const auto overlay = s.artifact(*t4.plan.steps.back().result_ref);
    CHECK(overlay->kind == ArtifactKind::Overlay);
    CHECK(s.turn_count() == 4);
    CHECK(s.turns()[0].message == "Please load before.png after.png");
  }

  TEST_CASE("steps fail cleanly without a pair and abort the rest of the plan") {
    Session s("s");
    const Agent agent(make_builtin_registry(), nullptr);
    const auto t = turn(agent, s, "describe the change");
    CHECK(t.failed);
    REQUIRE(t.failed_step.has_value());
    CHECK(*t.failed_step == 0);
    CHECK(t.plan.steps[0].status == CallStatus::Failed);
    CHECK(t.plan.steps[0].error_code == "no_pair_loaded");
    for (std::size_t i = 1; i < t.plan.steps.size(); ++i) CHECK(t.plan.steps[i].status == CallStatus::Pending);
    CHECK(t.answer.find("detect_changes") != std::string::npos);
    CHECK(t.answer.find("not run") != std::string::npos);
  }

  TEST_CASE("evaluation needs a reference mask") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    turn(agent, s, "load before.png after.png");
    const auto no_gt = turn(agent, s, "evaluate the detection");
    CHECK(no_gt.failed);
    CHECK(no_gt.plan.steps[*no_gt.failed_step].error_code == "missing_artifact");

    turn(agent, s, "load before.png after.png truth.png");
    const auto with_gt = turn(agent, s, "evaluate the detection");
    REQUIRE_FALSE(with_gt.failed);
    const auto eval = s.artifact(*with_gt.plan.steps.back().result_ref);
    const auto& pe = std::get<PairEvaluation>(eval->value);
    CHECK(*pe.seg.iou_c >= 95.0);
    CHECK(audit_grounding(with_gt.answer, with_gt, s).empty());
  }

  TEST_CASE("paths may not leave the data root") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    const auto t = turn(agent, s, "load ../../etc/a.png ../b.png");
    CHECK(t.failed);
    CHECK(t.plan.steps[0].error.find("escapes the data root") != std::string::npos);
  }

  TEST_CASE("explicit artifact references must have the right kind") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    turn(agent, s, "load before.png after.png");
    Plan p;
    p.steps.push_back(step("compute_stats", {{"mask", "a1"}}));
    const auto r = execute_plan(p, s, agent.registry());
    CHECK(r.failed);
    CHECK(r.plan.steps[0].error_code == "invalid_argument");
    CHECK(r.plan.steps[0].error.find("expected mask") != std::string::npos);

    Plan q;
    q.steps.push_back(step("compute_stats", {{"mask", "a77"}}));
    const auto absent = execute_plan(q, s, agent.registry());
    CHECK(absent.plan.steps[0].error_code == "missing_artifact");
  }

  TEST_CASE("template composer rounds to one decimal and names the severity") {
    Session s("s");
    MaskStats st;
    st.width = st.height = 40;
    st.changed_pixels = 100;
    st.change_percent = 6.25;
    st.num_patches = 1;
    st.largest_patch_percent = 6.25;
    st.largest_patch_cell = GridCell::Center;
    st.dominant_cells = {GridCell::Center};
    Artifact a;
    a.kind = ArtifactKind::Stats;
    a.produced_by = "compute_stats";
    a.value = st;
    const std::string id = s.add_artifact(a);
    TurnResult t;
    t.plan.intents = {"amount"};
    ToolCall c = step("compute_stats");
    c.status = CallStatus::Ok;
    c.result_ref = id;
    t.plan.steps.push_back(c);
    const std::string answer = compose_template(t, s);
    CHECK(answer.find("6.2 percent") != std::string::npos);
    CHECK(answer.find("moderate") != std::string::npos);
    CHECK(audit_grounding(answer, t, s).empty());
    CHECK(audit_grounding("Forest loss covers 7.5 percent [a1].", t, s) == std::vector<std::string>{"7.5"});
    CHECK(audit_grounding("Loss is 6.25 percent.", t, s).empty());
    CHECK(audit_grounding("About 6 percent.", t, s) == std::vector<std::string>{"6"});
  }

  TEST_CASE("help answers quote no numbers") {
    Session s("s");
    const Agent agent(make_builtin_registry(), nullptr);
    const auto t = turn(agent, s, "blargh");
    CHECK(t.plan.steps.empty());
    CHECK(std::none_of(t.answer.begin(), t.answer.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }));
  }

  TEST_CASE("llm planner: valid plan is used") {
    Workspace ws;
    Session s("s", ws.config());
    ScriptedClient client({"Sure.\n```plan\n{\"steps\": [{\"tool\": \"load_pair\", \"args\": {\"path_a\": "
                           "\"before.png\", \"path_b\": \"after.png\"}}], \"rationale\": \"load\"}\n```"});
    const auto p = plan_with_llm("load them", s, *make_builtin_registry(), client);
    CHECK_FALSE(p.fallback);
    CHECK(p.planner == "llm");
    REQUIRE(p.steps.size() == 1);
    CHECK(p.steps[0].tool == "load_pair");
    REQUIRE(client.prompts.size() == 1);
    CHECK(client.prompts[0][0].role == "system");
    CHECK(client.prompts[0][0].content.find("detect_changes") != std::string::npos);
    CHECK(client.prompts[0][1].content.find("User: load them") != std::string::npos);
  }

  TEST_CASE("llm planner: unknown tool is retried once, then rules take over") {
    Session s("s");
    ScriptedClient client({"```plan\n[{\"tool\": \"fly_drone\"}]\n```", "```plan\n[{\"tool\": \"fly_drone\"}]\n```"});
    const auto p = plan_with_llm("how much was lost", s, *make_builtin_registry(), client);
    CHECK(client.prompts.size() == 2);
    CHECK(client.prompts[1].back().content.find("rejected") != std::string::npos);
    CHECK(p.fallback);
    CHECK(p.planner == "deterministic");
    CHECK(p.steps.back().tool == "compute_stats");
    REQUIRE_FALSE(p.notes.empty());
  }

  TEST_CASE("llm planner: second attempt may succeed") {
    Session s("s");
    ScriptedClient client({"no fence here", "```plan\n[{\"tool\": \"compute_stats\"}]\n```"});
    const auto p = plan_with_llm("stats", s, *make_builtin_registry(), client);
    CHECK_FALSE(p.fallback);
    CHECK(p.steps.size() == 1);
    CHECK(p.notes.size() == 1);
  }

  TEST_CASE("llm planner: unreachable endpoint falls back immediately") {
    Session s("s");
    ScriptedClient client({});
    const auto p = plan_with_llm("show overlay", s, *make_builtin_registry(), client);
    CHECK(client.prompts.size() == 1);
    CHECK(p.fallback);
    CHECK(p.steps.back().tool == "render_overlay");
  }

  TEST_CASE("plan block parsing") {
    CHECK(parse_plan_block("```json\n[]\n```").steps.empty());
    CHECK(parse_plan_block("```\n{\"steps\": [{\"tool\": \"x\", \"args\": null}]}\n```").steps.size() == 1);
    for (const char* bad : {"nothing", "```plan\n[1]\n```", "```plan\n{oops}\n```", "```plan\n[]",
                            "```plan\n{}\n```", "```plan\n[]\n``` ```plan\n[]\n```"}) {
      CAPTURE(bad);
      CHECK_THROWS_AS(parse_plan_block(bad), Error);
    }
  }

  TEST_CASE("llm composer falls back when the answer quotes unknown numbers") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    turn(agent, s, "load before.png after.png");
    auto t = turn(agent, s, "how much was lost");
    const std::string template_answer = t.answer;
    ScriptedClient liar({"Roughly 99.9 percent of the forest is gone."});
    compose_response(t, s, ComposeMode::Llm, &liar);
    CHECK(t.grounding_fallback);
    CHECK(t.answer == template_answer);

    const auto stats = s.artifact(*t.plan.steps.back().result_ref);
    const double pct = std::get<MaskStats>(stats->value).change_percent;
    ScriptedClient honest({fmt::format("About {:.1f} percent was cleared [{}].", pct, stats->id)});
    compose_response(t, s, ComposeMode::Llm, &honest);
    CHECK_FALSE(t.grounding_fallback);
    CHECK(t.compose_mode == "llm");

    ScriptedClient down({});
    compose_response(t, s, ComposeMode::Llm, &down);
    CHECK(t.grounding_fallback);
  }

  TEST_CASE("fifo mutex serves waiters in arrival order") {
    FifoMutex m;
    std::vector<int> order;
    m.lock();
    std::vector<std::thread> threads;
    std::atomic<int> started{0};
    for (int i = 0; i < 4; ++i) {
      threads.emplace_back([&, i] {
        while (started.load() != i) std::this_thread::yield();
        started.fetch_add(1);
        m.lock();
        order.push_back(i);
        m.unlock();
      });
      while (started.load() != i + 1) std::this_thread::yield();
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    m.unlock();
    for (auto& t : threads) t.join();
    CHECK(order == std::vector<int>{0, 1, 2, 3});
  }

  TEST_CASE("concurrent turns on one session append every turn") {
    Workspace ws;
    Session s("s", ws.config());
    const Agent agent(make_builtin_registry(), nullptr);
    turn(agent, s, "load before.png after.png");
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) threads.emplace_back([&] { turn(agent, s, "how much was lost"); });
    for (auto& t : threads) t.join();
    CHECK(s.turn_count() == 5);
    const auto arts = s.artifacts();
    std::set<std::string> ids;
    for (const auto& a : arts) ids.insert(a->id);
    CHECK(ids.size() == arts.size());
  }

  TEST_CASE("transcripts are reproducible") {
    auto run = [] {
      Workspace ws;
      Session s("s", ws.config());
      const Agent agent(make_builtin_registry(), nullptr);
      for (const char* m : {"load before.png after.png", "how much was lost", "where", "describe it", "show overlay"}) {
        turn(agent, s, m);
      }
      return format_transcript(s);
    };
    const auto a = run();
    CHECK(a == run());
    CHECK(a.find("--- turn 5") != std::string::npos);
    const auto rec = turn_record(TurnResult{});
    CHECK(rec["steps"].is_array());
    CHECK(rec.contains("answer"));
  }
}
