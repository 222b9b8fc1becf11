#include <doctest.h>

#include <random>

#include "ctfagent/agent.hpp"
#include "ctfagent/errors.hpp"
#include "ctfagent/eval.hpp"
#include "support/fixtures.hpp"

using namespace ctfagent;
using nlohmann::json;
namespace fs = std::filesystem;
using testsupport::SolveRig;

namespace {

Challenge puffin() { return load_dataset(testsupport::puffin_manifest()).at(0); }

// A service-less challenge whose flag sits in a text file.
Challenge toy_challenge(const fs::path& dir, const std::string& flag = "picoCTF{t0y_fl4g}") {
  write_file(dir / "notes.txt", "nothing to see\nreally\n");
  write_file(dir / "flag.txt", flag + "\n");
  return challenge_from_json(json{{"id", "toy"},
                                  {"category", "Misc"},
                                  {"description", "Read the flag."},
                                  {"files", {"notes.txt", "flag.txt"}},
                                  {"points", 50},
                                  {"flag", flag},
                                  {"flag_format", R"(picoCTF\{[^}]*\})"}},
                             dir);
}

ChatMessage tool_reply(std::string name, json args, std::string content = "") {
  return {Role::Assistant, std::move(content), ToolCall{std::move(name), args.dump(), ""}};
}

ChatMessage text_reply(std::string content) {
  return {Role::Assistant, std::move(content), std::nullopt};
}

BackendFactory replies_factory(std::vector<ChatMessage> replies) {
  return [replies](const Challenge&) -> std::unique_ptr<ChatBackend> {
    return std::make_unique<ScriptedBackend>(replies);
  };
}

}  // namespace

TEST_SUITE("agent") {
  TEST_CASE("puffin fixture is solved at round 6 with both hint stages") {
    SolveRig rig("agent-puffin");
    const auto run = run_challenge(puffin(), rig.setup,
                                   testsupport::script_factory(testsupport::fixtures_dir() /
                                                               "puffin" / "solve.jsonl"));
    const auto& t = run.transcript;
    REQUIRE(t.outcome.kind == OutcomeKind::Solved);
    CHECK(*t.outcome.solved_at_round == 6);
    CHECK(*t.outcome.flag == "picoCTF{b1g_p3ngu1n_0verfl0w_3a7c}");
    REQUIRE(t.rounds.size() == 6);

    REQUIRE(t.rounds[0].injected_hints.size() == 1);
    const auto& understanding = t.rounds[0].injected_hints[0];
    CHECK(understanding.trigger == Trigger::CodeRead);
    CHECK(understanding.trunk_ids.front() == "t-bof-stack");

    REQUIRE(t.rounds[2].injected_hints.size() == 1);
    const auto& exploiting = t.rounds[2].injected_hints[0];
    CHECK(exploiting.trigger == Trigger::ExploitIdea);
    CHECK(exploiting.trunk_ids == std::vector<std::string>{"t-bof-payload"});
    CHECK(exploiting.rendered_hint.find("'A'*48") != std::string::npos);

    CHECK(t.rounds[4].tool_invocations.at(0).observation.find("picoCTF{b1g_p3ngu1n") !=
          std::string::npos);
    CHECK(t.rounds[1].feedback.find("No tool was called") != std::string::npos);
  }

  TEST_CASE("puffin digest is stable across reruns") {
    std::set<std::string> digests;
    for (int i = 0; i < 3; ++i) {
      SolveRig rig("agent-digest");
      const auto run = run_challenge(puffin(), rig.setup,
                                     testsupport::script_factory(testsupport::fixtures_dir() /
                                                                 "puffin" / "solve.jsonl"));
      CHECK(run.transcript.determinism_digest == compute_digest(run.transcript));
      digests.insert(run.transcript.determinism_digest);
    }
    CHECK(digests.size() == 1);
  }

  TEST_CASE("never submitting ends at the round budget") {
    SolveRig rig("agent-max");
    const auto run = run_challenge(
        puffin(), rig.setup,
        testsupport::script_factory(testsupport::fixtures_dir() / "puffin" / "never_submit.jsonl"));
    CHECK(run.transcript.outcome.kind == OutcomeKind::Failed);
    CHECK(run.transcript.outcome.failure_reason == FailureReason::MaxRounds);
    CHECK(run.transcript.rounds.size() == 30);
    CHECK(run.transcript.rounds.back().index == 30);
  }

  TEST_CASE("a tiny context cap yields ContextExceeded") {
    SolveRig rig("agent-ctx");
    rig.setup.backend_config.max_context_tokens = 50;
    const auto run = run_challenge(
        puffin(), rig.setup,
        testsupport::script_factory(testsupport::fixtures_dir() / "puffin" / "solve.jsonl"));
    CHECK(run.transcript.outcome.failure_reason == FailureReason::ContextExceeded);
    CHECK(run.transcript.rounds.empty());
  }

  TEST_CASE("context cap hit mid-solve keeps the completed rounds") {
    SolveRig rig("agent-ctx-mid");
    // enough for the opening prompt, not for the decompiled listing plus hints
    rig.setup.backend_config.max_context_tokens = 700;
    const auto run = run_challenge(
        puffin(), rig.setup,
        testsupport::script_factory(testsupport::fixtures_dir() / "puffin" / "solve.jsonl"));
    CHECK(run.transcript.outcome.failure_reason == FailureReason::ContextExceeded);
    CHECK(!run.transcript.rounds.empty());
    CHECK(run.transcript.rounds.size() < 6);
  }

  TEST_CASE("surrender and flagless final answers are GiveUp") {
    SolveRig rig("agent-giveup");
    const auto dir = testsupport::fixtures_dir() / "puffin";
    const auto a = run_challenge(puffin(), rig.setup,
                                 testsupport::script_factory(dir / "surrender.jsonl"));
    CHECK(a.transcript.outcome.failure_reason == FailureReason::GiveUp);
    CHECK(a.transcript.rounds.size() == 2);
    const auto b = run_challenge(puffin(), rig.setup,
                                 testsupport::script_factory(dir / "wrong_final.jsonl"));
    CHECK(b.transcript.outcome.failure_reason == FailureReason::GiveUp);
    CHECK(b.transcript.rounds.size() == 1);
  }

  TEST_CASE("a backend that runs dry is BackendError") {
    SolveRig rig("agent-dry");
    const auto c = toy_challenge(testsupport::fresh_dir("agent-dry-src"));
    const auto run =
        run_challenge(c, rig.setup, replies_factory({tool_reply("terminal", {{"command", "ls"}})}));
    CHECK(run.transcript.outcome.failure_reason == FailureReason::BackendError);
    CHECK(run.transcript.rounds.size() == 1);
  }

  TEST_CASE("wrong submissions continue; the right one solves") {
    SolveRig rig("agent-submit");
    const auto c = toy_challenge(testsupport::fresh_dir("agent-submit-src"));
    const auto run = run_challenge(
        c, rig.setup,
        replies_factory({tool_reply("submit_flag", {{"flag", "picoCTF{nope}"}}),
                         tool_reply("submit_flag", {{"flag", "not a flag"}}),
                         tool_reply("read_file", {{"path", "flag.txt"}}),
                         tool_reply("submit_flag", {{"flag", "picoCTF{t0y_fl4g}"}})}));
    const auto& t = run.transcript;
    REQUIRE(t.outcome.kind == OutcomeKind::Solved);
    CHECK(*t.outcome.solved_at_round == 4);
    CHECK(t.rounds[0].tool_invocations[0].observation == "Incorrect flag.");
    CHECK(t.rounds[1].tool_invocations[0].observation.find("does not match") != std::string::npos);
  }

  TEST_CASE("final_answer carrying the right flag solves") {
    SolveRig rig("agent-final");
    const auto c = toy_challenge(testsupport::fresh_dir("agent-final-src"));
    const auto run = run_challenge(
        c, rig.setup,
        replies_factory({tool_reply("final_answer", {{"answer", "flag: picoCTF{t0y_fl4g}"}})}));
    CHECK(run.transcript.outcome.kind == OutcomeKind::Solved);
  }

  TEST_CASE("ReAct protocol: tool call, malformed reply, final answer") {
    SolveRig rig("agent-react");
    rig.setup.backend_config.supports_tool_calls = false;
    const auto c = toy_challenge(testsupport::fresh_dir("agent-react-src"));
    std::vector<ChatMessage> replies = {
        text_reply("Thought: look around\nAction:\n```json\n{\"action\": \"terminal\", "
                   "\"action_input\": \"cat flag.txt\"}\n```"),
        text_reply("Thought: I forgot the blob"),
        text_reply("Thought: done\nAction:\n''' json\n{\"action\": \"Final Answer\", "
                   "\"action_input\": \"picoCTF{t0y_fl4g}\"}\n'''")};
    std::shared_ptr<ScriptedBackend> seen;
    const auto run = run_challenge(c, rig.setup, [&](const Challenge&) {
      auto b = std::make_unique<ScriptedBackend>(replies);
      return std::unique_ptr<ChatBackend>(std::move(b));
    });
    const auto& t = run.transcript;
    REQUIRE(t.outcome.kind == OutcomeKind::Solved);
    CHECK(*t.outcome.solved_at_round == 3);
    CHECK(t.rounds[0].tool_invocations.at(0).observation.find("picoCTF{t0y_fl4g}") !=
          std::string::npos);
    CHECK(t.rounds[1].feedback.find("Format error: no JSON blob") == 0);
  }

  TEST_CASE("ReAct system prompt carries the tool list") {
    const auto store = testsupport::fixture_store();
    const Agent agent(store, HashingEmbedder(), AgentPrompts::load(testsupport::assets_dir()));
    const auto c = toy_challenge(testsupport::fresh_dir("agent-react-prompt"));
    Environment env(Sandbox(testsupport::fresh_dir("agent-react-prompt-sb")), {},
                    std::make_shared<SidecarDecompiler>());
    ScriptedBackend backend({text_reply("I give up")});
    BackendConfig bc;
    bc.supports_tool_calls = false;
    agent.solve(c, env, backend, bc, SolveConfig{});
    const auto& system = backend.seen().at(0).at(0);
    CHECK(system.role == Role::System);
    CHECK(system.content.find("{tools_info}") == std::string::npos);
    CHECK(system.content.find("terminal:") != std::string::npos);
    CHECK(system.content.find("picoCTF{...}") != std::string::npos);
    const auto& user = backend.seen().at(0).at(1);
    CHECK(user.content.find("Exploit Idea:") != std::string::npos);
  }

  TEST_CASE("ablations: no RAG injects nothing, static env offers only shell tools") {
    SolveRig rig("agent-ablate");
    rig.setup.solve_config.use_rag = false;
    rig.setup.solve_config.interactive_env = false;
    const auto run = run_challenge(
        puffin(), rig.setup,
        testsupport::script_factory(testsupport::fixtures_dir() / "puffin" / "solve.jsonl"));
    const auto& t = run.transcript;
    for (const auto& r : t.rounds) CHECK(r.injected_hints.empty());
    CHECK(t.rounds[0].tool_invocations[0].observation.find("not available") != std::string::npos);
    CHECK(t.rounds[3].tool_invocations[0].observation.find("not available") != std::string::npos);

    const auto names = [](const SolveConfig& c) {
      std::set<std::string> out;
      for (const auto& s : Agent::offered_tools(c)) out.insert(s.name);
      return out;
    };
    CHECK(names(rig.setup.solve_config) ==
          std::set<std::string>{"terminal", "read_file", "submit_flag", "final_answer"});
    CHECK(names(SolveConfig{}).count("start_nc_session") == 1);
  }

  TEST_CASE("classify_termination priorities") {
    LoopState s;
    s.rounds_used = 30;
    CHECK(classify_termination(s) == FailureReason::MaxRounds);
    s.surrendered = true;
    CHECK(classify_termination(s) == FailureReason::GiveUp);
    s.backend_error = true;
    CHECK(classify_termination(s) == FailureReason::BackendError);
    s.context_exceeded = true;
    CHECK(classify_termination(s) == FailureReason::ContextExceeded);
    LoopState fa;
    fa.final_answer_without_flag = true;
    fa.rounds_used = 12;
    CHECK(classify_termination(fa) == FailureReason::GiveUp);
  }

  TEST_CASE("surrender phrases") {
    CHECK(is_surrender("I give up."));
    CHECK(is_surrender("Sorry, I CANNOT SOLVE this"));
    CHECK(!is_surrender("Let me try the overflow"));
  }

  TEST_CASE("transcript file round-trips") {
    SolveRig rig("agent-transcript");
    const auto run = run_challenge(
        puffin(), rig.setup,
        testsupport::script_factory(testsupport::fixtures_dir() / "puffin" / "solve.jsonl"));
    const auto back = read_transcript(run.transcript_path);
    CHECK(back.challenge_id == "puffin");
    CHECK(back.rounds.size() == run.transcript.rounds.size());
    CHECK(back.determinism_digest == run.transcript.determinism_digest);
    CHECK(compute_digest(back) == run.transcript.determinism_digest);

    const auto lines = text::split_lines(read_file(run.transcript_path));
    CHECK(lines.size() == 7);
    CHECK(json::parse(lines.back())["type"] == "outcome");
  }

  TEST_CASE("transcript without an outcome line is rejected") {
    const auto dir = testsupport::fresh_dir("agent-bad-transcript");
    write_file(dir / "t.jsonl", R"({"type":"round","index":1})" "\n");
    CHECK_THROWS_AS(read_transcript(dir / "t.jsonl"), LoadError);
  }

  TEST_CASE("property: random scripts respect round and hint invariants") {
    std::mt19937 rng(7);
    const auto src = testsupport::fresh_dir("agent-prop-src");
    const auto c = toy_challenge(src);
    const std::vector<ChatMessage> pool = {
        tool_reply("terminal", {{"command", "ls"}}),
        tool_reply("read_file", {{"path", "notes.txt"}}),
        tool_reply("terminal", {{"command", "cat notes.txt"}}),
        tool_reply("submit_flag", {{"flag", "picoCTF{wrong}"}}),
        text_reply("Exploit Idea: overflow the buffer to overwrite the variable"),
        text_reply("thinking"),
        tool_reply("bogus_tool", json::object()),
        tool_reply("submit_flag", {{"flag", "picoCTF{t0y_fl4g}"}}),
        tool_reply("final_answer", {{"answer", "no idea"}}),
    };
    for (int trial = 0; trial < 40; ++trial) {
      SolveRig rig("agent-prop");
      rig.setup.solve_config.max_rounds = 1 + static_cast<int>(rng() % 10);
      std::vector<ChatMessage> script;
      const auto len = rng() % 14;
      for (std::size_t i = 0; i < len; ++i) script.push_back(pool[rng() % pool.size()]);
      const auto t = run_challenge(c, rig.setup, replies_factory(script)).transcript;

      CHECK(static_cast<int>(t.rounds.size()) <= rig.setup.solve_config.max_rounds);
      for (std::size_t i = 0; i < t.rounds.size(); ++i) {
        CHECK(t.rounds[i].index == static_cast<int>(i + 1));
        for (const auto& h : t.rounds[i].injected_hints) CHECK(h.round_index <= t.rounds[i].index);
      }
      if (t.outcome.kind == OutcomeKind::Solved) {
        CHECK(!t.outcome.failure_reason);
        CHECK(t.outcome.flag == c.flag);
        CHECK(*t.outcome.solved_at_round == static_cast<int>(t.rounds.size()));
      } else {
        CHECK(t.outcome.failure_reason.has_value());
        CHECK(!t.outcome.flag);
      }
    }
  }
}
