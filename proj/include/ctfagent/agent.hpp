#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctfagent/challenge.hpp"
#include "ctfagent/environment.hpp"
#include "ctfagent/flag.hpp"
#include "ctfagent/knowledge_store.hpp"
#include "ctfagent/llm_backend.hpp"
#include "ctfagent/rag_router.hpp"
#include "ctfagent/react.hpp"

namespace ctfagent {

inline constexpr int kDefaultMaxRounds = 30;

struct SolveConfig {
  int max_rounds = kDefaultMaxRounds;
  std::string flag_format{kPicoFlagFormat};  // overridden by the challenge's own format
  std::string idea_marker = "Exploit Idea:";
  double temperature = 0.0;
  bool use_rag = true;          // false: no knowledge hints
  bool interactive_env = true;  // false: static shell only, no sessions or tool hints
};

void to_json(nlohmann::json& j, const SolveConfig& c);
void from_json(const nlohmann::json& j, SolveConfig& c);

struct ToolInvocation {
  std::string name;
  std::string arguments;
  std::string observation;
  std::optional<std::string> tool_hint;
};

struct Round {
  int index = 0;  // from 1
  ChatMessage assistant;
  std::vector<ToolInvocation> tool_invocations;
  std::vector<HintEvent> injected_hints;
  std::string feedback;  // loop feedback sent back when no tool ran (nudges, reminders)
};

enum class OutcomeKind { Solved, Failed };
enum class FailureReason { GiveUp, MaxRounds, ContextExceeded, BackendError, SetupError };

std::string_view to_string(OutcomeKind k);
std::string_view to_string(FailureReason r);
OutcomeKind parse_outcome_kind(std::string_view s);
FailureReason parse_failure_reason(std::string_view s);

struct Outcome {
  OutcomeKind kind = OutcomeKind::Failed;
  std::optional<std::string> flag;
  std::optional<int> solved_at_round;
  std::optional<FailureReason> failure_reason;
  std::string detail;

  static Outcome solved(std::string flag, int round) {
    return {OutcomeKind::Solved, std::move(flag), round, std::nullopt, {}};
  }
  static Outcome failed(FailureReason reason, std::string detail = {}) {
    return {OutcomeKind::Failed, std::nullopt, std::nullopt, reason, std::move(detail)};
  }
};

struct AgentTranscript {
  std::string challenge_id;
  SolveConfig config;
  std::vector<Round> rounds;
  Outcome outcome;
  std::string determinism_digest;
};

nlohmann::json round_to_json(const Round& r);
Round round_from_json(const nlohmann::json& j);
nlohmann::json outcome_to_json(const Outcome& o);
Outcome outcome_from_json(const nlohmann::json& j);

/// SHA-256 over the canonical JSON of challenge id, config, rounds and outcome.
std::string compute_digest(const AgentTranscript& t);

/// Transcript file: one {"type":"round"} object per line, then a trailing
/// {"type":"outcome"} object carrying the challenge id, config and digest.
void write_transcript(const std::filesystem::path& path, const AgentTranscript& t);
AgentTranscript read_transcript(const std::filesystem::path& path);

/// What the loop knows when it stops without a solve.
struct LoopState {
  int rounds_used = 0;
  int max_rounds = kDefaultMaxRounds;
  bool context_exceeded = false;
  bool backend_error = false;
  bool final_answer_without_flag = false;
  bool surrendered = false;
};

/// ContextExceeded, then BackendError, then GiveUp (final answer without the flag or an
/// explicit surrender), then MaxRounds once the budget is spent.
FailureReason classify_termination(const LoopState& state);

/// Phrases such as "I give up" or "unable to solve" (case-insensitive).
bool is_surrender(std::string_view text);

struct AgentPrompts {
  std::string system_prompt;  // native tool-calling mode
  std::string react_prompt;   // ReAct template with {tools_info}

  static AgentPrompts load(const std::filesystem::path& assets_dir);
};

inline constexpr std::string_view kSubmitFlagTool = "submit_flag";
inline constexpr std::string_view kFinalAnswerTool = "final_answer";

/// The solve loop. Holds the shared, read-only pieces; each solve() builds its own
/// router state.
class Agent {
 public:
  Agent(const KnowledgeStore& store, Embedder embedder, AgentPrompts prompts,
        RouterConfig router_config = {}, HintTemplate hint_template = HintTemplate::builtin());

  AgentTranscript solve(const Challenge& challenge, Environment& env, ChatBackend& backend,
                        const BackendConfig& backend_config, const SolveConfig& config) const;

  /// Tools offered to the model for the given configuration.
  static std::vector<ToolSchema> offered_tools(const SolveConfig& config);
  std::string challenge_prompt(const Challenge& challenge, const SolveConfig& config,
                               bool react_mode) const;

 private:
  const KnowledgeStore* store_;
  Embedder embedder_;
  AgentPrompts prompts_;
  RouterConfig router_config_;
  HintTemplate hint_template_;
};

}  // namespace ctfagent
