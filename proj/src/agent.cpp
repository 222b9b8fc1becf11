#include "ctfagent/agent.hpp"

#include <array>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ctfagent/errors.hpp"
#include "ctfagent/prompts.hpp"

namespace ctfagent {

using nlohmann::json;

namespace {

Trigger parse_trigger(std::string_view s) {
  if (s == "CodeRead") return Trigger::CodeRead;
  if (s == "ExploitIdea") return Trigger::ExploitIdea;
  throw ValidationError("trigger", fmt::format("unknown trigger '{}'", s));
}

json hint_to_json(const HintEvent& h) {
  return {{"round_index", h.round_index},
          {"trigger", to_string(h.trigger)},
          {"trunk_ids", h.trunk_ids},
          {"rendered_hint", h.rendered_hint}};
}

HintEvent hint_from_json(const json& j) {
  HintEvent h;
  h.round_index = j.at("round_index").get<int>();
  h.trigger = parse_trigger(j.at("trigger").get<std::string>());
  h.trunk_ids = j.at("trunk_ids").get<std::vector<std::string>>();
  h.rendered_hint = j.at("rendered_hint").get<std::string>();
  return h;
}

// Pulls a string field out of tool arguments that may be a JSON object, a JSON string or
// plain text.
std::string argument_text(const std::string& arguments, std::string_view field) {
  const auto parsed = json::parse(arguments, nullptr, false);
  if (parsed.is_discarded()) return text::trim(arguments);
  if (parsed.is_string()) return text::trim(parsed.get<std::string>());
  if (parsed.is_object()) {
    auto it = parsed.find(std::string(field));
    if (it != parsed.end()) return it->is_string() ? text::trim(it->get<std::string>()) : it->dump();
    if (parsed.size() == 1 && parsed.begin()->is_string())
      return text::trim(parsed.begin()->get<std::string>());
  }
  return text::trim(arguments);
}

std::string render_tools_info(std::span<const ToolSchema> tools) {
  std::string out;
  for (const auto& t : tools) {
    out += fmt::format("{}: {}, args: {}\n", t.name, t.description,
                       t.parameters.value("properties", json::object()).dump());
  }
  if (!out.empty()) out.pop_back();
  return out;
}

bool offered(std::span<const ToolSchema> tools, std::string_view name) {
  for (const auto& t : tools)
    if (t.name == name) return true;
  return false;
}

constexpr std::string_view kNudge =
    "No tool was called. Continue working on the challenge with one of the available tools, "
    "or submit the flag once you have it.";

constexpr std::string_view kReactReminder =
    "Format error: {}. Reply with a Thought and exactly one fenced $JSON_BLOB holding "
    "\"action\" and \"action_input\".";

}  // namespace

void to_json(json& j, const SolveConfig& c) {
  j = json{{"max_rounds", c.max_rounds},   {"flag_format", c.flag_format},
           {"idea_marker", c.idea_marker}, {"temperature", c.temperature},
           {"use_rag", c.use_rag},         {"interactive_env", c.interactive_env}};
}

void from_json(const json& j, SolveConfig& c) {
  SolveConfig d;
  c.max_rounds = j.value("max_rounds", d.max_rounds);
  c.flag_format = j.value("flag_format", d.flag_format);
  c.idea_marker = j.value("idea_marker", d.idea_marker);
  c.temperature = j.value("temperature", d.temperature);
  c.use_rag = j.value("use_rag", d.use_rag);
  c.interactive_env = j.value("interactive_env", d.interactive_env);
  if (c.max_rounds < 1) throw ValidationError("max_rounds", "must be at least 1");
}

std::string_view to_string(OutcomeKind k) { return k == OutcomeKind::Solved ? "Solved" : "Failed"; }

std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::GiveUp: return "GiveUp";
    case FailureReason::MaxRounds: return "MaxRounds";
    case FailureReason::ContextExceeded: return "ContextExceeded";
    case FailureReason::BackendError: return "BackendError";
    case FailureReason::SetupError: return "SetupError";
  }
  return "?";
}

OutcomeKind parse_outcome_kind(std::string_view s) {
  if (s == "Solved") return OutcomeKind::Solved;
  if (s == "Failed") return OutcomeKind::Failed;
  throw ValidationError("outcome", fmt::format("unknown outcome '{}'", s));
}

FailureReason parse_failure_reason(std::string_view s) {
  for (auto r : {FailureReason::GiveUp, FailureReason::MaxRounds, FailureReason::ContextExceeded,
                 FailureReason::BackendError, FailureReason::SetupError})
    if (to_string(r) == s) return r;
  throw ValidationError("failure_reason", fmt::format("unknown failure reason '{}'", s));
}

json round_to_json(const Round& r) {
  json inv = json::array();
  for (const auto& t : r.tool_invocations) {
    inv.push_back({{"name", t.name},
                   {"arguments", t.arguments},
                   {"observation", t.observation},
                   {"tool_hint", t.tool_hint ? json(*t.tool_hint) : json(nullptr)}});
  }
  json hints = json::array();
  for (const auto& h : r.injected_hints) hints.push_back(hint_to_json(h));
  return {{"index", r.index},
          {"assistant", r.assistant},
          {"tool_invocations", std::move(inv)},
          {"injected_hints", std::move(hints)},
          {"feedback", r.feedback}};
}

Round round_from_json(const json& j) {
  Round r;
  r.index = j.at("index").get<int>();
  r.assistant = j.at("assistant").get<ChatMessage>();
  for (const auto& t : j.at("tool_invocations")) {
    ToolInvocation inv{t.at("name").get<std::string>(), t.at("arguments").get<std::string>(),
                       t.at("observation").get<std::string>(), std::nullopt};
    if (t.contains("tool_hint") && t["tool_hint"].is_string())
      inv.tool_hint = t["tool_hint"].get<std::string>();
    r.tool_invocations.push_back(std::move(inv));
  }
  for (const auto& h : j.at("injected_hints")) r.injected_hints.push_back(hint_from_json(h));
  r.feedback = j.value("feedback", "");
  return r;
}

json outcome_to_json(const Outcome& o) {
  json j{{"kind", to_string(o.kind)}, {"detail", o.detail}};
  j["flag"] = o.flag ? json(*o.flag) : json(nullptr);
  j["solved_at_round"] = o.solved_at_round ? json(*o.solved_at_round) : json(nullptr);
  j["failure_reason"] = o.failure_reason ? json(to_string(*o.failure_reason)) : json(nullptr);
  return j;
}

Outcome outcome_from_json(const json& j) {
  Outcome o;
  o.kind = parse_outcome_kind(j.at("kind").get<std::string>());
  o.detail = j.value("detail", "");
  if (j.contains("flag") && j["flag"].is_string()) o.flag = j["flag"].get<std::string>();
  if (j.contains("solved_at_round") && j["solved_at_round"].is_number_integer())
    o.solved_at_round = j["solved_at_round"].get<int>();
  if (j.contains("failure_reason") && j["failure_reason"].is_string())
    o.failure_reason = parse_failure_reason(j["failure_reason"].get<std::string>());
  return o;
}

std::string compute_digest(const AgentTranscript& t) {
  json rounds = json::array();
  for (const auto& r : t.rounds) rounds.push_back(round_to_json(r));
  const json doc{{"challenge_id", t.challenge_id},
                 {"config", t.config},
                 {"rounds", std::move(rounds)},
                 {"outcome", outcome_to_json(t.outcome)}};
  return sha256_hex(doc.dump());
}

void write_transcript(const std::filesystem::path& path, const AgentTranscript& t) {
  std::string out;
  for (const auto& r : t.rounds) {
    auto j = round_to_json(r);
    j["type"] = "round";
    out += j.dump() + '\n';
  }
  json tail = outcome_to_json(t.outcome);
  tail["type"] = "outcome";
  tail["challenge_id"] = t.challenge_id;
  tail["config"] = t.config;
  tail["determinism_digest"] = t.determinism_digest;
  tail["rounds_used"] = t.rounds.size();
  out += tail.dump() + '\n';
  write_file(path, out);
}

AgentTranscript read_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "cannot open transcript");
  AgentTranscript t;
  bool have_outcome = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    if (have_outcome) throw LoadError(path, lineno, "content after the outcome line");
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "round") {
        t.rounds.push_back(round_from_json(j));
      } else if (type == "outcome") {
        t.outcome = outcome_from_json(j);
        t.challenge_id = j.at("challenge_id").get<std::string>();
        t.config = j.at("config").get<SolveConfig>();
        t.determinism_digest = j.at("determinism_digest").get<std::string>();
        have_outcome = true;
      } else {
        throw LoadError(path, lineno, "unknown line type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw LoadError(path, lineno, e.what());
    } catch (const ValidationError& e) {
      throw LoadError(path, lineno, e.what());
    }
  }
  if (!have_outcome) throw LoadError(path, lineno, "missing outcome line");
  return t;
}

FailureReason classify_termination(const LoopState& s) {
  if (s.context_exceeded) return FailureReason::ContextExceeded;
  if (s.backend_error) return FailureReason::BackendError;
  if (s.final_answer_without_flag || s.surrendered) return FailureReason::GiveUp;
  return FailureReason::MaxRounds;
}

bool is_surrender(std::string_view message) {
  static constexpr std::array<std::string_view, 9> kPhrases = {
      "i give up",         "i'm giving up",    "i am giving up",
      "unable to solve",   "cannot solve",     "can't solve",
      "could not solve",   "couldn't solve",   "not able to solve"};
  for (auto p : kPhrases)
    if (text::icontains(message, p)) return true;
  return false;
}

AgentPrompts AgentPrompts::load(const std::filesystem::path& assets_dir) {
  return {load_prompt(assets_dir, prompt::kSystem), load_prompt(assets_dir, prompt::kReact)};
}

Agent::Agent(const KnowledgeStore& store, Embedder embedder, AgentPrompts prompts,
             RouterConfig router_config, HintTemplate hint_template)
    : store_(&store),
      embedder_(std::move(embedder)),
      prompts_(std::move(prompts)),
      router_config_(std::move(router_config)),
      hint_template_(std::move(hint_template)) {}

std::vector<ToolSchema> Agent::offered_tools(const SolveConfig& config) {
  std::vector<ToolSchema> out;
  for (auto& s : Environment::tool_schemas()) {
    if (!config.interactive_env && s.name != tools::kTerminal && s.name != tools::kReadFile)
      continue;
    out.push_back(std::move(s));
  }
  const json str = {{"type", "string"}};
  out.push_back({std::string(kSubmitFlagTool), "Submit the flag. Ends the attempt if it is correct.",
                 json{{"type", "object"},
                      {"properties", {{"flag", str}}},
                      {"required", {"flag"}}}});
  out.push_back({std::string(kFinalAnswerTool),
                 "Give your final answer and stop. Include the flag if you found it.",
                 json{{"type", "object"},
                      {"properties", {{"answer", str}}},
                      {"required", {"answer"}}}});
  return out;
}

std::string Agent::challenge_prompt(const Challenge& c, const SolveConfig& config,
                                    bool react_mode) const {
  std::string out = fmt::format("Challenge: {}\nCategory: {}\nPoints: {}\n\nDescription:\n{}\n\n",
                                c.name, to_string(c.category), c.points, text::trim(c.description));
  out += "Files in the working directory: ";
  out += c.files.empty() ? std::string("none") : text::join(c.files, ", ");
  out += '\n';
  if (c.service) out += fmt::format("Service: {}:{}\n", c.service->host, c.service->port);
  const auto& format = c.flag_format.empty() ? config.flag_format : c.flag_format;
  out += fmt::format("The flag matches the regular expression: {}\n", format);
  if (react_mode) {
    out += fmt::format(
        "\nWhen you settle on a plan of attack, state it in your Thought on a line starting "
        "with \"{}\". Give the flag as the Final Answer once you have it.\n",
        config.idea_marker);
  } else {
    out += fmt::format("\nSubmit the flag with {} once you have it.\n", kSubmitFlagTool);
  }
  return out;
}

AgentTranscript Agent::solve(const Challenge& challenge, Environment& env, ChatBackend& backend,
                             const BackendConfig& backend_config,
                             const SolveConfig& config) const {
  if (config.max_rounds < 1) throw ValidationError("max_rounds", "must be at least 1");
  const FlagMatcher matcher(challenge.flag_format.empty() ? config.flag_format
                                                          : challenge.flag_format);
  const bool react_mode = !backend_config.supports_tool_calls;

  BackendConfig bc = backend_config;
  bc.temperature = config.temperature;

  RouterConfig rc = router_config_;
  rc.idea_marker = config.idea_marker;
  RagRouter router(*store_, embedder_, rc, hint_template_);

  const auto tools = offered_tools(config);
  std::vector<ChatMessage> history;
  if (react_mode) {
    std::vector<ToolSchema> env_tools;
    for (const auto& t : tools)
      if (t.name != kSubmitFlagTool && t.name != kFinalAnswerTool) env_tools.push_back(t);
    history.push_back(
        {Role::System, text::replace_all(prompts_.react_prompt, "{tools_info}",
                                         render_tools_info(env_tools)),
         std::nullopt});
  } else {
    history.push_back({Role::System, prompts_.system_prompt, std::nullopt});
  }
  history.push_back({Role::User, challenge_prompt(challenge, config, react_mode), std::nullopt});

  AgentTranscript t;
  t.challenge_id = challenge.id;
  t.config = config;

  LoopState state;
  state.max_rounds = config.max_rounds;
  std::optional<Outcome> solved;
  std::string failure_detail;

  for (int r = 1; r <= config.max_rounds; ++r) {
    ChatMessage reply;
    try {
      reply = backend.complete(bc, history,
                               react_mode ? std::span<const ToolSchema>{} : std::span(tools));
    } catch (const ContextExceeded& e) {
      state.context_exceeded = true;
      failure_detail = e.what();
      break;
    } catch (const BackendError& e) {
      state.backend_error = true;
      failure_detail = e.what();
      break;
    }
    reply.role = Role::Assistant;
    history.push_back(reply);

    Round round;
    round.index = r;
    round.assistant = reply;
    if (config.use_rag) {
      if (auto h = router.on_message(r, reply.content)) round.injected_hints.push_back(*h);
    }

    // Normalise both protocols to (name, arguments) or plain text.
    std::optional<std::pair<std::string, std::string>> call;
    bool final_answer = false;
    std::string final_text;
    std::optional<std::string> malformed;
    if (react_mode) {
      const auto action = parse_react(reply.content);
      switch (action.kind) {
        case ReactAction::Kind::ToolCall: call.emplace(action.name, action.input); break;
        case ReactAction::Kind::FinalAnswer:
          final_answer = true;
          final_text = action.input;
          break;
        case ReactAction::Kind::Malformed: malformed = action.reason; break;
      }
    } else if (reply.tool_call) {
      call.emplace(reply.tool_call->name, reply.tool_call->arguments);
    }
    if (call && call->first == kFinalAnswerTool) {
      final_answer = true;
      final_text = argument_text(call->second, "answer");
      call.reset();
    }

    std::optional<std::string> observation;
    bool stop = false;
    if (final_answer) {
      const auto flag = detect_flag(final_text, matcher);
      if (flag && *flag == challenge.flag) {
        solved = Outcome::solved(*flag, r);
      } else {
        state.final_answer_without_flag = true;
        failure_detail = flag ? "final answer carried an incorrect flag" : "final answer without a flag";
      }
      stop = true;
    } else if (call && call->first == kSubmitFlagTool) {
      const auto candidate = argument_text(call->second, "flag");
      const auto flag = matcher.matches(candidate) ? std::optional(candidate)
                                                   : detect_flag(candidate, matcher);
      if (flag && *flag == challenge.flag) {
        solved = Outcome::solved(*flag, r);
        stop = true;
        observation = "Correct flag.";
      } else if (flag) {
        observation = "Incorrect flag.";
      } else {
        observation = fmt::format("Incorrect flag: it does not match {}.", matcher.pattern());
      }
      round.tool_invocations.push_back({call->first, call->second, *observation, std::nullopt});
    } else if (call) {
      ToolInvocation inv{call->first, call->second, {}, std::nullopt};
      if (!offered(tools, call->first)) {
        inv.observation = fmt::format("Error: tool '{}' is not available.", call->first);
      } else {
        auto outcome = env.invoke(call->first, call->second);
        if (config.interactive_env) {
          inv.observation = outcome.observation;
          inv.tool_hint = outcome.tool_hint;
        } else {
          inv.observation = outcome.raw_output;
        }
        if (config.use_rag) {
          if (auto h = router.on_observation(r, {call->first, call->second, outcome.raw_output}))
            round.injected_hints.push_back(*h);
        }
      }
      observation = inv.observation;
      round.tool_invocations.push_back(std::move(inv));
    } else if (is_surrender(reply.content)) {
      state.surrendered = true;
      failure_detail = "model gave up";
      stop = true;
    } else if (malformed) {
      round.feedback = fmt::format(fmt::runtime(kReactReminder), *malformed);
    } else {
      round.feedback = std::string(kNudge);
    }

    if (!stop) {
      if (observation) {
        if (react_mode)
          history.push_back({Role::User, "Observation: " + *observation, std::nullopt});
        else
          history.push_back({Role::ToolResult, *observation, reply.tool_call});
      } else if (!round.feedback.empty()) {
        history.push_back({Role::User, round.feedback, std::nullopt});
      }
      for (const auto& h : round.injected_hints)
        history.push_back({Role::User, h.rendered_hint, std::nullopt});
    }

    t.rounds.push_back(std::move(round));
    state.rounds_used = r;
    if (stop) break;
  }

  if (solved) {
    t.outcome = *solved;
  } else {
    const auto reason = classify_termination(state);
    if (reason == FailureReason::MaxRounds && failure_detail.empty())
      failure_detail = fmt::format("round budget of {} exhausted", config.max_rounds);
    t.outcome = Outcome::failed(reason, failure_detail);
  }
  t.determinism_digest = compute_digest(t);
  spdlog::info("{}: {} after {} round(s){}", challenge.id, to_string(t.outcome.kind),
               t.rounds.size(),
               t.outcome.failure_reason
                   ? fmt::format(" ({})", to_string(*t.outcome.failure_reason))
                   : std::string());
  return t;
}

}  // namespace ctfagent
