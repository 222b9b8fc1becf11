#include "ctfagent/cli.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "ctfagent/agent.hpp"
#include "ctfagent/errors.hpp"
#include "ctfagent/eval.hpp"
#include "ctfagent/pipeline.hpp"
#include "ctfagent/prompts.hpp"

namespace ctfagent {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for bad flags, configs and inputs; maps to exit code 2.
struct UsageError : Error {
  using Error::Error;
};

// Flag values; unset optionals fall back to the config file, then to the defaults.
struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> backend;
  std::optional<std::string> store;
  std::optional<std::string> hints;
  std::optional<std::string> assets;
  std::optional<std::string> out;
  std::optional<std::string> model;
  std::optional<std::string> decompiler;
  std::optional<int> max_rounds;
  std::optional<double> temperature;
  std::optional<std::size_t> parallelism;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_context_tokens;
  std::optional<int> repeats;
  bool react = false;
  bool no_rag = false;
  bool no_interactive = false;
  bool force = false;
  bool verbose = false;
};

struct RunConfig {
  std::string backend = "http";
  std::string store;
  std::string hints;
  std::string assets;
  std::string out = "out";
  std::string model = "gpt-4o";
  std::string decompiler;
  int max_rounds = kDefaultMaxRounds;
  double temperature = 0.0;
  std::size_t parallelism = 1;
  std::uint64_t seed = kDefaultSeed;
  std::size_t max_context_tokens = kDefaultContextTokens;
  int repeats = 1;
  bool react = false;
  bool use_rag = true;
  bool interactive_env = true;

  json to_json() const {
    return {{"backend", backend},
            {"store", store},
            {"hints", hints},
            {"assets", assets},
            {"out", out},
            {"model", model},
            {"decompiler", decompiler},
            {"max_rounds", max_rounds},
            {"temperature", temperature},
            {"parallelism", parallelism},
            {"seed", seed},
            {"max_context_tokens", max_context_tokens},
            {"repeats", repeats},
            {"react", react},
            {"use_rag", use_rag},
            {"interactive_env", interactive_env}};
  }
};

template <typename T>
void pick(T& dst, const std::optional<T>& flag, const json& file, const char* key) {
  if (flag) {
    dst = *flag;
  } else if (file.contains(key) && !file[key].is_null()) {
    try {
      dst = file[key].get<T>();
    } catch (const json::exception& e) {
      throw UsageError(fmt::format("config field '{}': {}", key, e.what()));
    }
  }
}

RunConfig resolve_config(const Flags& f) {
  json file = json::object();
  if (f.config) {
    if (!fs::exists(*f.config)) throw UsageError("config file not found: " + *f.config);
    try {
      file = json::parse(read_file(*f.config));
    } catch (const json::exception& e) {
      throw UsageError(fmt::format("config file {}: {}", *f.config, e.what()));
    }
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
  }
  RunConfig c;
  pick(c.backend, f.backend, file, "backend");
  pick(c.store, f.store, file, "store");
  pick(c.hints, f.hints, file, "hints");
  pick(c.assets, f.assets, file, "assets");
  pick(c.out, f.out, file, "out");
  pick(c.model, f.model, file, "model");
  pick(c.decompiler, f.decompiler, file, "decompiler");
  pick(c.max_rounds, f.max_rounds, file, "max_rounds");
  pick(c.temperature, f.temperature, file, "temperature");
  pick(c.parallelism, f.parallelism, file, "parallelism");
  pick(c.seed, f.seed, file, "seed");
  pick(c.max_context_tokens, f.max_context_tokens, file, "max_context_tokens");
  pick(c.repeats, f.repeats, file, "repeats");
  pick(c.react, f.react ? std::optional(true) : std::nullopt, file, "react");
  pick(c.use_rag, f.no_rag ? std::optional(false) : std::nullopt, file, "use_rag");
  pick(c.interactive_env, f.no_interactive ? std::optional(false) : std::nullopt, file,
       "interactive_env");

  if (c.assets.empty()) c.assets = default_assets_dir().string();
  if (c.hints.empty()) c.hints = tool_hints_path(c.assets).string();
  if (c.max_rounds < 1) throw UsageError("--max-rounds must be at least 1");
  if (c.parallelism < 1) throw UsageError("--parallelism must be at least 1");
  if (c.repeats < 1) throw UsageError("--repeats must be at least 1");
  for (const auto& [name, path] : {std::pair{"assets", c.assets}, std::pair{"hints", c.hints},
                                   std::pair{"store", c.store}})
    if (!path.empty() && !fs::exists(path))
      throw UsageError(fmt::format("{} path not found: {}", name, path));
  return c;
}

void add_run_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file (flags take precedence)");
  app->add_option("--backend", f.backend, "scripted:<path> or http");
  app->add_option("--store", f.store, "Knowledge store file");
  app->add_option("--hints", f.hints, "Tool hints JSON file");
  app->add_option("--assets", f.assets, "Prompt assets directory");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--model", f.model, "Model name for the http backend");
  app->add_option("--decompiler", f.decompiler,
                  "Decompiler command template with {input}; sidecar files otherwise");
  app->add_option("--max-rounds", f.max_rounds, "Round budget per solve (default 30)");
  app->add_option("--temperature", f.temperature, "Sampling temperature (default 0)");
  app->add_option("--max-context-tokens", f.max_context_tokens, "Context cap in tokens");
  app->add_flag("--react", f.react, "Use the ReAct text protocol instead of tool calls");
  app->add_flag("--no-rag", f.no_rag, "Disable knowledge hints");
  app->add_flag("--no-interactive", f.no_interactive,
                "Static environment: shell and file reads only, no tool hints");
}

struct BackendSpec {
  bool scripted = false;
  fs::path path;
};

BackendSpec parse_backend(const std::string& spec) {
  if (spec == "http") return {};
  constexpr std::string_view kScripted = "scripted:";
  if (spec.rfind(kScripted, 0) == 0) {
    BackendSpec b{true, spec.substr(kScripted.size())};
    if (b.path.empty()) throw UsageError("--backend scripted: needs a path");
    if (!fs::exists(b.path)) throw UsageError("script not found: " + b.path.string());
    return b;
  }
  throw UsageError("--backend must be scripted:<path> or http, got '" + spec + "'");
}

BackendFactory make_factory(const BackendSpec& spec) {
  if (!spec.scripted) {
    return [](const Challenge&) -> std::unique_ptr<ChatBackend> {
      return std::make_unique<HttpChatBackend>(HttpBackendOptions::from_env());
    };
  }
  if (fs::is_directory(spec.path)) return scripted_backend_factory(spec.path);
  return [path = spec.path](const Challenge&) -> std::unique_ptr<ChatBackend> {
    return load_script(path);
  };
}

std::unique_ptr<ChatBackend> make_single_backend(const std::string& spec_text) {
  const auto spec = parse_backend(spec_text);
  if (!spec.scripted) return std::make_unique<HttpChatBackend>(HttpBackendOptions::from_env());
  if (fs::is_directory(spec.path)) throw UsageError("--backend scripted: expects a file here");
  return load_script(spec.path);
}

KnowledgeStore load_store(const RunConfig& c) {
  if (c.store.empty()) return KnowledgeStore{};
  auto store = KnowledgeStore::load(c.store);
  if (store.embedder_name() != HashingEmbedder::kName)
    throw UsageError(fmt::format("store {} was built with embedder '{}', expected '{}'", c.store,
                                 store.embedder_name(), HashingEmbedder::kName));
  return store;
}

std::size_t store_dim(const KnowledgeStore& store) {
  for (auto k : {KeyKind::TrunkText, KeyKind::CodeSnippet})
    if (store.dim(k)) return store.dim(k);
  return HashingEmbedder::kDefaultDim;
}

struct RunContext {
  RunConfig config;
  KnowledgeStore store;
  std::unique_ptr<Agent> agent;
  SolveSetup setup;
};

std::unique_ptr<RunContext> prepare_run(const Flags& flags, std::ostream& err) {
  auto ctx = std::make_unique<RunContext>();
  ctx->config = resolve_config(flags);
  const auto& c = ctx->config;
  err << "config: " << c.to_json().dump() << '\n';
  parse_backend(c.backend);  // reject a bad backend before writing anything
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "run_config.json", c.to_json().dump(2) + "\n");

  ctx->store = load_store(c);
  const auto assets = fs::path(c.assets);
  HintTemplate tmpl = HintTemplate::builtin();
  if (fs::exists(hint_template_path(assets))) tmpl = HintTemplate::load(hint_template_path(assets));
  ctx->agent = std::make_unique<Agent>(ctx->store, HashingEmbedder(store_dim(ctx->store)),
                                       AgentPrompts::load(assets), RouterConfig{}, tmpl);
  auto& s = ctx->setup;
  s.agent = ctx->agent.get();
  if (!c.hints.empty()) s.hints = load_tool_hints(c.hints);
  if (!c.decompiler.empty()) s.decompiler_command = c.decompiler;
  s.backend_config.model_name = c.model;
  s.backend_config.temperature = c.temperature;
  s.backend_config.max_context_tokens = c.max_context_tokens;
  s.backend_config.supports_tool_calls = !c.react;
  s.solve_config.max_rounds = c.max_rounds;
  s.solve_config.temperature = c.temperature;
  s.solve_config.use_rag = c.use_rag;
  s.solve_config.interactive_env = c.interactive_env;
  s.out_dir = c.out;
  return ctx;
}

// build-kb ------------------------------------------------------------------

struct BuildKbArgs {
  std::string trunks, snippets, out;
  std::size_t dim = HashingEmbedder::kDefaultDim;
  bool force = false;
};

int cmd_build_kb(const BuildKbArgs& a, std::ostream& out) {
  for (const auto& p : {a.trunks, a.snippets})
    if (!p.empty() && !fs::exists(p)) throw UsageError("input not found: " + p);
  if (fs::exists(a.out) && !a.force)
    throw UsageError(a.out + " exists; pass --force to overwrite");
  auto trunks = read_trunks_file(a.trunks);
  const auto snippets = a.snippets.empty() ? std::map<std::string, std::string>{}
                                           : read_snippets_file(a.snippets);
  const auto store = KnowledgeStore::build(std::move(trunks), snippets, HashingEmbedder(a.dim));
  store.save(a.out);
  out << fmt::format("{} trunks, {} records\n", store.trunks().size(), store.records().size());
  return exit_code::kSuccess;
}

// solve ---------------------------------------------------------------------

int cmd_solve(const Flags& flags, const std::string& manifest, const std::string& id,
              std::ostream& out, std::ostream& err) {
  if (!fs::exists(manifest)) throw UsageError("manifest not found: " + manifest);
  std::vector<Challenge> challenges;
  try {
    challenges = load_dataset(manifest);
  } catch (const ValidationError& e) {
    throw UsageError(fmt::format("bad manifest {}: {}", manifest, e.what()));
  } catch (const LoadError& e) {
    throw UsageError(e.what());
  }
  const Challenge* chosen = nullptr;
  if (!id.empty()) {
    for (const auto& c : challenges)
      if (c.id == id) chosen = &c;
    if (!chosen) throw UsageError("no challenge with id " + id + " in " + manifest);
  } else if (challenges.size() == 1) {
    chosen = &challenges.front();
  } else {
    throw UsageError("manifest holds several challenges; pick one with --id");
  }

  auto ctx = prepare_run(flags, err);
  const auto backend = parse_backend(ctx->config.backend);
  const auto run = run_challenge(*chosen, ctx->setup, make_factory(backend));
  const auto& o = run.transcript.outcome;
  if (o.kind == OutcomeKind::Solved) {
    out << fmt::format("Solved at round {}: {}\n", *o.solved_at_round, *o.flag);
  } else {
    out << fmt::format("Failed ({}) after {} round(s)", to_string(*o.failure_reason),
                       run.transcript.rounds.size());
    if (!o.detail.empty()) out << ": " << o.detail;
    out << '\n';
  }
  out << "transcript: " << run.transcript_path.string() << '\n';
  if (run.setup_failed) return exit_code::kEnvironment;
  return o.kind == OutcomeKind::Solved ? exit_code::kSuccess : exit_code::kUnsolved;
}

// campaign ------------------------------------------------------------------

int cmd_campaign(const Flags& flags, const std::string& dataset, const std::string& judge_spec,
                 std::ostream& out, std::ostream& err) {
  if (!fs::exists(dataset)) throw UsageError("dataset not found: " + dataset);
  std::vector<Challenge> challenges;
  try {
    challenges = load_dataset(dataset);
  } catch (const ValidationError& e) {
    throw UsageError(fmt::format("bad dataset {}: {}", dataset, e.what()));
  } catch (const LoadError& e) {
    throw UsageError(e.what());
  }
  auto ctx = prepare_run(flags, err);
  const auto factory = make_factory(parse_backend(ctx->config.backend));

  CampaignOptions opts;
  opts.parallelism = ctx->config.parallelism;
  opts.repeats = ctx->config.repeats;
  std::unique_ptr<ChatBackend> judge;
  if (!judge_spec.empty()) {
    judge = make_single_backend(judge_spec);
    opts.judge = judge.get();
    opts.judge_prompt = load_prompt(ctx->config.assets, prompt::kPartialJudge);
    if (opts.parallelism > 1 && dynamic_cast<ScriptedBackend*>(judge.get())) {
      spdlog::warn("scripted judge replies depend on order; forcing parallelism 1");
      opts.parallelism = 1;
    }
  }
  const auto report = run_campaign(challenges, ctx->setup, factory, opts);
  const fs::path dir = ctx->config.out;
  write_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_file(dir / "report.csv", report_to_csv(report));
  out << render_report(report);
  out << "report: " << (dir / "report.json").string() << '\n';
  return exit_code::kSuccess;
}

// report --------------------------------------------------------------------

int cmd_report(const std::string& path, const std::string& format, std::ostream& out) {
  if (!fs::exists(path)) throw UsageError("report not found: " + path);
  CampaignReport report;
  try {
    report = report_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("report {}: {}", path, e.what()));
  } catch (const ValidationError& e) {
    throw UsageError(fmt::format("report {}: {}", path, e.what()));
  }
  if (format == "text")
    out << render_report(report);
  else if (format == "json")
    out << report_to_json(report).dump(2) << '\n';
  else if (format == "csv")
    out << report_to_csv(report);
  else
    throw UsageError("--format must be text, json or csv");
  return exit_code::kSuccess;
}

// pipeline ------------------------------------------------------------------

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> kStages = {
      "filter-writeups",    "extract-knowledge", "filter-knowledge",
      "extract-snippets",   "generate-questions", "derive-open-ended",
      "filter-questions",   "grade",             "judge-open-ended"};
  return kStages;
}

struct PipelineArgs {
  std::string stage, writeups, trunks, questions, answers, accepted, backend, out, audit, assets;
  std::uint64_t seed = kDefaultSeed;
  bool force = false;
};

void need(const std::string& value, const char* flag, const std::string& stage) {
  if (value.empty()) throw UsageError(fmt::format("stage {} needs {}", stage, flag));
  if (std::string_view(flag) != "--out" && std::string_view(flag) != "--backend" &&
      !fs::exists(value))
    throw UsageError(fmt::format("{} path not found: {}", flag, value));
}

std::vector<WriteupDoc> docs_for(const PipelineArgs& a) {
  auto docs = load_writeups(a.writeups);
  if (a.accepted.empty()) return docs;
  const auto j = json::parse(read_file(a.accepted));
  const auto ids = j.at("accepted").get<std::vector<std::string>>();
  std::erase_if(docs, [&](const WriteupDoc& d) {
    return std::find(ids.begin(), ids.end(), d.id) == ids.end();
  });
  return docs;
}

int cmd_pipeline(const PipelineArgs& a, std::ostream& out) {
  const auto& stages = stage_names();
  if (std::find(stages.begin(), stages.end(), a.stage) == stages.end())
    throw UsageError(fmt::format("unknown stage '{}'; stages: {}", a.stage,
                                 text::join(stages, ", ")));
  need(a.out, "--out", a.stage);
  if (fs::exists(a.out) && !a.force) throw UsageError(a.out + " exists; pass --force to overwrite");
  const auto assets = a.assets.empty() ? default_assets_dir() : fs::path(a.assets);
  const bool needs_backend = a.stage != "filter-writeups" && a.stage != "derive-open-ended" &&
                             a.stage != "grade";
  std::unique_ptr<ChatBackend> backend;
  std::optional<PipelinePrompts> prompts;
  if (needs_backend) {
    need(a.backend, "--backend", a.stage);
    backend = make_single_backend(a.backend);
    prompts = PipelinePrompts::load(assets);
  }
  AuditLog audit;
  const BackendConfig bc{};

  if (a.stage == "filter-writeups") {
    need(a.writeups, "--writeups", a.stage);
    const auto r = filter_writeups(load_writeups(a.writeups));
    json j{{"accepted", json::array()}, {"rejected", json::array()}};
    for (const auto& d : r.accepted) j["accepted"].push_back(d.id);
    for (const auto& rej : r.rejected)
      j["rejected"].push_back({{"id", rej.doc_id}, {"reasons", rej.reasons}});
    write_file(a.out, j.dump(2) + "\n");
    out << fmt::format("{} accepted, {} rejected\n", r.accepted.size(), r.rejected.size());
  } else if (a.stage == "extract-knowledge") {
    need(a.writeups, "--writeups", a.stage);
    std::vector<KnowledgeTrunk> trunks;
    for (const auto& d : docs_for(a)) {
      try {
        auto ts = extract_knowledge(d, *backend, *prompts, bc);
        trunks.insert(trunks.end(), ts.begin(), ts.end());
      } catch (const ExtractionError& e) {
        audit.add({a.stage, d.id, "error", e.what(), {}});
      }
    }
    write_trunks_file(a.out, trunks);
    out << fmt::format("{} trunks\n", trunks.size());
  } else if (a.stage == "filter-knowledge") {
    need(a.writeups, "--writeups", a.stage);
    need(a.trunks, "--trunks", a.stage);
    std::map<std::string, WriteupDoc> docs;
    for (auto& d : load_writeups(a.writeups)) docs.emplace(d.id, std::move(d));
    std::vector<KnowledgeTrunk> kept;
    const auto trunks = read_trunks_file(a.trunks);
    for (const auto& t : trunks) {
      auto it = docs.find(t.source_writeup_id);
      if (it == docs.end()) throw UsageError("trunk " + t.id + " has no source write-up");
      auto v = filter_knowledge(it->second, t, *backend, *prompts, bc);
      audit.add({a.stage, t.id, v.keep ? "keep" : "drop", fmt::format("score {}", v.score),
                 std::move(v.exchange)});
      if (v.keep) kept.push_back(t);
    }
    write_trunks_file(a.out, kept);
    out << fmt::format("{} of {} trunks kept\n", kept.size(), trunks.size());
  } else if (a.stage == "extract-snippets") {
    need(a.writeups, "--writeups", a.stage);
    need(a.trunks, "--trunks", a.stage);
    const auto trunks = read_trunks_file(a.trunks);
    std::map<std::string, std::string> snippets;
    for (const auto& d : load_writeups(a.writeups)) {
      const bool used = std::any_of(trunks.begin(), trunks.end(), [&](const KnowledgeTrunk& t) {
        return t.source_writeup_id == d.id;
      });
      if (!used) continue;
      const auto code = extract_snippet(d, *backend, *prompts, bc);
      for (const auto& t : trunks)
        if (t.source_writeup_id == d.id) snippets[t.id] = code;
    }
    write_snippets_file(a.out, snippets);
    out << fmt::format("{} snippets\n", snippets.size());
  } else if (a.stage == "generate-questions") {
    need(a.writeups, "--writeups", a.stage);
    need(a.trunks, "--trunks", a.stage);
    const auto trunks = read_trunks_file(a.trunks);
    std::vector<Question> qs;
    for (const auto& d : load_writeups(a.writeups)) {
      std::vector<KnowledgeTrunk> mine;
      for (const auto& t : trunks)
        if (t.source_writeup_id == d.id) mine.push_back(t);
      if (mine.empty()) continue;
      try {
        auto got = generate_questions(d, mine, *backend, *prompts, a.seed, bc);
        qs.insert(qs.end(), got.begin(), got.end());
      } catch (const GenerationError& e) {
        audit.add({a.stage, d.id, "error", e.what(), {}});
      }
    }
    write_questions_file(a.out, qs);
    out << fmt::format("{} questions\n", qs.size());
  } else if (a.stage == "derive-open-ended") {
    need(a.questions, "--questions", a.stage);
    std::vector<Question> derived;
    for (const auto& q : read_questions_file(a.questions))
      if (q.kind == QuestionKind::SingleChoice) derived.push_back(derive_open_ended(q));
    write_questions_file(a.out, derived);
    out << fmt::format("{} open-ended questions\n", derived.size());
  } else if (a.stage == "filter-questions") {
    need(a.questions, "--questions", a.stage);
    const auto qs = read_questions_file(a.questions);
    std::vector<Question> kept;
    for (const auto& q : qs) {
      auto v = filter_question(q, *backend, *prompts, bc);
      audit.add({a.stage, q.id, v.keep ? "keep" : "drop", {}, std::move(v.exchange)});
      if (v.keep) kept.push_back(q);
    }
    write_questions_file(a.out, kept);
    out << fmt::format("{} of {} questions kept\n", kept.size(), qs.size());
  } else if (a.stage == "grade") {
    need(a.questions, "--questions", a.stage);
    need(a.answers, "--answers", a.stage);
    std::map<std::string, char> answers;
    const auto answer_json = json::parse(read_file(a.answers));
    for (const auto& [id, v] : answer_json.items()) {
      const auto s = v.get<std::string>();
      if (s.size() != 1) throw UsageError("answer for " + id + " must be one letter");
      answers[id] = s[0];
    }
    const auto g = grade_single_choice(answers, read_questions_file(a.questions));
    json j{{"overall", {{"correct", g.overall.correct}, {"total", g.overall.total},
                        {"percent", g.overall.percent()}}},
           {"per_category", json::object()}};
    for (const auto& [cat, cell] : g.per_category) {
      j["per_category"][std::string(to_string(cat))] = {
          {"correct", cell.correct}, {"total", cell.total}, {"percent", cell.percent()}};
      out << fmt::format("{:<10} {:>6}% ({}/{})\n", to_string(cat), cell.percent(), cell.correct,
                         cell.total);
    }
    out << fmt::format("{:<10} {:>6}% ({}/{})\n", "Total", g.overall.percent(), g.overall.correct,
                       g.overall.total);
    write_file(a.out, j.dump(2) + "\n");
  } else if (a.stage == "judge-open-ended") {
    need(a.questions, "--questions", a.stage);
    need(a.answers, "--answers", a.stage);
    const auto answers = json::parse(read_file(a.answers));
    json verdicts = json::object();
    std::size_t correct = 0, total = 0;
    for (const auto& q : read_questions_file(a.questions)) {
      if (q.kind != QuestionKind::OpenEnded || !answers.contains(q.id)) continue;
      const auto v = judge_open_ended(q, q.reference_answer, answers[q.id].get<std::string>(),
                                      *backend, *prompts, bc);
      verdicts[q.id] = to_string(v);
      ++total;
      if (v == Verdict::Correct) ++correct;
    }
    write_file(a.out, verdicts.dump(2) + "\n");
    out << fmt::format("{} of {} correct ({}%)\n", correct, total, format_percent(correct, total));
  }
  if (!a.audit.empty()) audit.write(a.audit);
  return exit_code::kSuccess;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Agent and toolkit for solving CTF challenges with retrieved knowledge"};
  app.name("ctfagent");
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  BuildKbArgs kb;
  auto* build = app.add_subcommand("build-kb", "Build a knowledge store from trunks and snippets");
  build->add_option("--trunks", kb.trunks, "Trunks file (JSON lines)")->required();
  build->add_option("--snippets", kb.snippets, "Snippets file (JSON lines)");
  build->add_option("--out", kb.out, "Store file to write")->required();
  build->add_option("--dim", kb.dim, "Embedding dimension");
  build->add_flag("--force", kb.force, "Overwrite an existing store");

  Flags solve_flags;
  std::string manifest, solve_id;
  auto* solve = app.add_subcommand("solve", "Solve one challenge");
  solve->add_option("manifest", manifest, "Challenge manifest")->required();
  solve->add_option("--id", solve_id, "Challenge id when the manifest holds several");
  add_run_flags(solve, solve_flags);

  Flags campaign_flags;
  std::string dataset, judge_spec;
  auto* campaign = app.add_subcommand("campaign", "Solve every challenge of a dataset");
  campaign->add_option("dataset", dataset, "Dataset manifest")->required();
  campaign->add_option("--parallelism", campaign_flags.parallelism, "Concurrent solves");
  campaign->add_option("--repeats", campaign_flags.repeats, "Runs per challenge");
  campaign->add_option("--judge", judge_spec, "Partial-credit judge: scripted:<path> or http");
  add_run_flags(campaign, campaign_flags);

  std::string report_path, report_format = "text";
  auto* report = app.add_subcommand("report", "Render a campaign report");
  report->add_option("report", report_path, "report.json")->required();
  report->add_option("--format", report_format, "text, json or csv");

  PipelineArgs pa;
  auto* pipe = app.add_subcommand("pipeline", "Run one knowledge pipeline stage");
  pipe->add_option("stage", pa.stage, "Stage: " + text::join(stage_names(), ", "))->required();
  pipe->add_option("--writeups", pa.writeups, "Directory of write-ups");
  pipe->add_option("--accepted", pa.accepted, "filter-writeups output restricting the docs");
  pipe->add_option("--trunks", pa.trunks, "Trunks file");
  pipe->add_option("--questions", pa.questions, "Questions file");
  pipe->add_option("--answers", pa.answers, "Answers JSON (id -> label or text)");
  pipe->add_option("--backend", pa.backend, "scripted:<path> or http");
  pipe->add_option("--out", pa.out, "Output file");
  pipe->add_option("--audit", pa.audit, "Audit log to write (JSON lines)");
  pipe->add_option("--assets", pa.assets, "Prompt assets directory");
  pipe->add_option("--seed", pa.seed, "Seed for answer labels");
  pipe->add_flag("--force", pa.force, "Overwrite an existing output");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kSuccess : exit_code::kUsage;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("ctfagent", sink);
  logger->set_pattern("[%l] %v");
  logger->set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  const auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> prev;
    ~Restore() { spdlog::set_default_logger(prev); }
  } restore{previous};

  try {
    if (*build) return cmd_build_kb(kb, out);
    if (*solve) return cmd_solve(solve_flags, manifest, solve_id, out, err);
    if (*campaign) return cmd_campaign(campaign_flags, dataset, judge_spec, out, err);
    if (*report) return cmd_report(report_path, report_format, out);
    if (*pipe) return cmd_pipeline(pa, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const EnvironmentError& e) {
    err << "environment error: " << e.what() << '\n';
    return exit_code::kEnvironment;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kEnvironment;
  }
  return exit_code::kUsage;
}

}  // namespace ctfagent
