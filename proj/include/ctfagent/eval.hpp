#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctfagent/agent.hpp"
#include "ctfagent/challenge.hpp"
#include "ctfagent/environment.hpp"
#include "ctfagent/llm_backend.hpp"

namespace ctfagent {

/// A manifest holding {"challenges": [...]} (inline objects or paths to manifests), or a
/// single challenge object. Throws ValidationError naming the field, LoadError on bad JSON.
std::vector<Challenge> load_dataset(const std::filesystem::path& manifest_path);

using BackendFactory = std::function<std::unique_ptr<ChatBackend>(const Challenge&)>;

/// Replays `<dir>/<challenge id>.jsonl` for each challenge.
BackendFactory scripted_backend_factory(std::filesystem::path script_dir);

/// Everything a single solve needs besides the challenge and its backend.
struct SolveSetup {
  const Agent* agent = nullptr;
  std::vector<ToolHint> hints;
  std::optional<std::string> decompiler_command;  // {input} template; sidecar files otherwise
  std::string disassemble_template{kDefaultDisassembleTemplate};
  EnvironmentConfig env_config{};
  BackendConfig backend_config{};
  SolveConfig solve_config{};
  std::filesystem::path out_dir;  // sandboxes/ and transcripts/ are created below it
};

struct SolveRun {
  AgentTranscript transcript;
  std::filesystem::path transcript_path;
  bool setup_failed = false;
};

/// Copies the challenge files into a fresh sandbox, launches the service if any, runs the
/// solve and writes the transcript. Setup failures come back as a SetupError outcome.
SolveRun run_challenge(const Challenge& challenge, const SolveSetup& setup,
                       const BackendFactory& make_backend, int run_index = 0);

struct PartialVerdict {
  bool identified = false;
  std::string method;  // "tag" or "judge"
};

/// True iff an assistant message mentions a vulnerability tag (case-insensitive), or the
/// optional judge answers YES on its last line.
PartialVerdict classify_partial(const AgentTranscript& transcript, const Challenge& challenge,
                                ChatBackend* judge = nullptr, const std::string& judge_prompt = {},
                                const BackendConfig& judge_config = {});

struct ReportRow {
  std::string challenge_id;
  std::string name;
  Category category = Category::Misc;
  int points = 0;
  OutcomeKind outcome = OutcomeKind::Failed;
  std::optional<FailureReason> failure_reason;
  int rounds_used = 0;
  bool partial_understanding = false;
  std::string partial_method;
  std::string transcript;

  bool solved() const noexcept { return outcome == OutcomeKind::Solved; }
  bool identified() const noexcept { return solved() || partial_understanding; }
};

struct CategoryAggregate {
  int solved = 0;
  int partial = 0;  // identified the vulnerability without the flag
  int total = 0;
};

struct CampaignReport {
  std::vector<ReportRow> rows;
  std::map<Category, CategoryAggregate> per_category;
  std::map<FailureReason, int> failure_counts;
  int total_failed = 0;
  int total_points = 0;
  std::vector<int> solved_per_run;  // one entry per repeat
};

/// Recomputes aggregates, failure counts and points from the rows.
void finalize_report(CampaignReport& report);

struct CampaignOptions {
  std::size_t parallelism = 1;
  int repeats = 1;
  ChatBackend* judge = nullptr;  // shared; must tolerate concurrent calls
  std::string judge_prompt;
};

/// One solve per challenge on a worker pool. Rows keep the dataset order; with repeats the
/// rows describe the first run and solved_per_run records every run.
CampaignReport run_campaign(const std::vector<Challenge>& challenges, const SolveSetup& setup,
                            const BackendFactory& make_backend, const CampaignOptions& options);

struct RoundsCdf {
  std::vector<std::pair<int, double>> points;  // (r, fraction of solves with rounds <= r)
  double mean = 0.0;
};

RoundsCdf rounds_cdf(std::vector<int> solved_rounds);
RoundsCdf rounds_cdf(const CampaignReport& report);

struct FailureRow {
  FailureReason reason;
  int count = 0;
  std::string percent;  // of total failed, two decimals
};

/// GiveUp, MaxRounds and ContextExceeded always appear when anything failed; BackendError
/// and SetupError only when nonzero. Empty when nothing failed.
std::vector<FailureRow> failure_breakdown(const std::map<FailureReason, int>& counts,
                                          int total_failed);
std::vector<FailureRow> failure_breakdown(const CampaignReport& report);

/// Sum of points over solved rows.
int score(const CampaignReport& report);
int score(const std::vector<ReportRow>& rows, const std::map<std::string, int>& points);

/// points / max_points; DomainError unless 0 <= points <= max_points and max_points > 0.
double difficulty(double points, double max_points);

nlohmann::json report_to_json(const CampaignReport& report);
/// Rows are optional: a report may carry only failure_counts and total_failed.
CampaignReport report_from_json(const nlohmann::json& j);
std::string report_to_csv(const CampaignReport& report);
std::string render_report(const CampaignReport& report);

}  // namespace ctfagent
