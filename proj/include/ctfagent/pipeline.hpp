#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctfagent/common.hpp"
#include "ctfagent/knowledge_store.hpp"
#include "ctfagent/llm_backend.hpp"

namespace ctfagent {

struct WriteupDoc {
  std::string id;
  std::string source_competition;
  int year = 0;
  Category category = Category::Misc;
  std::optional<int> challenge_points;
  std::optional<int> max_points;
  std::string body;
  std::size_t line_count = 0;  // always text::count_lines(body)
};

WriteupDoc make_writeup(std::string id, std::string body);

/// Every `<stem>.md` in `dir` (sorted by name) with its `<stem>.json` metadata:
/// {"competition", "year", "category", "points"?, "max_points"?}.
std::vector<WriteupDoc> load_writeups(const std::filesystem::path& dir);

inline constexpr std::size_t kMinWriteupLines = 30;

/// "min-lines", "media" (image markup or an http(s) URL outside code fences) and
/// "no-description" (no heading mentioning Challenge Description). Empty means accepted.
std::vector<std::string> writeup_rejection_reasons(const WriteupDoc& doc);

struct WriteupRejection {
  std::string doc_id;
  std::vector<std::string> reasons;
};

struct WriteupFilterResult {
  std::vector<WriteupDoc> accepted;
  std::vector<WriteupRejection> rejected;
};

WriteupFilterResult filter_writeups(const std::vector<WriteupDoc>& docs);

/// Prompt assets for every stage, loaded from <assets>/prompts.
struct PipelinePrompts {
  std::string knowledge_extraction;
  std::string knowledge_extraction_example;
  std::string knowledge_filtering;
  std::string snippet_extraction;
  std::string question_generation;
  std::string question_generation_example;
  std::string question_filtering;
  std::string open_ended_evaluation;

  static PipelinePrompts load(const std::filesystem::path& assets_dir);
};

inline constexpr std::size_t kMaxTrunksPerWriteup = 2;

/// Splits an extractor reply into trunks. Each point starts with a "CTF Scenario:" label
/// (numbering, bullets and bold markers tolerated) followed by "Exploit Method:" and an
/// optional "Example Payload:". Points beyond the second are dropped.
std::vector<KnowledgeTrunk> parse_knowledge_reply(std::string_view reply, const WriteupDoc& doc);

std::vector<KnowledgeTrunk> extract_knowledge(const WriteupDoc& doc, ChatBackend& extractor,
                                              const PipelinePrompts& prompts,
                                              const BackendConfig& config = {});

struct KnowledgeVerdict {
  bool keep = false;
  int score = 0;
  std::vector<ChatMessage> exchange;
};

/// Integer 1..5 on the last non-empty line, if any.
std::optional<int> parse_score_line(std::string_view reply);

/// Keeps the trunk iff the judge scores it 5. A malformed reply gets one re-ask, then
/// JudgingError.
KnowledgeVerdict filter_knowledge(const WriteupDoc& doc, const KnowledgeTrunk& trunk,
                                  ChatBackend& judge, const PipelinePrompts& prompts,
                                  const BackendConfig& config = {});

/// The reply with any surrounding code fence removed.
std::string extract_snippet(const WriteupDoc& doc, ChatBackend& extractor,
                            const PipelinePrompts& prompts, const BackendConfig& config = {});

enum class QuestionKind { SingleChoice, OpenEnded };

std::string_view to_string(QuestionKind k);

struct QuestionOption {
  char label = 'A';
  std::string text;
  friend bool operator==(const QuestionOption&, const QuestionOption&) = default;
};

struct Question {
  std::string id;
  QuestionKind kind = QuestionKind::SingleChoice;
  std::string stem;
  std::vector<QuestionOption> options;
  std::optional<char> answer_label;
  std::string reference_answer;
  Category category = Category::Misc;
  std::string source_trunk_id;
  std::optional<double> difficulty;

  friend bool operator==(const Question&, const Question&) = default;
};

void to_json(nlohmann::json& j, const Question& q);
void from_json(const nlohmann::json& j, Question& q);

/// Throws ValidationError when the kind-specific invariants do not hold.
void validate_question(const Question& q);

std::vector<Question> read_questions_file(const std::filesystem::path& path);
void write_questions_file(const std::filesystem::path& path, const std::vector<Question>& qs);

struct ParsedQuestion {
  std::string stem;
  std::vector<std::string> options;  // in A..D order
  int correct = 0;                   // index into options
};

/// Numbered questions ("1.", "2.") with options A-D and an "Answer: X" line. Anything
/// other than exactly four options throws GenerationError.
std::vector<ParsedQuestion> parse_question_reply(std::string_view reply);

/// Label for the correct option, drawn from mt19937_64 seeded with (seed, fnv1a64(id)).
char assign_answer_label(std::uint64_t seed, std::string_view question_id);

inline constexpr std::uint64_t kDefaultSeed = 20240917;

/// One single-choice question per trunk, id "<trunk id>-q". The correct option is moved to
/// the seeded label; the distractors keep their relative order.
std::vector<Question> generate_questions(const WriteupDoc& doc,
                                         const std::vector<KnowledgeTrunk>& trunks,
                                         ChatBackend& generator, const PipelinePrompts& prompts,
                                         std::uint64_t seed, const BackendConfig& config = {});

/// Rewrites "which of the following"/"which of the below" to "what", drops the options,
/// strips leftover "X)" labels and keeps the correct option as the reference answer.
Question derive_open_ended(const Question& q);

struct QuestionVerdict {
  bool keep = false;
  std::vector<ChatMessage> exchange;
};

/// Keeps the question iff the judge's last line is CORRECT. One re-ask on other replies.
QuestionVerdict filter_question(const Question& q, ChatBackend& judge,
                                const PipelinePrompts& prompts, const BackendConfig& config = {});

struct AccuracyCell {
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  std::string percent() const { return format_percent(correct, total); }
};

struct GradeReport {
  std::map<Category, AccuracyCell> per_category;
  AccuracyCell overall;
};

/// Accuracy over every single-choice question; unanswered questions count as wrong.
/// An answer for an unknown or open-ended id throws GradingError.
GradeReport grade_single_choice(const std::map<std::string, char>& answers,
                                const std::vector<Question>& questions);

enum class Verdict { Correct, Incorrect };

std::string_view to_string(Verdict v);

/// Case and punctuation tolerant: "Correct." is correct. One re-ask, then JudgingError.
Verdict judge_open_ended(const Question& question, std::string_view reference_answer,
                         std::string_view candidate, ChatBackend& judge,
                         const PipelinePrompts& prompts, const BackendConfig& config = {});

struct AuditEntry {
  std::string stage;
  std::string item_id;
  std::string action;  // "keep", "drop" or "error"
  std::string reason;
  std::vector<ChatMessage> exchange;
};

class AuditLog {
 public:
  void add(AuditEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<AuditEntry>& entries() const noexcept { return entries_; }
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<AuditEntry> entries_;
};

struct Funnel {
  std::size_t writeups = 0;
  std::size_t writeups_accepted = 0;
  std::size_t trunks_extracted = 0;
  std::size_t trunks_kept = 0;
  std::size_t single_choice = 0;
  std::size_t open_ended = 0;
  std::size_t single_choice_kept = 0;
};

nlohmann::json funnel_to_json(const Funnel& f);

/// Backends per stage; the same object may serve several stages.
struct PipelineBackends {
  ChatBackend* extractor = nullptr;
  ChatBackend* knowledge_judge = nullptr;
  ChatBackend* snippet_extractor = nullptr;  // optional
  ChatBackend* generator = nullptr;
  ChatBackend* question_judge = nullptr;
};

struct PipelineResult {
  std::vector<WriteupDoc> accepted;
  std::vector<KnowledgeTrunk> extracted;
  std::vector<KnowledgeTrunk> kept;
  std::map<std::string, std::string> snippets;  // trunk id -> code
  std::vector<Question> single_choice;
  std::vector<Question> open_ended;
  std::vector<Question> single_choice_kept;
  AuditLog audit;
  Funnel funnel;
};

/// Runs every stage in order over the corpus. Per-document failures are logged in the
/// audit and the document is skipped.
PipelineResult run_pipeline(const std::vector<WriteupDoc>& docs, const PipelineBackends& backends,
                            const PipelinePrompts& prompts, std::uint64_t seed,
                            const BackendConfig& config = {});

}  // namespace ctfagent
