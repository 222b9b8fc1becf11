#include "ctfagent/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <random>
#include <regex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ctfagent/errors.hpp"
#include "ctfagent/eval.hpp"
#include "ctfagent/prompts.hpp"

namespace ctfagent {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_fence(std::string_view line) {
  const auto t = text::trim(line);
  return t.rfind("```", 0) == 0 || t.rfind("~~~", 0) == 0;
}

std::string strip_fences(std::string_view s) {
  std::string out;
  for (const auto& line : text::split_lines(s))
    if (!is_fence(line)) out += line + '\n';
  return text::trim(out);
}

// Sends the history, asks once more on a reply `parse` rejects, then gives up with
// `fail`, which throws.
template <typename T, typename Fail>
T ask_with_reask(ChatBackend& backend, const BackendConfig& config, std::vector<ChatMessage>& history,
                 const std::function<std::optional<T>(const std::string&)>& parse,
                 std::string_view reminder, Fail fail) {
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto reply = backend.complete(config, history, {});
    reply.role = Role::Assistant;
    history.push_back(reply);
    last = reply.content;
    if (auto v = parse(reply.content)) return *v;
    if (attempt == 0) history.push_back({Role::User, std::string(reminder), std::nullopt});
  }
  fail(last);
  throw JudgingError("no usable judge reply");
}

std::string last_line(std::string_view reply) {
  const auto lines = text::split_lines(text::trim(reply));
  return lines.empty() ? std::string() : text::trim(lines.back());
}

std::string letters_only(std::string_view s) {
  std::string out;
  for (char ch : s)
    if (std::isalpha(static_cast<unsigned char>(ch)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

// Text after `label` when the line opens with it, tolerating numbering, bullets, heading
// marks and bold markers around the label.
std::optional<std::string> label_rest(std::string_view line, std::string_view label) {
  static const std::regex kLead(R"(^\s*(?:\d+[.)]\s*|[-*#>]+\s+)?(?:\*\*|__)?)");
  const std::string s(line);
  std::smatch m;
  std::string_view rest = s;
  if (std::regex_search(s, m, kLead)) rest.remove_prefix(static_cast<std::size_t>(m.length(0)));
  if (!text::istarts_with(rest, label)) return std::nullopt;
  rest.remove_prefix(label.size());
  auto skip = [&](std::string_view tok) {
    if (rest.substr(0, tok.size()) == tok) rest.remove_prefix(tok.size());
  };
  skip("**");
  skip("__");
  if (rest.empty() || rest.front() != ':') return std::nullopt;
  rest.remove_prefix(1);
  skip("**");
  skip("__");
  return text::trim(rest);
}

std::string format_question_text(const Question& q) {
  std::string out = q.stem + '\n';
  for (const auto& o : q.options) out += fmt::format("{}) {}\n", o.label, o.text);
  if (q.answer_label)
    out += fmt::format("Answer: {}", *q.answer_label);
  else
    out += "Reference answer: " + q.reference_answer;
  return out;
}

}  // namespace

WriteupDoc make_writeup(std::string id, std::string body) {
  WriteupDoc d;
  d.id = std::move(id);
  d.line_count = text::count_lines(body);
  d.body = std::move(body);
  return d;
}

std::vector<WriteupDoc> load_writeups(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError(dir, 0, "not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".md") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<WriteupDoc> out;
  for (const auto& md : files) {
    auto doc = make_writeup(md.stem().string(), read_file(md));
    auto meta_path = md;
    meta_path.replace_extension(".json");
    if (!fs::exists(meta_path)) throw LoadError(meta_path, 0, "missing metadata file");
    try {
      const auto meta = json::parse(read_file(meta_path));
      doc.source_competition = meta.at("competition").get<std::string>();
      doc.year = meta.at("year").get<int>();
      const auto cat = parse_category(meta.at("category").get<std::string>());
      if (!cat) throw ValidationError("category", "unknown category");
      doc.category = *cat;
      if (meta.contains("points") && !meta["points"].is_null())
        doc.challenge_points = meta["points"].get<int>();
      if (meta.contains("max_points") && !meta["max_points"].is_null())
        doc.max_points = meta["max_points"].get<int>();
    } catch (const json::exception& e) {
      throw LoadError(meta_path, 0, e.what());
    } catch (const ValidationError& e) {
      throw LoadError(meta_path, 0, e.what());
    }
    out.push_back(std::move(doc));
  }
  return out;
}

std::vector<std::string> writeup_rejection_reasons(const WriteupDoc& doc) {
  std::vector<std::string> reasons;
  if (doc.line_count < kMinWriteupLines) reasons.push_back("min-lines");

  bool in_fence = false;
  bool media = false;
  bool description = false;
  for (const auto& line : text::split_lines(doc.body)) {
    if (is_fence(line)) {
      in_fence = !in_fence;
      continue;
    }
    if (in_fence) continue;
    if (line.find("![") != std::string::npos || text::icontains(line, "<img") ||
        text::icontains(line, "http://") || text::icontains(line, "https://"))
      media = true;
    const auto t = text::trim(line);
    if (!t.empty() && t.front() == '#' && text::icontains(t, "challenge description"))
      description = true;
  }
  if (media) reasons.push_back("media");
  if (!description) reasons.push_back("no-description");
  return reasons;
}

WriteupFilterResult filter_writeups(const std::vector<WriteupDoc>& docs) {
  WriteupFilterResult r;
  for (const auto& d : docs) {
    auto reasons = writeup_rejection_reasons(d);
    if (reasons.empty())
      r.accepted.push_back(d);
    else
      r.rejected.push_back({d.id, std::move(reasons)});
  }
  return r;
}

PipelinePrompts PipelinePrompts::load(const fs::path& assets_dir) {
  return {load_prompt(assets_dir, prompt::kKnowledgeExtraction),
          load_prompt(assets_dir, prompt::kKnowledgeExtractionExample),
          load_prompt(assets_dir, prompt::kKnowledgeFiltering),
          load_prompt(assets_dir, prompt::kSnippetExtraction),
          load_prompt(assets_dir, prompt::kQuestionGeneration),
          load_prompt(assets_dir, prompt::kQuestionGenerationExample),
          load_prompt(assets_dir, prompt::kQuestionFiltering),
          load_prompt(assets_dir, prompt::kOpenEndedEvaluation)};
}

std::vector<KnowledgeTrunk> parse_knowledge_reply(std::string_view reply, const WriteupDoc& doc) {
  struct Segment {
    std::string scenario, method, payload;
    bool has_method = false;
  };
  enum class Field { None, Scenario, Method, Payload };
  std::vector<Segment> segs;
  Field field = Field::None;
  auto append = [](std::string& dst, const std::string& line) {
    if (!dst.empty()) dst += '\n';
    dst += line;
  };
  for (const auto& line : text::split_lines(reply)) {
    if (auto rest = label_rest(line, "CTF Scenario")) {
      segs.push_back({});
      segs.back().scenario = *rest;
      field = Field::Scenario;
    } else if (segs.empty()) {
      continue;
    } else if (auto rest = label_rest(line, "Exploit Method")) {
      segs.back().method = *rest;
      segs.back().has_method = true;
      field = Field::Method;
    } else if (auto rest = label_rest(line, "Example Payload")) {
      segs.back().payload = *rest;
      field = Field::Payload;
    } else {
      auto& s = segs.back();
      switch (field) {
        case Field::Scenario: append(s.scenario, line); break;
        case Field::Method: append(s.method, line); break;
        case Field::Payload: s.payload += (s.payload.empty() ? "" : "\n") + line; break;
        case Field::None: break;
      }
    }
  }
  if (segs.empty()) throw ExtractionError(doc.id + ": reply has no \"CTF Scenario:\" point");
  if (segs.size() > kMaxTrunksPerWriteup) segs.resize(kMaxTrunksPerWriteup);

  std::vector<KnowledgeTrunk> out;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    KnowledgeTrunk t;
    t.id = fmt::format("{}-k{}", doc.id, i + 1);
    t.scenario = text::trim(s.scenario);
    t.exploit_method = text::trim(s.method);
    t.example_payload = strip_fences(s.payload);
    t.category = doc.category;
    t.source_writeup_id = doc.id;
    if (t.scenario.empty() || !s.has_method || t.exploit_method.empty())
      throw ExtractionError(fmt::format("{}: point {} lacks a scenario or exploit method", doc.id,
                                        i + 1));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<KnowledgeTrunk> extract_knowledge(const WriteupDoc& doc, ChatBackend& extractor,
                                              const PipelinePrompts& prompts,
                                              const BackendConfig& config) {
  const std::vector<ChatMessage> history{
      {Role::System,
       text::replace_all(prompts.knowledge_extraction, "{example}",
                         prompts.knowledge_extraction_example),
       std::nullopt},
      {Role::User, doc.body, std::nullopt}};
  const auto reply = extractor.complete(config, history, {});
  return parse_knowledge_reply(reply.content, doc);
}

std::optional<int> parse_score_line(std::string_view reply) {
  auto line = last_line(reply);
  while (!line.empty() && (line.back() == '.' || line.back() == '*')) line.pop_back();
  while (!line.empty() && line.front() == '*') line.erase(0, 1);
  if (line.size() != 1 || line[0] < '1' || line[0] > '5') return std::nullopt;
  return line[0] - '0';
}

KnowledgeVerdict filter_knowledge(const WriteupDoc& doc, const KnowledgeTrunk& trunk,
                                  ChatBackend& judge, const PipelinePrompts& prompts,
                                  const BackendConfig& config) {
  std::string prompt = text::replace_all(prompts.knowledge_filtering, "{writeup}", doc.body);
  prompt = text::replace_all(prompt, "{note}", trunk.text());
  KnowledgeVerdict v;
  v.exchange = {{Role::System, prompt, std::nullopt},
                {Role::User, "Score the note.", std::nullopt}};
  v.score = ask_with_reask<int>(
      judge, config, v.exchange, [](const std::string& r) { return parse_score_line(r); },
      "The last line must be a single integer from 1 to 5.",
      [&](const std::string& last) {
        throw JudgingError(fmt::format("{}: judge reply has no 1-5 score on its last line: '{}'",
                                        trunk.id, last_line(last)));
      });
  v.keep = v.score == 5;
  return v;
}

std::string extract_snippet(const WriteupDoc& doc, ChatBackend& extractor,
                            const PipelinePrompts& prompts, const BackendConfig& config) {
  const std::vector<ChatMessage> history{{Role::System, prompts.snippet_extraction, std::nullopt},
                                         {Role::User, doc.body, std::nullopt}};
  auto code = strip_fences(extractor.complete(config, history, {}).content);
  if (code.empty()) throw ExtractionError(doc.id + ": empty code snippet");
  return code;
}

std::string_view to_string(QuestionKind k) {
  return k == QuestionKind::SingleChoice ? "single_choice" : "open_ended";
}

void to_json(json& j, const Question& q) {
  json opts = json::array();
  for (const auto& o : q.options) opts.push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
  j = json{{"id", q.id},
           {"kind", to_string(q.kind)},
           {"stem", q.stem},
           {"options", std::move(opts)},
           {"answer_label", q.answer_label ? json(std::string(1, *q.answer_label)) : json(nullptr)},
           {"reference_answer", q.reference_answer},
           {"category", to_string(q.category)},
           {"source_trunk_id", q.source_trunk_id},
           {"difficulty", q.difficulty ? json(*q.difficulty) : json(nullptr)}};
}

void from_json(const json& j, Question& q) {
  q.id = j.at("id").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "single_choice")
    q.kind = QuestionKind::SingleChoice;
  else if (kind == "open_ended")
    q.kind = QuestionKind::OpenEnded;
  else
    throw ValidationError("kind", "unknown question kind '" + kind + "'");
  q.stem = j.at("stem").get<std::string>();
  q.options.clear();
  for (const auto& o : j.value("options", json::array())) {
    const auto label = o.at("label").get<std::string>();
    if (label.size() != 1) throw ValidationError("options.label", "expected one letter");
    q.options.push_back({label[0], o.at("text").get<std::string>()});
  }
  q.answer_label.reset();
  if (j.contains("answer_label") && j["answer_label"].is_string()) {
    const auto a = j["answer_label"].get<std::string>();
    if (a.size() != 1) throw ValidationError("answer_label", "expected one letter");
    q.answer_label = a[0];
  }
  q.reference_answer = j.value("reference_answer", "");
  const auto cat = parse_category(j.at("category").get<std::string>());
  if (!cat) throw ValidationError("category", "unknown category");
  q.category = *cat;
  q.source_trunk_id = j.value("source_trunk_id", "");
  q.difficulty.reset();
  if (j.contains("difficulty") && j["difficulty"].is_number()) q.difficulty = j["difficulty"].get<double>();
}

void validate_question(const Question& q) {
  if (q.kind == QuestionKind::SingleChoice) {
    if (q.options.size() != 4) throw ValidationError("options", "single-choice needs 4 options");
    for (std::size_t i = 0; i < 4; ++i)
      if (q.options[i].label != static_cast<char>('A' + i))
        throw ValidationError("options", "labels must be A, B, C, D in order");
    if (!q.answer_label || *q.answer_label < 'A' || *q.answer_label > 'D')
      throw ValidationError("answer_label", "single-choice needs an answer among A-D");
  } else {
    if (!q.options.empty()) throw ValidationError("options", "open-ended has no options");
    if (q.answer_label) throw ValidationError("answer_label", "open-ended has no answer label");
    for (const char* l : {"A)", "B)", "C)", "D)"})
      if (q.stem.find(l) != std::string::npos)
        throw ValidationError("stem", fmt::format("open-ended stem contains '{}'", l));
  }
  if (q.difficulty && (*q.difficulty < 0.0 || *q.difficulty > 1.0))
    throw ValidationError("difficulty", "outside [0, 1]");
}

std::vector<Question> read_questions_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "cannot open questions file");
  std::vector<Question> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    try {
      auto q = json::parse(line).get<Question>();
      validate_question(q);
      out.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw LoadError(path, n, e.what());
    } catch (const ValidationError& e) {
      throw LoadError(path, n, e.what());
    }
  }
  return out;
}

void write_questions_file(const fs::path& path, const std::vector<Question>& qs) {
  std::string out;
  for (const auto& q : qs) out += json(q).dump() + '\n';
  write_file(path, out);
}

std::vector<ParsedQuestion> parse_question_reply(std::string_view reply) {
  static const std::regex kNumber(R"(^\s*(?:\*\*)?\d+[.)]\s*(.*)$)");
  static const std::regex kOption(R"(^\s*(?:\*\*)?\(?([A-Da-d])[).:](?:\*\*)?\s+(.*)$)");
  static const std::regex kAnswer(
      R"(^\s*(?:\*\*)?(?:correct\s+)?answer(?:\*\*)?\s*[:：]\s*(?:\*\*)?\s*\(?([A-Da-d])\b.*$)",
      std::regex::icase);

  struct Draft {
    std::string stem;
    std::vector<std::pair<char, std::string>> options;
    std::optional<char> answer;
  };
  std::vector<Draft> drafts;
  bool in_options = false;
  for (const auto& line : text::split_lines(reply)) {
    std::smatch m;
    if (!drafts.empty() && std::regex_match(line, m, kAnswer)) {
      drafts.back().answer = static_cast<char>(std::toupper(m[1].str()[0]));
      in_options = false;
    } else if (!drafts.empty() && std::regex_match(line, m, kOption) &&
               (in_options || drafts.back().options.empty())) {
      drafts.back().options.emplace_back(static_cast<char>(std::toupper(m[1].str()[0])),
                                         text::trim(m[2].str()));
      in_options = true;
    } else if ((drafts.empty() || drafts.back().answer || !in_options) &&
               std::regex_match(line, m, kNumber) &&
               (drafts.empty() || drafts.back().answer)) {
      drafts.push_back({text::trim(m[1].str()), {}, std::nullopt});
      in_options = false;
    } else if (!drafts.empty()) {
      auto& d = drafts.back();
      if (text::trim(line).empty()) continue;
      if (in_options)
        d.options.back().second += "\n" + line;
      else if (!d.answer)
        d.stem += (d.stem.empty() ? "" : "\n") + line;
    }
  }
  if (drafts.empty()) throw GenerationError("reply contains no numbered question");
  std::vector<ParsedQuestion> out;
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const auto& d = drafts[i];
    if (d.options.size() != 4)
      throw GenerationError(fmt::format("question {} has {} options, expected 4", i + 1,
                                        d.options.size()));
    ParsedQuestion pq;
    pq.stem = text::trim(d.stem);
    for (std::size_t k = 0; k < 4; ++k) {
      if (d.options[k].first != static_cast<char>('A' + k))
        throw GenerationError(fmt::format("question {} options are not labelled A-D", i + 1));
      pq.options.push_back(text::trim(d.options[k].second));
    }
    if (!d.answer) throw GenerationError(fmt::format("question {} has no Answer line", i + 1));
    pq.correct = *d.answer - 'A';
    if (pq.stem.empty()) throw GenerationError(fmt::format("question {} has an empty stem", i + 1));
    out.push_back(std::move(pq));
  }
  return out;
}

char assign_answer_label(std::uint64_t seed, std::string_view question_id) {
  const auto h = fnv1a64(question_id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  return static_cast<char>('A' + rng() % 4);
}

std::vector<Question> generate_questions(const WriteupDoc& doc,
                                         const std::vector<KnowledgeTrunk>& trunks,
                                         ChatBackend& generator, const PipelinePrompts& prompts,
                                         std::uint64_t seed, const BackendConfig& config) {
  if (trunks.empty()) return {};
  std::string user = "# Write-up\n" + doc.body + "\n\n# Knowledge points\n";
  for (std::size_t i = 0; i < trunks.size(); ++i)
    user += fmt::format("{}. {}\n", i + 1, trunks[i].text());
  const std::vector<ChatMessage> history{
      {Role::System,
       text::replace_all(prompts.question_generation, "{example}",
                         prompts.question_generation_example),
       std::nullopt},
      {Role::User, user, std::nullopt}};
  const auto parsed = parse_question_reply(generator.complete(config, history, {}).content);
  if (parsed.size() < trunks.size())
    throw GenerationError(fmt::format("{}: {} question(s) for {} knowledge point(s)", doc.id,
                                      parsed.size(), trunks.size()));

  std::optional<double> diff;
  if (doc.challenge_points && doc.max_points && *doc.max_points > 0)
    diff = difficulty(*doc.challenge_points, *doc.max_points);

  std::vector<Question> out;
  for (std::size_t i = 0; i < trunks.size(); ++i) {
    const auto& pq = parsed[i];
    Question q;
    q.id = trunks[i].id + "-q";
    q.kind = QuestionKind::SingleChoice;
    q.stem = pq.stem;
    q.category = trunks[i].category;
    q.source_trunk_id = trunks[i].id;
    q.difficulty = diff;
    const char label = assign_answer_label(seed, q.id);
    std::vector<std::string> others;
    for (int k = 0; k < 4; ++k)
      if (k != pq.correct) others.push_back(pq.options[static_cast<std::size_t>(k)]);
    std::size_t next = 0;
    for (int k = 0; k < 4; ++k) {
      const char l = static_cast<char>('A' + k);
      q.options.push_back({l, l == label ? pq.options[static_cast<std::size_t>(pq.correct)]
                                         : others[next++]});
    }
    q.answer_label = label;
    q.reference_answer = pq.options[static_cast<std::size_t>(pq.correct)];
    validate_question(q);
    out.push_back(std::move(q));
  }
  return out;
}

Question derive_open_ended(const Question& q) {
  std::string stem = q.stem;
  for (std::string_view phrase : {"which of the following", "which of the below"}) {
    for (auto pos = text::ifind(stem, phrase); pos != std::string::npos;
         pos = text::ifind(stem, phrase, pos)) {
      const bool upper = std::isupper(static_cast<unsigned char>(stem[pos]));
      stem.replace(pos, phrase.size(), upper ? "What" : "what");
      pos += 4;
    }
  }
  // drop option lines that leaked into the stem
  static const std::regex kOptionLine(R"(^\s*\(?[A-D][).:]\s.*$)");
  std::string kept;
  for (const auto& line : text::split_lines(stem))
    if (!std::regex_match(line, kOptionLine)) kept += line + '\n';
  stem = text::trim(kept);
  // "(X)" -> "X", then any remaining "X)" -> "X"
  std::string out;
  for (std::size_t i = 0; i < stem.size(); ++i) {
    const char c = stem[i];
    if (c == '(' && i + 2 < stem.size() && stem[i + 1] >= 'A' && stem[i + 1] <= 'D' &&
        stem[i + 2] == ')')
      continue;
    if (c == ')' && !out.empty() && out.back() >= 'A' && out.back() <= 'D') continue;
    out += c;
  }

  Question o;
  o.id = q.id + "-open";
  o.kind = QuestionKind::OpenEnded;
  o.stem = std::move(out);
  o.reference_answer = q.reference_answer;
  if (q.answer_label) {
    for (const auto& opt : q.options)
      if (opt.label == *q.answer_label) o.reference_answer = opt.text;
  }
  o.category = q.category;
  o.source_trunk_id = q.source_trunk_id;
  o.difficulty = q.difficulty;
  return o;
}

QuestionVerdict filter_question(const Question& q, ChatBackend& judge,
                                const PipelinePrompts& prompts, const BackendConfig& config) {
  QuestionVerdict v;
  v.exchange = {{Role::System,
                 text::replace_all(prompts.question_filtering, "{text}", format_question_text(q)),
                 std::nullopt},
                {Role::User, "Judge the question.", std::nullopt}};
  v.keep = ask_with_reask<bool>(
      judge, config, v.exchange,
      [](const std::string& r) -> std::optional<bool> {
        const auto w = letters_only(last_line(r));
        if (w == "correct") return true;
        if (w == "incorrect") return false;
        return std::nullopt;
      },
      "The last line must be CORRECT or INCORRECT.",
      [&](const std::string& last) {
        throw JudgingError(fmt::format("{}: judge ended with '{}' instead of CORRECT/INCORRECT",
                                        q.id, last_line(last)));
      });
  return v;
}

GradeReport grade_single_choice(const std::map<std::string, char>& answers,
                                const std::vector<Question>& questions) {
  std::map<std::string, const Question*> by_id;
  for (const auto& q : questions) by_id[q.id] = &q;
  for (const auto& [id, label] : answers) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw GradingError("unknown question id " + id);
    if (it->second->kind != QuestionKind::SingleChoice)
      throw GradingError("question " + id + " is not single-choice");
  }
  GradeReport r;
  for (const auto& q : questions) {
    if (q.kind != QuestionKind::SingleChoice) continue;
    auto& cell = r.per_category[q.category];
    ++cell.total;
    ++r.overall.total;
    auto it = answers.find(q.id);
    if (it != answers.end() && q.answer_label &&
        std::toupper(static_cast<unsigned char>(it->second)) == *q.answer_label) {
      ++cell.correct;
      ++r.overall.correct;
    }
  }
  return r;
}

std::string_view to_string(Verdict v) { return v == Verdict::Correct ? "correct" : "incorrect"; }

Verdict judge_open_ended(const Question& question, std::string_view reference_answer,
                         std::string_view candidate, ChatBackend& judge,
                         const PipelinePrompts& prompts, const BackendConfig& config) {
  std::vector<ChatMessage> history{
      {Role::System, prompts.open_ended_evaluation, std::nullopt},
      {Role::User,
       fmt::format("Question: {}\nReference answer: {}\nRespondent answer: {}", question.stem,
                   reference_answer, candidate),
       std::nullopt}};
  return ask_with_reask<Verdict>(
      judge, config, history,
      [](const std::string& r) -> std::optional<Verdict> {
        const auto w = letters_only(r);
        if (w == "correct") return Verdict::Correct;
        if (w == "incorrect") return Verdict::Incorrect;
        return std::nullopt;
      },
      "Reply with exactly one word: correct or incorrect.",
      [&](const std::string& last) {
        throw JudgingError(fmt::format("{}: judge replied '{}'", question.id, text::trim(last)));
      });
}

void AuditLog::write(const fs::path& path) const {
  std::string out;
  for (const auto& e : entries_) {
    out += json{{"stage", e.stage},
                {"item_id", e.item_id},
                {"action", e.action},
                {"reason", e.reason},
                {"exchange", e.exchange}}
               .dump() +
           '\n';
  }
  write_file(path, out);
}

json funnel_to_json(const Funnel& f) {
  return {{"writeups", f.writeups},
          {"writeups_accepted", f.writeups_accepted},
          {"trunks_extracted", f.trunks_extracted},
          {"trunks_kept", f.trunks_kept},
          {"single_choice", f.single_choice},
          {"open_ended", f.open_ended},
          {"single_choice_kept", f.single_choice_kept}};
}

PipelineResult run_pipeline(const std::vector<WriteupDoc>& docs, const PipelineBackends& b,
                            const PipelinePrompts& prompts, std::uint64_t seed,
                            const BackendConfig& config) {
  if (!b.extractor || !b.knowledge_judge || !b.generator || !b.question_judge)
    throw ConfigError("pipeline: extractor, judges and generator are required");
  PipelineResult r;
  r.funnel.writeups = docs.size();

  auto filtered = filter_writeups(docs);
  for (const auto& rej : filtered.rejected)
    r.audit.add({"filter-writeups", rej.doc_id, "drop", text::join(rej.reasons, ","), {}});
  r.accepted = std::move(filtered.accepted);
  r.funnel.writeups_accepted = r.accepted.size();

  for (const auto& doc : r.accepted) {
    std::vector<KnowledgeTrunk> trunks;
    try {
      trunks = extract_knowledge(doc, *b.extractor, prompts, config);
    } catch (const Error& e) {
      r.audit.add({"extract-knowledge", doc.id, "error", e.what(), {}});
      continue;
    }
    r.extracted.insert(r.extracted.end(), trunks.begin(), trunks.end());

    std::vector<KnowledgeTrunk> kept;
    for (const auto& t : trunks) {
      try {
        auto v = filter_knowledge(doc, t, *b.knowledge_judge, prompts, config);
        r.audit.add({"filter-knowledge", t.id, v.keep ? "keep" : "drop",
                     fmt::format("score {}", v.score), std::move(v.exchange)});
        if (v.keep) kept.push_back(t);
      } catch (const Error& e) {
        r.audit.add({"filter-knowledge", t.id, "error", e.what(), {}});
      }
    }
    if (kept.empty()) continue;
    r.kept.insert(r.kept.end(), kept.begin(), kept.end());

    if (b.snippet_extractor) {
      try {
        const auto code = extract_snippet(doc, *b.snippet_extractor, prompts, config);
        for (const auto& t : kept) r.snippets[t.id] = code;
      } catch (const Error& e) {
        r.audit.add({"extract-snippets", doc.id, "error", e.what(), {}});
      }
    }

    try {
      auto qs = generate_questions(doc, kept, *b.generator, prompts, seed, config);
      r.single_choice.insert(r.single_choice.end(), qs.begin(), qs.end());
    } catch (const Error& e) {
      r.audit.add({"generate-questions", doc.id, "error", e.what(), {}});
    }
  }
  r.funnel.trunks_extracted = r.extracted.size();
  r.funnel.trunks_kept = r.kept.size();
  r.funnel.single_choice = r.single_choice.size();

  for (const auto& q : r.single_choice) r.open_ended.push_back(derive_open_ended(q));
  r.funnel.open_ended = r.open_ended.size();

  for (const auto& q : r.single_choice) {
    try {
      auto v = filter_question(q, *b.question_judge, prompts, config);
      r.audit.add({"filter-questions", q.id, v.keep ? "keep" : "drop", {}, std::move(v.exchange)});
      if (v.keep) r.single_choice_kept.push_back(q);
    } catch (const Error& e) {
      r.audit.add({"filter-questions", q.id, "error", e.what(), {}});
    }
  }
  r.funnel.single_choice_kept = r.single_choice_kept.size();
  return r;
}

}  // namespace ctfagent
