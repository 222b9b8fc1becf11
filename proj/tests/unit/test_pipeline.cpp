#include <doctest.h>

#include <chrono>
#include <map>
#include <random>

#include "ctfagent/errors.hpp"
#include "ctfagent/pipeline.hpp"
#include "support/corpus.hpp"
#include "support/test_servers.hpp"

using namespace ctfagent;
using nlohmann::json;
namespace fs = std::filesystem;

using testsupport::CorpusBackends;
using testsupport::writeups_dir;

namespace {

ChatMessage say(std::string s) { return {Role::Assistant, std::move(s), std::nullopt}; }

const PipelinePrompts& prompts() {
  static const auto p = PipelinePrompts::load(testsupport::assets_dir());
  return p;
}

Question single(std::string stem, std::vector<std::string> opts, char answer) {
  Question q;
  q.id = "q1";
  q.stem = std::move(stem);
  for (std::size_t i = 0; i < opts.size(); ++i)
    q.options.push_back({static_cast<char>('A' + i), opts[i]});
  q.answer_label = answer;
  q.category = Category::Pwn;
  return q;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("write-up loading and filtering") {
    const auto docs = load_writeups(writeups_dir());
    REQUIRE(docs.size() == 10);
    CHECK(docs[0].id == "w01-stack-admin");
    CHECK(docs[0].category == Category::Pwn);
    CHECK(docs[0].challenge_points == 200);
    CHECK(docs[0].line_count == text::count_lines(docs[0].body));
    const auto f = filter_writeups(docs);
    CHECK(f.accepted.size() == 7);
    REQUIRE(f.rejected.size() == 3);
    CHECK(f.rejected[0].reasons == std::vector<std::string>{"min-lines"});
    CHECK(f.rejected[1].reasons == std::vector<std::string>{"media"});
    CHECK(f.rejected[2].reasons == std::vector<std::string>{"no-description"});
  }

  TEST_CASE("media inside code fences is allowed") {
    std::string body = "# T\n## Challenge Description\n```\ncurl https://example.org\n```\n";
    for (int i = 0; i < 30; ++i) body += "line\n";
    CHECK(writeup_rejection_reasons(make_writeup("d", body)).empty());
    CHECK(writeup_rejection_reasons(make_writeup("d", body + "see https://x.y\n")) ==
          std::vector<std::string>{"media"});
  }

  TEST_CASE("knowledge reply parsing") {
    const auto doc = make_writeup("doc", "body");
    const auto ts = parse_knowledge_reply(prompts().knowledge_extraction_example, doc);
    REQUIRE(ts.size() == 2);
    CHECK(ts[0].id == "doc-k1");
    CHECK(ts[1].example_payload == "ls | grep ^f | wc -l | grep 1");
    CHECK(ts[0].source_writeup_id == "doc");
    CHECK_THROWS_AS(parse_knowledge_reply("nothing useful", doc), ExtractionError);
    CHECK_THROWS_AS(parse_knowledge_reply("CTF Scenario: x\n", doc), ExtractionError);
    const auto bold = parse_knowledge_reply("**CTF Scenario:** s\n**Exploit Method:** m\n", doc);
    CHECK(bold[0].scenario == "s");
    CHECK(bold[0].example_payload.empty());
  }

  TEST_CASE("score line parsing") {
    CHECK(parse_score_line("reasoning\n5") == 5);
    CHECK(parse_score_line("**4**.") == 4);
    CHECK(!parse_score_line("5 out of 5"));
    CHECK(!parse_score_line("6"));
    CHECK(!parse_score_line(""));
  }

  TEST_CASE("question reply parsing") {
    const auto qs = parse_question_reply(prompts().question_generation_example);
    REQUIRE(qs.size() == 1);
    CHECK(qs[0].options.size() == 4);
    CHECK(qs[0].correct == 1);
    CHECK_THROWS_AS(parse_question_reply("1. Q?\nA) a\nB) b\nC) c\nAnswer: A"), GenerationError);
    CHECK_THROWS_AS(parse_question_reply("1. Q?\nA) a\nB) b\nC) c\nD) d\n"), GenerationError);
    CHECK_THROWS_AS(parse_question_reply("no questions"), GenerationError);
  }

  TEST_CASE("seeded labels: golden file, balance and determinism") {
    const auto golden = read_file(testsupport::fixtures_dir() / "labels" / "golden.txt");
    std::string got;
    std::map<char, int> counts;
    for (int i = 0; i < 1000; ++i) {
      const auto id = "trunk-" + std::to_string(i) + "-q";
      const char l = assign_answer_label(kDefaultSeed, id);
      got += id + " " + l + "\n";
      ++counts[l];
    }
    CHECK(got == golden);
    for (char l : {'A', 'B', 'C', 'D'}) {
      CHECK(counts[l] >= 200);
      CHECK(counts[l] <= 300);
    }
    // independent restatement of the recipe: FNV-1a 64 of the id, then seed_seq over both halves
    auto oracle = [](std::uint64_t seed, const std::string& id) {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (unsigned char c : id) h = (h ^ c) * 0x100000001b3ULL;
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
      return static_cast<char>('A' + std::mt19937_64(seq)() % 4);
    };
    for (const std::uint64_t seed : std::vector<std::uint64_t>{0, 7, kDefaultSeed, 0xffffffffffff})
      for (const std::string id : {"a", "w01-k1-q", "trunk-999-q"})
        CHECK(assign_answer_label(seed, id) == oracle(seed, id));
  }

  TEST_CASE("open-ended derivation") {
    auto q = single("Which of the following inputs triggers the branch?",
                    {"empty", "48 A's", "zero", "newline"}, 'B');
    auto o = derive_open_ended(q);
    CHECK(o.id == "q1-open");
    CHECK(o.kind == QuestionKind::OpenEnded);
    CHECK(o.stem == "What inputs triggers the branch?");
    CHECK(o.reference_answer == "48 A's");
    CHECK(o.options.empty());
    CHECK(!o.answer_label);
    validate_question(o);

    q.stem = "Given the code, which of the below is right, (A) or B)?\nA) first\nB) second";
    o = derive_open_ended(q);
    CHECK(o.stem == "Given the code, what is right, A or B?");
    validate_question(o);
  }

  TEST_CASE("question validation and file round trip") {
    auto q = single("Which?", {"a", "b", "c", "d"}, 'C');
    validate_question(q);
    auto bad = q;
    bad.options.pop_back();
    CHECK_THROWS_AS(validate_question(bad), ValidationError);
    bad = q;
    bad.answer_label = 'E';
    CHECK_THROWS_AS(validate_question(bad), ValidationError);
    bad = q;
    bad.difficulty = 1.5;
    CHECK_THROWS_AS(validate_question(bad), ValidationError);

    const auto dir = testsupport::fresh_dir("pipe-questions");
    write_questions_file(dir / "q.jsonl", {q, derive_open_ended(q)});
    const auto back = read_questions_file(dir / "q.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0] == q);
    write_file(dir / "bad.jsonl", json(q).dump() + "\n{\"id\":1}\n");
    try {
      read_questions_file(dir / "bad.jsonl");
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("single-choice grading of 1753 correct out of 1996") {
    std::vector<Question> qs;
    std::map<std::string, char> answers;
    for (int i = 0; i < 1996; ++i) {
      auto q = single("Which?", {"a", "b", "c", "d"}, static_cast<char>('A' + i % 4));
      q.id = "q" + std::to_string(i);
      q.category = i % 2 ? Category::Web : Category::Pwn;
      qs.push_back(q);
      if (i < 1753)
        answers[q.id] = static_cast<char>(std::tolower(*q.answer_label));
      else if (i % 3)
        answers[q.id] = static_cast<char>('A' + (i + 1) % 4);  // wrong; others unanswered
    }
    qs.push_back(derive_open_ended(qs[0]));  // ignored by grading
    const auto r = grade_single_choice(answers, qs);
    CHECK(r.overall.correct == 1753);
    CHECK(r.overall.total == 1996);
    CHECK(r.overall.percent() == "87.83");
    CHECK(r.per_category.at(Category::Pwn).total + r.per_category.at(Category::Web).total == 1996);
    CHECK_THROWS_AS(grade_single_choice({{"nope", 'A'}}, qs), GradingError);
    CHECK_THROWS_AS(grade_single_choice({{"q0-open", 'A'}}, qs), GradingError);
  }

  TEST_CASE("open-ended judging tolerates case and punctuation") {
    const auto q = derive_open_ended(single("Which?", {"a", "b", "c", "d"}, 'A'));
    int calls = 0;
    CallbackBackend judge([&](std::span<const ChatMessage>) {
      return say(++calls == 1 ? "Hmm, partly" : "Correct.");
    });
    CHECK(judge_open_ended(q, "a", "a!", judge, prompts()) == Verdict::Correct);
    CHECK(calls == 2);
    CallbackBackend no([](std::span<const ChatMessage>) { return say("INCORRECT"); });
    CHECK(judge_open_ended(q, "a", "b", no, prompts()) == Verdict::Incorrect);
    CallbackBackend junk([](std::span<const ChatMessage>) { return say("who knows"); });
    CHECK_THROWS_AS(judge_open_ended(q, "a", "b", junk, prompts()), JudgingError);
  }

  TEST_CASE("knowledge judge re-asks once, then fails") {
    const auto doc = make_writeup("d", "body");
    const auto t = parse_knowledge_reply("CTF Scenario: s\nExploit Method: m\n", doc)[0];
    int calls = 0;
    CallbackBackend junk([&](std::span<const ChatMessage>) {
      ++calls;
      return say("great note");
    });
    CHECK_THROWS_AS(filter_knowledge(doc, t, junk, prompts()), JudgingError);
    CHECK(calls == 2);
  }

  TEST_CASE("funnel over the fixture corpus") {
    const auto start = std::chrono::steady_clock::now();
    CorpusBackends b;
    const auto r = run_pipeline(b.docs, b.wiring(), prompts(), kDefaultSeed);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));

    CHECK(r.funnel.writeups == 10);
    CHECK(r.funnel.writeups_accepted == 7);
    CHECK(r.funnel.trunks_extracted == 11);
    CHECK(r.funnel.trunks_kept == 8);
    CHECK(r.funnel.single_choice == 7);  // w05's generator reply is rejected
    CHECK(r.funnel.open_ended == 7);
    CHECK(r.funnel.single_choice_kept == 6);

    // at most two trunks per write-up
    std::map<std::string, int> per_doc;
    for (const auto& t : r.extracted) ++per_doc[t.source_writeup_id];
    for (const auto& [doc, n] : per_doc) CHECK(n <= 2);

    // kept iff the judge scored 5
    std::map<std::string, std::string> action;
    for (const auto& e : r.audit.entries())
      if (e.stage == "filter-knowledge") action[e.item_id] = e.action + " " + e.reason;
    for (const auto& t : r.extracted) {
      const bool kept = std::any_of(r.kept.begin(), r.kept.end(),
                                    [&](const KnowledgeTrunk& k) { return k.id == t.id; });
      CHECK(kept == (action[t.id] == "keep score 5"));
    }
    CHECK(action["w03-sqli-login-k1"] == "keep score 5");  // after one re-ask

    for (const auto& o : r.open_ended) {
      validate_question(o);
      for (const char* l : {"A)", "B)", "C)", "D)", "(A)", "(B)"})
        CHECK(o.stem.find(l) == std::string::npos);
    }
    for (const auto& q : r.single_choice) {
      validate_question(q);
      CHECK(q.answer_label == assign_answer_label(kDefaultSeed, q.id));
      CHECK(q.difficulty.has_value());
    }
    const auto gen_errors = std::count_if(r.audit.entries().begin(), r.audit.entries().end(),
                                          [](const AuditEntry& e) { return e.stage == "generate-questions"; });
    CHECK(gen_errors == 1);

    // a second run is byte-identical
    CorpusBackends b2;
    const auto r2 = run_pipeline(b2.docs, b2.wiring(), prompts(), kDefaultSeed);
    const auto dir = testsupport::fresh_dir("pipe-funnel");
    write_questions_file(dir / "a.jsonl", r.single_choice);
    write_questions_file(dir / "b.jsonl", r2.single_choice);
    CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
    r.audit.write(dir / "audit.jsonl");
    CHECK(text::count_lines(read_file(dir / "audit.jsonl")) == r.audit.entries().size());
    CHECK(funnel_to_json(r.funnel)["trunks_kept"] == 8);
  }

  TEST_CASE("pipeline requires its backends") {
    CorpusBackends b;
    auto w = b.wiring();
    w.generator = nullptr;
    CHECK_THROWS_AS(run_pipeline(b.docs, w, prompts(), kDefaultSeed), ConfigError);
  }
}
