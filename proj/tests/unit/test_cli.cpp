#include <doctest.h>

#include <sstream>

#include "ctfagent/cli.hpp"
#include "ctfagent/common.hpp"
#include "ctfagent/pipeline.hpp"
#include "support/test_servers.hpp"

using namespace ctfagent;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string fx(const std::string& rel) { return (testsupport::fixtures_dir() / rel).string(); }

std::string built_store(const fs::path& dir) {
  const auto store = (dir / "kb.jsonl").string();
  cli({"build-kb", "--trunks", fx("kb/trunks.jsonl"), "--snippets", fx("kb/snippets.jsonl"),
       "--out", store});
  return store;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(cli({}).code == exit_code::kUsage);
    CHECK(cli({"frobnicate"}).code == exit_code::kUsage);
    CHECK(cli({"--help"}).code == exit_code::kSuccess);
    CHECK(cli({"--help"}).out.find("ctfagent") != std::string::npos);
  }

  TEST_CASE("build-kb reports counts and respects --force") {
    const auto dir = testsupport::fresh_dir("cli-kb");
    const auto store = (dir / "kb.jsonl").string();
    const std::vector<std::string> args{"build-kb", "--trunks", fx("kb/trunks.jsonl"), "--snippets",
                                        fx("kb/snippets.jsonl"), "--out", store};
    auto r = cli(args);
    CHECK(r.code == exit_code::kSuccess);
    CHECK(r.out == "3 trunks, 5 records\n");
    r = cli(args);
    CHECK(r.code == exit_code::kUsage);
    CHECK(r.err.find("--force") != std::string::npos);
    auto forced = args;
    forced.push_back("--force");
    CHECK(cli(forced).code == exit_code::kSuccess);
    CHECK(cli({"build-kb", "--trunks", (dir / "missing.jsonl").string(), "--out",
               (dir / "x.jsonl").string()})
              .code == exit_code::kUsage);
  }

  TEST_CASE("solve exit codes follow the outcome") {
    const auto dir = testsupport::fresh_dir("cli-solve");
    const auto store = built_store(dir);
    const auto manifest = testsupport::puffin_manifest().string();
    auto run = [&](const std::string& script, const std::string& out) {
      return cli({"solve", manifest, "--backend", "scripted:" + fx("puffin/" + script), "--store",
                  store, "--out", (dir / out).string()});
    };
    const auto solved = run("solve.jsonl", "ok");
    CHECK(solved.code == exit_code::kSuccess);
    CHECK(solved.out.find("Solved at round 6: picoCTF{b1g_p3ngu1n_0verfl0w_3a7c}") != std::string::npos);
    CHECK(solved.err.find("config: ") != std::string::npos);
    CHECK(fs::exists(dir / "ok" / "run_config.json"));
    CHECK(fs::exists(dir / "ok" / "transcripts" / "puffin.jsonl"));

    const auto gave_up = run("surrender.jsonl", "giveup");
    CHECK(gave_up.code == exit_code::kUnsolved);
    CHECK(gave_up.out.find("Failed (GiveUp)") != std::string::npos);

    CHECK(cli({"solve", (dir / "nope.json").string()}).code == exit_code::kUsage);
    CHECK(cli({"solve", manifest, "--backend", "carrier-pigeon"}).code == exit_code::kUsage);
    CHECK(cli({"solve", manifest, "--max-rounds", "0", "--backend",
               "scripted:" + fx("puffin/solve.jsonl"), "--out", (dir / "zero").string()})
              .code == exit_code::kUsage);
  }

  TEST_CASE("config file values yield to flags") {
    const auto dir = testsupport::fresh_dir("cli-config");
    write_file(dir / "config.json",
               json{{"max_rounds", 1}, {"backend", "scripted:" + fx("puffin/solve.jsonl")}}.dump());
    const auto r = cli({"solve", testsupport::puffin_manifest().string(), "--config",
                        (dir / "config.json").string(), "--out", (dir / "out").string(),
                        "--max-rounds", "2", "--no-rag"});
    CHECK(r.code == exit_code::kUnsolved);
    const auto used = json::parse(read_file(dir / "out" / "run_config.json"));
    CHECK(used["max_rounds"] == 2);
    CHECK(used["use_rag"] == false);
    CHECK(used["backend"] == "scripted:" + fx("puffin/solve.jsonl"));
    write_file(dir / "bad.json", "[1]");
    CHECK(cli({"solve", testsupport::puffin_manifest().string(), "--config",
               (dir / "bad.json").string()})
              .code == exit_code::kUsage);
  }

  TEST_CASE("campaign writes json and csv reports") {
    const auto dir = testsupport::fresh_dir("cli-campaign");
    const auto r = cli({"campaign", fx("toys/dataset.json"), "--backend",
                        "scripted:" + fx("toys/scripts"), "--out", dir.string(), "--parallelism", "2"});
    CHECK(r.code == exit_code::kSuccess);
    CHECK(r.out.find("Score: 150") != std::string::npos);
    const auto csv = read_file(dir / "report.csv");
    CHECK(text::count_lines(csv) == 4);
    const auto rep = cli({"report", (dir / "report.json").string(), "--format", "csv"});
    CHECK(rep.out == csv);
  }

  TEST_CASE("report renders the NYU failure fixture") {
    const auto r = cli({"report", fx("scoring/nyu_failures.json")});
    CHECK(r.code == exit_code::kSuccess);
    CHECK(r.out.find("Give up                   36.81% (67)") != std::string::npos);
    CHECK(r.out.find("Max rounds                43.41% (79)") != std::string::npos);
    CHECK(r.out.find("Context length exceeded   15.38% (28)") != std::string::npos);
    CHECK(cli({"report", fx("scoring/nyu_failures.json"), "--format", "yaml"}).code ==
          exit_code::kUsage);
    CHECK(cli({"report", fx("scoring/pico2024.json")}).out.find("Score: 1875") != std::string::npos);
  }

  TEST_CASE("pipeline stages") {
    const auto dir = testsupport::fresh_dir("cli-pipeline");
    auto r = cli({"pipeline", "summarize", "--out", (dir / "x").string()});
    CHECK(r.code == exit_code::kUsage);
    CHECK(r.err.find("filter-writeups, extract-knowledge") != std::string::npos);

    r = cli({"pipeline", "filter-writeups", "--writeups", fx("writeups"), "--out",
             (dir / "accepted.json").string()});
    CHECK(r.code == exit_code::kSuccess);
    CHECK(r.out == "7 accepted, 3 rejected\n");

    // derive-open-ended keeps the count
    std::vector<Question> qs;
    for (int i = 0; i < 5; ++i) {
      Question q;
      q.id = "q" + std::to_string(i);
      q.stem = "Which of the following is true?";
      for (char l : {'A', 'B', 'C', 'D'}) q.options.push_back({l, std::string(1, l)});
      q.answer_label = 'C';
      q.category = Category::Crypto;
      qs.push_back(q);
    }
    write_questions_file(dir / "single.jsonl", qs);
    r = cli({"pipeline", "derive-open-ended", "--questions", (dir / "single.jsonl").string(),
             "--out", (dir / "open.jsonl").string()});
    CHECK(r.code == exit_code::kSuccess);
    CHECK(read_questions_file(dir / "open.jsonl").size() == 5);

    write_file(dir / "answers.json", R"({"q0":"C","q1":"c","q2":"A"})");
    r = cli({"pipeline", "grade", "--questions", (dir / "single.jsonl").string(), "--answers",
             (dir / "answers.json").string(), "--out", (dir / "grade.json").string()});
    CHECK(r.code == exit_code::kSuccess);
    CHECK(json::parse(read_file(dir / "grade.json"))["overall"]["percent"] == "40.00");

    CHECK(cli({"pipeline", "extract-knowledge", "--writeups", fx("writeups"), "--out",
               (dir / "t.jsonl").string()})
              .code == exit_code::kUsage);  // no backend
  }
}
