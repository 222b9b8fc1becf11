#include <doctest.h>

#include "ctfagent/prompts.hpp"
#include "ctfagent/rag_router.hpp"
#include "support/fixtures.hpp"

using namespace ctfagent;

namespace {

const std::string kCode =
    "int main(void) {\n  char buffer[0x20];\n  int admin = 0;\n  fgets(buffer, 0x40, stdin);\n"
    "  if (admin) system(\"/bin/sh\");\n  return 0;\n}\n";

KnowledgeTrunk trunk(std::string id, std::string scenario, std::string method,
                     std::string payload = "") {
  KnowledgeTrunk t;
  t.id = std::move(id);
  t.scenario = std::move(scenario);
  t.exploit_method = std::move(method);
  t.example_payload = std::move(payload);
  return t;
}

}  // namespace

TEST_SUITE("rag_router") {
  TEST_CASE("bundled hint template equals the builtin one") {
    CHECK(HintTemplate::load(hint_template_path(testsupport::assets_dir())) ==
          HintTemplate::builtin());
  }

  TEST_CASE("render_hint layout") {
    const std::vector<KnowledgeTrunk> ts{trunk("a", "S1", "M1", "P1"), trunk("b", "S2", "M2")};
    const auto h = render_hint(ts, Trigger::CodeRead, HintTemplate::builtin());
    CHECK(h ==
          "[RAG-Understanding] Knowledge related to the code you just read:\n"
          "\nKnowledge 1:\nCTF Scenario: S1\nExploit Method: M1\nExample Payload:\nP1\n"
          "\nKnowledge 2:\nCTF Scenario: S2\nExploit Method: M2\n");
    const auto e = render_hint(std::span(ts).first(1), Trigger::ExploitIdea, HintTemplate::builtin());
    CHECK(e.rfind("[RAG-Exploiting]", 0) == 0);
  }

  TEST_CASE("code-read detection") {
    CHECK(is_code_read_tool({"read_file", "{}", ""}));
    CHECK(is_code_read_tool({"decompile", "{}", ""}));
    CHECK(is_code_read_tool({"terminal", R"({"command":"cat main.c"})", ""}));
    CHECK(is_code_read_tool({"terminal", R"({"command":"cd src && head -n 40 vuln.c"})", ""}));
    CHECK(is_code_read_tool({"terminal", "less x.c", ""}));
    CHECK(!is_code_read_tool({"terminal", R"({"command":"ls -la"})", ""}));
    CHECK(!is_code_read_tool({"terminal", R"({"command":"python3 concat.py"})", ""}));
    CHECK(!is_code_read_tool({"nc_send_line", "{}", ""}));
  }

  TEST_CASE("binary detection") {
    CHECK(looks_binary(std::string("ab\0cd", 5)));
    CHECK(looks_binary("\x01\x02\x03\x04 abc"));
    CHECK(!looks_binary("plain text\twith tabs\r\n"));
    CHECK(!looks_binary(""));
  }

  TEST_CASE("idea extraction stops at the paragraph break") {
    const auto store = testsupport::fixture_store();
    const RagRouter r(store, HashingEmbedder());
    CHECK(r.extract_idea("Thought\nexploit idea: smash it\nwith As\n\nnext para") ==
          "smash it\nwith As");
    CHECK(!r.extract_idea("no marker here"));
  }

  TEST_CASE("understanding stage: code reads of at least five lines") {
    const auto store = testsupport::fixture_store();
    RagRouter r(store, HashingEmbedder());
    CHECK(!r.on_observation(1, {"terminal", "ls", kCode}));
    CHECK(!r.on_observation(1, {"read_file", "{}", "int x;\nint y;\n"}));
    CHECK(!r.on_observation(1, {"read_file", "{}", std::string(40, '\x01') + "\n\n\n\n\n"}));
    const auto ev = r.on_observation(2, {"read_file", R"({"path":"vuln.c"})", kCode});
    REQUIRE(ev);
    CHECK(ev->trigger == Trigger::CodeRead);
    CHECK(ev->round_index == 2);
    CHECK(ev->trunk_ids.size() <= kDefaultUnderstandingK);
    CHECK(ev->trunk_ids.front() == "t-bof-stack");
  }

  TEST_CASE("trunks are injected at most once per session") {
    const auto store = testsupport::fixture_store();
    RagRouter r(store, HashingEmbedder());
    REQUIRE(r.on_observation(1, {"read_file", "{}", kCode}));
    // same read again: the top hits were all injected already
    CHECK(!r.on_observation(2, {"read_file", "{}", kCode}));
    const auto before = r.injected_trunks();
    const auto idea = r.on_message(3, "Exploit Idea: overflow the buffer to overwrite the variable");
    REQUIRE(idea);
    for (const auto& id : idea->trunk_ids) CHECK(before.count(id) == 0);
    CHECK(idea->trunk_ids == std::vector<std::string>{"t-bof-payload"});
  }

  TEST_CASE("dedup filters after top-k, so an already used best hit yields nothing") {
    const auto store = testsupport::fixture_store();
    RagRouter r(store, HashingEmbedder());
    const std::string idea = "Exploit Idea: overflow the buffer to overwrite the adjacent variable";
    REQUIRE(r.on_message(1, idea));
    CHECK(!r.on_message(2, idea));
  }

  TEST_CASE("min score filters weak matches") {
    const auto store = testsupport::fixture_store();
    RouterConfig cfg;
    cfg.min_score = 0.99;
    RagRouter r(store, HashingEmbedder(), cfg);
    CHECK(!r.on_message(1, "Exploit Idea: overflow the buffer"));
  }

  TEST_CASE("retrieval failures are swallowed") {
    const auto store = testsupport::fixture_store();
    RagRouter r(store, HashingEmbedder(16));  // wrong dimension for the store
    CHECK(!r.on_message(1, "Exploit Idea: overflow"));
    CHECK(r.injected_trunks().empty());
  }
}
