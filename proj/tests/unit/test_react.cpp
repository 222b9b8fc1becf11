#include <doctest.h>

#include <json.hpp>

#include "ctfagent/common.hpp"
#include "ctfagent/react.hpp"
#include "support/test_servers.hpp"

using namespace ctfagent;
using nlohmann::json;

TEST_SUITE("react") {
  TEST_CASE("golden replies") {
    const auto path = testsupport::fixtures_dir() / "react" / "golden.jsonl";
    int cases = 0;
    for (const auto& line : text::split_lines(read_file(path))) {
      if (text::trim(line).empty()) continue;
      const auto g = json::parse(line);
      const auto& want = g["expect"];
      const auto got = parse_react(g["reply"].get<std::string>());
      CAPTURE(g["case"].get<std::string>());
      const auto kind = want["kind"].get<std::string>();
      if (kind == "tool") {
        CHECK(got == ReactAction::tool_call(want["name"], want["input"]));
      } else if (kind == "final") {
        CHECK(got == ReactAction::final_answer(want["input"]));
      } else {
        CHECK(got.kind == ReactAction::Kind::Malformed);
        CHECK(got.reason.starts_with(want["reason"].get<std::string>()));
      }
      ++cases;
    }
    CHECK(cases == 20);
  }

  TEST_CASE("object input round-trips through its serialised text") {
    const json input{{"command", "python3 -c \"print('A'*48)\" | nc 127.0.0.1 31337"}};
    const auto reply = "```json\n" + json{{"action", "terminal"}, {"action_input", input}}.dump(2) +
                       "\n```";
    const auto got = parse_react(reply);
    REQUIRE(got.kind == ReactAction::Kind::ToolCall);
    CHECK(json::parse(got.input) == input);
  }
}
