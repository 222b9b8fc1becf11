#include <doctest.h>

#include "ctfagent/challenge.hpp"
#include "ctfagent/errors.hpp"
#include "ctfagent/flag.hpp"
#include "support/test_servers.hpp"

using namespace ctfagent;
using nlohmann::json;

namespace {

json base_manifest() {
  return json{{"id", "toy"},
              {"category", "Pwn"},
              {"flag", "picoCTF{ok}"},
              {"flag_format", std::string(kPicoFlagFormat)},
              {"points", 50}};
}

std::string field_of(const json& j, const std::filesystem::path& dir) {
  try {
    challenge_from_json(j, dir);
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_SUITE("challenge") {
  TEST_CASE("flag matcher") {
    const FlagMatcher pico{std::string(kPicoFlagFormat)};
    CHECK(pico.matches("picoCTF{abc}"));
    CHECK(!pico.matches("xpicoCTF{abc}"));
    CHECK(!pico.matches("picoCTF{abc"));
    CHECK(pico.find("the flag is picoCTF{a_b} and picoCTF{c}") == "picoCTF{a_b}");
    CHECK(!pico.find("nothing here"));
    CHECK(detect_flag("out: flag{x} picoCTF{y}", pico) == "picoCTF{y}");
    CHECK_THROWS_AS(FlagMatcher("("), ConfigError);
  }

  TEST_CASE("valid manifest with defaults") {
    const auto dir = testsupport::fresh_dir("ch-valid");
    auto j = base_manifest();
    j["vulnerability_tags"] = {" Buffer Overflow ", ""};
    const auto c = challenge_from_json(j, dir);
    CHECK(c.name == "toy");
    CHECK(c.category == Category::Pwn);
    CHECK(c.points == 50);
    CHECK(c.root == dir);
    CHECK(!c.service);
    CHECK(c.vulnerability_tags == std::vector<std::string>{"buffer overflow"});
    const auto again = challenge_from_json(challenge_to_json(c), dir);
    CHECK(again.id == c.id);
    CHECK(again.flag == c.flag);
  }

  TEST_CASE("field-level validation errors") {
    const auto dir = testsupport::fresh_dir("ch-invalid");
    auto j = base_manifest();
    j.erase("id");
    CHECK(field_of(j, dir) == "id");
    j = base_manifest();
    j["category"] = "Hardware";
    CHECK(field_of(j, dir) == "category");
    j = base_manifest();
    j["flag"] = "flag{nope}";
    CHECK(field_of(j, dir) == "flag");
    j = base_manifest();
    j["flag_format"] = "[";
    CHECK(field_of(j, dir) == "flag_format");
    j = base_manifest();
    j["points"] = -1;
    CHECK(field_of(j, dir) == "points");
    j = base_manifest();
    j["files"] = {"missing.bin"};
    CHECK(field_of(j, dir) == "files[0]");
    j = base_manifest();
    j["service"] = {{"port", 70000}};
    CHECK(field_of(j, dir) == "service.port");
    j = base_manifest();
    j["service"] = {{"port", 4000}, {"launch", "./not-there --x"}};
    CHECK(field_of(j, dir) == "service.launch");
    j = base_manifest();
    j["service"] = {{"port", 4000}, {"launch", "definitely-not-a-program-xyz"}};
    CHECK(field_of(j, dir) == "service.launch");
  }

  TEST_CASE("puffin fixture manifest loads") {
    const auto j = json::parse(read_file(testsupport::puffin_manifest()));
    const auto c = challenge_from_json(j, testsupport::puffin_manifest().parent_path());
    CHECK(c.category == Category::Pwn);
    REQUIRE(c.service);
    CHECK(c.service->port == 31337);
    CHECK(c.flag == "picoCTF{b1g_p3ngu1n_0verfl0w_3a7c}");
  }
}
