#include <doctest.h>

#include <random>

#include "ctfagent/common.hpp"

using namespace ctfagent;

TEST_SUITE("common") {
  TEST_CASE("categories parse with aliases") {
    CHECK(parse_category("pwn") == Category::Pwn);
    CHECK(parse_category("Reverse") == Category::Reverse);
    CHECK(parse_category("rev") == Category::Reverse);
    CHECK(parse_category("CRYPTO") == Category::Crypto);
    CHECK(!parse_category("cooking"));
    for (auto c : kAllCategories) CHECK(parse_category(to_string(c)) == c);
  }

  TEST_CASE("line counting ignores a trailing newline") {
    CHECK(text::count_lines("") == 0);
    CHECK(text::count_lines("a") == 1);
    CHECK(text::count_lines("a\n") == 1);
    CHECK(text::count_lines("a\nb") == 2);
    CHECK(text::count_lines("a\n\nb\n") == 3);
  }

  TEST_CASE("case-insensitive helpers") {
    CHECK(text::icontains("Buffer Overflow here", "buffer overflow"));
    CHECK(text::ifind("xxEXPLOIT idea:", "exploit idea:") == 2);
    CHECK(text::istarts_with("Final Answer", "final"));
    CHECK(text::trim("  a b \n") == "a b");
    CHECK(text::replace_all("a{x}b{x}", "{x}", "-") == "a-b-");
  }

  TEST_CASE("sha256 matches a published test vector") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }

  TEST_CASE("format_percent rounds half up to two decimals") {
    CHECK(format_percent(67, 182) == "36.81");
    CHECK(format_percent(79, 182) == "43.41");
    CHECK(format_percent(28, 182) == "15.38");
    CHECK(format_percent(1753, 1996) == "87.83");
    CHECK(format_percent(0, 5) == "0.00");
    CHECK(format_percent(5, 5) == "100.00");
    CHECK(format_percent(1, 8) == "12.50");
  }

  TEST_CASE("property: format_percent agrees with a decimal oracle") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 5000; ++i) {
      const std::uint64_t total = 1 + rng() % 5000;
      const std::uint64_t count = rng() % (total + 1);
      // oracle: exact rational rounding half-up via long double and an epsilon nudge
      const long double v = 100.0L * count / total;
      const auto scaled = static_cast<std::uint64_t>(v * 100.0L + 0.5L + 1e-9L);
      const auto expect = std::to_string(scaled / 100) + "." + (scaled % 100 < 10 ? "0" : "") +
                          std::to_string(scaled % 100);
      CHECK(format_percent(count, total) == expect);
    }
  }
}
