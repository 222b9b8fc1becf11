#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ctfagent {

enum class Category { Web, Pwn, Reverse, Crypto, Forensics, Misc };

inline constexpr std::array<Category, 6> kAllCategories = {
    Category::Pwn, Category::Reverse, Category::Misc,
    Category::Crypto, Category::Forensics, Category::Web};

std::string_view to_string(Category c);
// Case-insensitive; accepts common aliases ("rev", "reversing", "binary exploitation", ...).
std::optional<Category> parse_category(std::string_view text);

namespace text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool icontains(std::string_view haystack, std::string_view needle);
// Position of the first case-insensitive match, or npos.
std::size_t ifind(std::string_view haystack, std::string_view needle, std::size_t from = 0);
bool istarts_with(std::string_view s, std::string_view prefix);
// Splits on '\n'; a trailing newline does not yield an extra empty line.
std::vector<std::string> split_lines(std::string_view s);
std::size_t count_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

}  // namespace text

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// 64-bit FNV-1a. Stable across platforms; used for hashing tokens and seeding.
std::uint64_t fnv1a64(std::string_view data);

// Hex SHA-256 of data.
std::string sha256_hex(std::string_view data);

// count/total as a percentage rounded half-up to two decimals, e.g. "87.83".
// Computed in integer arithmetic so re-rendering from counts is exact.
std::string format_percent(std::uint64_t count, std::uint64_t total);

}  // namespace ctfagent
