#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ctfagent {

/// Asset names under <assets>/prompts/, without the .txt suffix.
namespace prompt {
inline constexpr std::string_view kSystem = "system_prompt";
inline constexpr std::string_view kReact = "react_prompt";
inline constexpr std::string_view kKnowledgeExtraction = "knowledge_extraction";
inline constexpr std::string_view kKnowledgeExtractionExample = "knowledge_extraction_example";
inline constexpr std::string_view kKnowledgeFiltering = "knowledge_filtering";
inline constexpr std::string_view kQuestionGeneration = "question_generation";
inline constexpr std::string_view kQuestionGenerationExample = "question_generation_example";
inline constexpr std::string_view kOpenEndedEvaluation = "open_ended_evaluation";
inline constexpr std::string_view kSnippetExtraction = "snippet_extraction";
inline constexpr std::string_view kQuestionFiltering = "question_filtering";
inline constexpr std::string_view kPartialJudge = "partial_judge";
}  // namespace prompt

/// $CTFAGENT_ASSETS if set, else the source tree's assets/ directory.
std::filesystem::path default_assets_dir();

/// Reads <assets>/prompts/<name>.txt; throws LoadError if missing.
std::string load_prompt(const std::filesystem::path& assets_dir, std::string_view name);

inline std::filesystem::path hint_template_path(const std::filesystem::path& assets_dir) {
  return assets_dir / "prompts" / "hint_template.json";
}
inline std::filesystem::path tool_hints_path(const std::filesystem::path& assets_dir) {
  return assets_dir / "hints.json";
}

}  // namespace ctfagent
