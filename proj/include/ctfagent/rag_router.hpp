#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctfagent/knowledge_store.hpp"

namespace ctfagent {

enum class Trigger { CodeRead, ExploitIdea };

std::string_view to_string(Trigger t);

struct HintEvent {
  int round_index = 0;
  Trigger trigger = Trigger::CodeRead;
  std::vector<std::string> trunk_ids;
  std::string rendered_hint;
};

/// A tool invocation and its full output, as seen by the router.
struct Observation {
  std::string tool_name;
  std::string arguments;  // JSON text or a bare string
  std::string output;
};

struct RouterConfig {
  std::size_t k_understanding = kDefaultUnderstandingK;
  std::size_t k_exploiting = kDefaultExploitingK;
  double min_score = kDefaultMinScore;
  std::string idea_marker = "Exploit Idea:";
  std::size_t min_code_lines = 5;
};

/// Fixed hint layout, loaded from the prompt assets so transcripts are reproducible.
struct HintTemplate {
  std::string understanding_header;
  std::string exploiting_header;
  std::string item_header;  // "{index}" is replaced by the 1-based position
  std::string scenario_label;
  std::string method_label;
  std::string payload_label;

  static HintTemplate load(const std::filesystem::path& path);
  static HintTemplate builtin();
  friend bool operator==(const HintTemplate&, const HintTemplate&) = default;
};

std::string render_hint(std::span<const KnowledgeTrunk> trunks, Trigger trigger,
                        const HintTemplate& tmpl);

/// True for read_file/decompile tools and shell tools running a file viewer (cat, head, ...).
bool is_code_read_tool(const Observation& obs);
/// NUL bytes, or more than 10% control characters other than tab/CR/LF.
bool looks_binary(std::string_view data);

/// Per-solve-session router state. Not shared between sessions.
class RagRouter {
 public:
  RagRouter(const KnowledgeStore& store, Embedder embedder, RouterConfig config = {},
            HintTemplate tmpl = HintTemplate::builtin());

  std::optional<HintEvent> on_observation(int round_index, const Observation& obs);
  std::optional<HintEvent> on_message(int round_index, std::string_view model_message);

  bool qualifies_as_code_read(const Observation& obs) const;
  /// Text following the idea marker (up to the next blank line), if the marker occurs.
  std::optional<std::string> extract_idea(std::string_view model_message) const;

  const std::set<std::string>& injected_trunks() const noexcept { return injected_; }
  const RouterConfig& config() const noexcept { return config_; }

 private:
  std::optional<HintEvent> fire(int round_index, Trigger trigger, std::string_view query,
                                KeyKind kind, std::size_t k);

  const KnowledgeStore* store_;
  Embedder embedder_;
  RouterConfig config_;
  HintTemplate template_;
  std::set<std::string> injected_;
};

}  // namespace ctfagent
