#include "ctfagent/rag_router.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ctfagent/errors.hpp"

namespace ctfagent {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kReadTools = {"read_file", "decompile"};
const std::set<std::string, std::less<>> kShellTools = {"terminal", "exec_command", "shell",
                                                        "bash", "run_command"};
const std::set<std::string, std::less<>> kViewers = {"cat", "head", "tail", "less", "more",
                                                     "nl", "bat", "tac"};

std::string command_text(std::string_view arguments) {
  try {
    const auto j = json::parse(arguments);
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object()) {
      for (const char* key : {"command", "cmd", "input"})
        if (j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
    }
  } catch (const json::parse_error&) {
  }
  return std::string(arguments);
}

// First word of every segment separated by ; & |
bool runs_viewer(std::string_view command) {
  std::size_t pos = 0;
  while (pos <= command.size()) {
    const auto end = command.find_first_of(";&|\n", pos);
    const auto seg = text::trim(command.substr(pos, end == std::string_view::npos
                                                        ? std::string_view::npos
                                                        : end - pos));
    auto word = seg.substr(0, seg.find_first_of(" \t"));
    if (const auto slash = word.rfind('/'); slash != std::string::npos) word = word.substr(slash + 1);
    if (kViewers.count(word)) return true;
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return false;
}

std::string json_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw ValidationError(key, "missing or not a string");
  return j.at(key).get<std::string>();
}

}  // namespace

std::string_view to_string(Trigger t) {
  return t == Trigger::CodeRead ? "CodeRead" : "ExploitIdea";
}

HintTemplate HintTemplate::builtin() {
  return HintTemplate{
      "[RAG-Understanding] Knowledge related to the code you just read:",
      "[RAG-Exploiting] Knowledge related to your exploit idea:",
      "Knowledge {index}:",
      "CTF Scenario: ",
      "Exploit Method: ",
      "Example Payload:",
  };
}

HintTemplate HintTemplate::load(const std::filesystem::path& path) {
  try {
    const auto j = json::parse(read_file(path));
    return HintTemplate{json_string(j, "understanding_header"), json_string(j, "exploiting_header"),
                        json_string(j, "item_header"),          json_string(j, "scenario_label"),
                        json_string(j, "method_label"),         json_string(j, "payload_label")};
  } catch (const std::exception& e) {
    throw LoadError(path, 0, e.what());
  }
}

std::string render_hint(std::span<const KnowledgeTrunk> trunks, Trigger trigger,
                        const HintTemplate& tmpl) {
  std::string out = trigger == Trigger::CodeRead ? tmpl.understanding_header
                                                 : tmpl.exploiting_header;
  out += '\n';
  for (std::size_t i = 0; i < trunks.size(); ++i) {
    const auto& t = trunks[i];
    out += '\n';
    out += text::replace_all(tmpl.item_header, "{index}", std::to_string(i + 1));
    out += '\n';
    out += tmpl.scenario_label + t.scenario + '\n';
    out += tmpl.method_label + t.exploit_method + '\n';
    if (!t.example_payload.empty()) {
      out += tmpl.payload_label + '\n' + t.example_payload;
      if (t.example_payload.back() != '\n') out += '\n';
    }
  }
  return out;
}

bool looks_binary(std::string_view data) {
  std::size_t control = 0;
  for (unsigned char c : data) {
    if (c == 0) return true;
    if ((c < 0x20 && c != '\t' && c != '\n' && c != '\r') || c == 0x7f) ++control;
  }
  return !data.empty() && control * 10 > data.size();
}

bool is_code_read_tool(const Observation& obs) {
  if (kReadTools.count(obs.tool_name)) return true;
  if (kShellTools.count(obs.tool_name)) return runs_viewer(command_text(obs.arguments));
  return false;
}

RagRouter::RagRouter(const KnowledgeStore& store, Embedder embedder, RouterConfig config,
                     HintTemplate tmpl)
    : store_(&store), embedder_(std::move(embedder)), config_(std::move(config)),
      template_(std::move(tmpl)) {}

bool RagRouter::qualifies_as_code_read(const Observation& obs) const {
  return is_code_read_tool(obs) && text::count_lines(obs.output) >= config_.min_code_lines &&
         !looks_binary(obs.output);
}

std::optional<std::string> RagRouter::extract_idea(std::string_view message) const {
  if (config_.idea_marker.empty()) return std::nullopt;
  const auto pos = text::ifind(message, config_.idea_marker);
  if (pos == std::string_view::npos) return std::nullopt;
  auto rest = message.substr(pos + config_.idea_marker.size());
  if (const auto para = rest.find("\n\n"); para != std::string_view::npos) rest = rest.substr(0, para);
  return text::trim(rest);
}

std::optional<HintEvent> RagRouter::on_observation(int round_index, const Observation& obs) {
  if (!qualifies_as_code_read(obs)) return std::nullopt;
  return fire(round_index, Trigger::CodeRead, obs.output, KeyKind::CodeSnippet,
              config_.k_understanding);
}

std::optional<HintEvent> RagRouter::on_message(int round_index, std::string_view message) {
  const auto idea = extract_idea(message);
  if (!idea || idea->empty()) return std::nullopt;
  return fire(round_index, Trigger::ExploitIdea, *idea, KeyKind::TrunkText, config_.k_exploiting);
}

std::optional<HintEvent> RagRouter::fire(int round_index, Trigger trigger, std::string_view query,
                                         KeyKind kind, std::size_t k) {
  std::vector<RetrievalHit> hits;
  try {
    hits = store_->retrieve(query, kind, k, config_.min_score, embedder_);
  } catch (const std::exception& e) {
    spdlog::warn("retrieval for {} trigger failed: {}", to_string(trigger), e.what());
    return std::nullopt;
  }
  std::vector<KnowledgeTrunk> trunks;
  HintEvent ev{round_index, trigger, {}, {}};
  for (const auto& h : hits) {
    if (injected_.count(h.trunk_id)) continue;
    const auto* t = store_->find(h.trunk_id);
    if (!t) continue;
    trunks.push_back(*t);
    ev.trunk_ids.push_back(h.trunk_id);
  }
  if (trunks.empty()) return std::nullopt;
  injected_.insert(ev.trunk_ids.begin(), ev.trunk_ids.end());
  ev.rendered_hint = render_hint(trunks, trigger, template_);
  return ev;
}

}  // namespace ctfagent
