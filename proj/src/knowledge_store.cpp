#include "ctfagent/knowledge_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/core.h>

#include "ctfagent/errors.hpp"

namespace ctfagent {

using nlohmann::json;

namespace {

constexpr std::string_view kStoreFormat = "ctfagent-store";
constexpr int kStoreVersion = 1;

const json& require(const json& j, const char* field) {
  if (!j.is_object() || !j.contains(field)) throw ValidationError(field, "missing field");
  return j.at(field);
}

std::string require_string(const json& j, const char* field) {
  const auto& v = require(j, field);
  if (!v.is_string()) throw ValidationError(field, "expected a string");
  return v.get<std::string>();
}

bool hit_before(const RetrievalHit& a, const RetrievalHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.trunk_id < b.trunk_id;
}

}  // namespace

std::string KnowledgeTrunk::text() const {
  std::string out = scenario;
  out += "\n";
  out += exploit_method;
  if (!example_payload.empty()) {
    out += "\n";
    out += example_payload;
  }
  return out;
}

void to_json(json& j, const KnowledgeTrunk& t) {
  j = json{{"id", t.id},
           {"scenario", t.scenario},
           {"exploit_method", t.exploit_method},
           {"example_payload", t.example_payload},
           {"category", std::string(to_string(t.category))},
           {"source_writeup_id", t.source_writeup_id}};
}

void from_json(const json& j, KnowledgeTrunk& t) {
  t.id = require_string(j, "id");
  if (t.id.empty()) throw ValidationError("id", "must not be empty");
  t.scenario = require_string(j, "scenario");
  if (text::trim(t.scenario).empty()) throw ValidationError("scenario", "must not be empty");
  t.exploit_method = require_string(j, "exploit_method");
  t.example_payload = j.contains("example_payload") && !j.at("example_payload").is_null()
                          ? require_string(j, "example_payload")
                          : std::string();
  const auto cat = parse_category(require_string(j, "category"));
  if (!cat) throw ValidationError("category", "not one of Web, Pwn, Reverse, Crypto, Forensics, Misc");
  t.category = *cat;
  t.source_writeup_id = j.contains("source_writeup_id") ? require_string(j, "source_writeup_id")
                                                        : std::string();
}

std::string_view to_string(KeyKind k) {
  return k == KeyKind::CodeSnippet ? "code" : "trunk";
}

KeyKind parse_key_kind(std::string_view s) {
  if (s == "code") return KeyKind::CodeSnippet;
  if (s == "trunk") return KeyKind::TrunkText;
  throw ValidationError("key_kind", "expected \"code\" or \"trunk\", got \"" + std::string(s) + "\"");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError(fmt::format("vector length mismatch: {} vs {}", a.size(), b.size()));
  if (a.empty()) throw DimensionError("vectors must be non-empty");
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return dot / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '_') {
      cur += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw DimensionError("embedding dimension must be positive");
}

Embedding HashingEmbedder::operator()(std::string_view text) const {
  Embedding v(dim_, 0.0);
  for (const auto& tok : tokenize(text)) v[fnv1a64(tok) % dim_] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

KnowledgeStore::KnowledgeStore(std::vector<KnowledgeTrunk> trunks,
                               std::vector<EmbeddingRecord> records, std::string embedder_name)
    : trunks_(std::move(trunks)), records_(std::move(records)),
      embedder_name_(std::move(embedder_name)) {
  for (std::size_t i = 0; i < trunks_.size(); ++i) {
    const auto& t = trunks_[i];
    if (t.id.empty()) throw ValidationError("id", "trunk id must not be empty");
    if (text::trim(t.scenario).empty())
      throw ValidationError("scenario", "trunk '" + t.id + "' has an empty scenario");
    if (!by_id_.emplace(t.id, i).second)
      throw ValidationError("id", "duplicate trunk id '" + t.id + "'");
  }
  std::size_t dims[2] = {0, 0};
  std::set<std::pair<std::string, int>> seen;
  for (const auto& r : records_) {
    if (!by_id_.count(r.trunk_id))
      throw ValidationError("trunk_id", "record references unknown trunk '" + r.trunk_id + "'");
    if (r.vector.empty()) throw DimensionError("record for '" + r.trunk_id + "' has dim 0");
    auto& d = dims[static_cast<int>(r.key_kind)];
    if (d == 0) d = r.dim();
    if (d != r.dim())
      throw DimensionError(fmt::format("record for '{}' has dim {}, store {} dim is {}", r.trunk_id,
                                       r.dim(), to_string(r.key_kind), d));
    if (!seen.emplace(r.trunk_id, static_cast<int>(r.key_kind)).second)
      throw ValidationError("trunk_id", fmt::format("duplicate {} record for '{}'",
                                                    to_string(r.key_kind), r.trunk_id));
  }
}

KnowledgeStore KnowledgeStore::build(std::vector<KnowledgeTrunk> trunks,
                                     const std::map<std::string, std::string>& snippets,
                                     const Embedder& embedder, std::string embedder_name) {
  std::set<std::string> ids;
  for (const auto& t : trunks)
    if (!ids.insert(t.id).second)
      throw ValidationError("id", "duplicate trunk id '" + t.id + "'");
  for (const auto& [id, code] : snippets)
    if (!ids.count(id)) throw ValidationError("trunk_id", "snippet for unknown trunk '" + id + "'");

  std::vector<EmbeddingRecord> records;
  records.reserve(trunks.size() + snippets.size());
  auto embed = [&](const std::string& trunk_id, std::string_view text) {
    try {
      return embedder(text);
    } catch (const std::exception& e) {
      throw IndexingError(trunk_id, e.what());
    }
  };
  for (const auto& t : trunks)
    records.push_back({t.id, KeyKind::TrunkText, embed(t.id, t.text())});
  for (const auto& t : trunks) {
    auto it = snippets.find(t.id);
    if (it != snippets.end())
      records.push_back({t.id, KeyKind::CodeSnippet, embed(t.id, it->second)});
  }
  try {
    return KnowledgeStore(std::move(trunks), std::move(records), std::move(embedder_name));
  } catch (const DimensionError& e) {
    throw IndexingError("*", std::string("embedder returned inconsistent dimensions: ") + e.what());
  }
}

std::vector<RetrievalHit> KnowledgeStore::retrieve(std::string_view query_text, KeyKind kind,
                                                   std::size_t k, double min_score,
                                                   const Embedder& embedder) const {
  if (text::trim(query_text).empty() || k == 0) return {};
  const Embedding q = embedder(query_text);
  return retrieve(q, kind, k, min_score);
}

std::vector<RetrievalHit> KnowledgeStore::retrieve(std::span<const double> query, KeyKind kind,
                                                   std::size_t k, double min_score) const {
  if (k == 0) return {};
  const std::size_t d = dim(kind);
  if (d == 0) return {};
  if (query.size() != d)
    throw DimensionError(fmt::format("query dim {} does not match store {} dim {}", query.size(),
                                     to_string(kind), d));
  std::vector<RetrievalHit> hits;
  for (const auto& r : records_) {
    if (r.key_kind != kind) continue;
    const double s = cosine_similarity(query, r.vector);
    if (s >= min_score) hits.push_back({r.trunk_id, s});
  }
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                    hit_before);
  hits.resize(n);
  return hits;
}

const KnowledgeTrunk* KnowledgeStore::find(std::string_view trunk_id) const {
  auto it = by_id_.find(std::string(trunk_id));
  return it == by_id_.end() ? nullptr : &trunks_[it->second];
}

std::size_t KnowledgeStore::count(KeyKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      records_.begin(), records_.end(), [&](const auto& r) { return r.key_kind == kind; }));
}

std::size_t KnowledgeStore::dim(KeyKind kind) const {
  for (const auto& r : records_)
    if (r.key_kind == kind) return r.dim();
  return 0;
}

void KnowledgeStore::save(const std::filesystem::path& path) const {
  std::string out;
  out += json{{"format", kStoreFormat},
              {"version", kStoreVersion},
              {"embedder", embedder_name_},
              {"trunks", trunks_.size()},
              {"records", records_.size()}}
             .dump();
  out += '\n';
  for (const auto& t : trunks_) {
    out += json(t).dump();
    out += '\n';
  }
  for (const auto& r : records_) {
    // nlohmann emits the shortest representation that round-trips the double exactly
    out += json{{"trunk_id", r.trunk_id},
                {"key_kind", to_string(r.key_kind)},
                {"dim", r.dim()},
                {"vector", r.vector}}
               .dump();
    out += '\n';
  }
  write_file(path, out);
}

KnowledgeStore KnowledgeStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path, 0, "cannot open file");

  std::string line;
  std::size_t lineno = 0;
  auto next_object = [&](const char* what) -> json {
    if (!std::getline(in, line))
      throw LoadError(path, lineno + 1, std::string("unexpected end of file, expected ") + what);
    ++lineno;
    try {
      auto j = json::parse(line);
      if (!j.is_object()) throw LoadError(path, lineno, "expected a JSON object");
      return j;
    } catch (const json::parse_error& e) {
      throw LoadError(path, lineno, std::string("malformed JSON: ") + e.what());
    }
  };

  const json header = next_object("header");
  std::size_t n_trunks = 0, n_records = 0;
  std::string embedder;
  try {
    if (header.value("format", "") != kStoreFormat)
      throw ValidationError("format", "not a ctfagent store");
    if (header.value("version", 0) != kStoreVersion)
      throw ValidationError("version", "unsupported version");
    n_trunks = require(header, "trunks").get<std::size_t>();
    n_records = require(header, "records").get<std::size_t>();
    embedder = require_string(header, "embedder");
  } catch (const std::exception& e) {
    throw LoadError(path, lineno, e.what());
  }

  std::vector<KnowledgeTrunk> trunks;
  trunks.reserve(n_trunks);
  for (std::size_t i = 0; i < n_trunks; ++i) {
    const json j = next_object("trunk");
    try {
      trunks.push_back(j.get<KnowledgeTrunk>());
    } catch (const std::exception& e) {
      throw LoadError(path, lineno, e.what());
    }
  }

  std::vector<EmbeddingRecord> records;
  records.reserve(n_records);
  for (std::size_t i = 0; i < n_records; ++i) {
    const json j = next_object("record");
    try {
      EmbeddingRecord r;
      r.trunk_id = require_string(j, "trunk_id");
      r.key_kind = parse_key_kind(require_string(j, "key_kind"));
      const auto& vec = require(j, "vector");
      if (!vec.is_array()) throw ValidationError("vector", "expected an array");
      r.vector = vec.get<std::vector<double>>();
      const auto d = require(j, "dim").get<std::size_t>();
      if (d != r.vector.size())
        throw DimensionError(fmt::format("dim {} but vector has {} entries", d, r.vector.size()));
      records.push_back(std::move(r));
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      throw LoadError(path, lineno, e.what());
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!text::trim(line).empty()) throw LoadError(path, lineno, "unexpected trailing content");
  }
  try {
    return KnowledgeStore(std::move(trunks), std::move(records), std::move(embedder));
  } catch (const std::exception& e) {
    throw LoadError(path, 0, e.what());
  }
}

std::vector<KnowledgeTrunk> read_trunks_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path, 0, "cannot open file");
  std::vector<KnowledgeTrunk> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line).get<KnowledgeTrunk>());
    } catch (const std::exception& e) {
      throw LoadError(path, lineno, e.what());
    }
  }
  return out;
}

void write_trunks_file(const std::filesystem::path& path, std::span<const KnowledgeTrunk> trunks) {
  std::string out;
  for (const auto& t : trunks) {
    out += json(t).dump();
    out += '\n';
  }
  write_file(path, out);
}

std::map<std::string, std::string> read_snippets_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path, 0, "cannot open file");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      auto id = require_string(j, "trunk_id");
      if (!out.emplace(id, require_string(j, "code")).second)
        throw ValidationError("trunk_id", "duplicate snippet for '" + id + "'");
    } catch (const std::exception& e) {
      throw LoadError(path, lineno, e.what());
    }
  }
  return out;
}

void write_snippets_file(const std::filesystem::path& path,
                         const std::map<std::string, std::string>& snippets) {
  std::string out;
  for (const auto& [id, code] : snippets) {
    out += json{{"trunk_id", id}, {"code", code}}.dump();
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace ctfagent
