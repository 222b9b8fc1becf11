#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctfagent/common.hpp"

namespace ctfagent {

/// One unit of CTF technical knowledge.
struct KnowledgeTrunk {
  std::string id;
  std::string scenario;
  std::string exploit_method;
  std::string example_payload;  // may be empty
  Category category = Category::Misc;
  std::string source_writeup_id;

  /// Scenario, exploit method and payload joined; this is what TrunkText keys embed.
  std::string text() const;

  friend bool operator==(const KnowledgeTrunk&, const KnowledgeTrunk&) = default;
};

enum class KeyKind { CodeSnippet, TrunkText };

std::string_view to_string(KeyKind k);  // "code" | "trunk"
KeyKind parse_key_kind(std::string_view s);

struct EmbeddingRecord {
  std::string trunk_id;
  KeyKind key_kind = KeyKind::TrunkText;
  std::vector<double> vector;

  std::size_t dim() const { return vector.size(); }
  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct RetrievalHit {
  std::string trunk_id;
  double score = 0.0;
  friend bool operator==(const RetrievalHit&, const RetrievalHit&) = default;
};

using Embedding = std::vector<double>;
using Embedder = std::function<Embedding(std::string_view)>;

/// dot(a,b)/(|a||b|); 0 when either norm is zero. Throws DimensionError on length mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Deterministic offline embedder: lowercase identifier/number tokens hashed into
/// `dim` buckets, then L2-normalised. Empty or token-free text maps to the zero vector.
class HashingEmbedder {
 public:
  static constexpr std::string_view kName = "hashing-v1";
  static constexpr std::size_t kDefaultDim = 256;

  explicit HashingEmbedder(std::size_t dim = kDefaultDim);

  Embedding operator()(std::string_view text) const;
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_;
};

std::vector<std::string> tokenize(std::string_view text);

inline constexpr std::size_t kDefaultUnderstandingK = 2;
inline constexpr std::size_t kDefaultExploitingK = 1;
inline constexpr double kDefaultMinScore = 0.1;

/// Immutable after construction; const member functions are safe to call concurrently.
class KnowledgeStore {
 public:
  KnowledgeStore() = default;

  /// Validates ids, record references and per-kind dimensions.
  KnowledgeStore(std::vector<KnowledgeTrunk> trunks, std::vector<EmbeddingRecord> records,
                 std::string embedder_name = std::string(HashingEmbedder::kName));

  /// One TrunkText record per trunk plus one CodeSnippet record per snippet.
  static KnowledgeStore build(std::vector<KnowledgeTrunk> trunks,
                              const std::map<std::string, std::string>& snippets,
                              const Embedder& embedder,
                              std::string embedder_name = std::string(HashingEmbedder::kName));

  std::vector<RetrievalHit> retrieve(std::string_view query_text, KeyKind kind, std::size_t k,
                                     double min_score, const Embedder& embedder) const;
  std::vector<RetrievalHit> retrieve(std::span<const double> query, KeyKind kind, std::size_t k,
                                     double min_score) const;

  const std::vector<KnowledgeTrunk>& trunks() const noexcept { return trunks_; }
  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }
  const KnowledgeTrunk* find(std::string_view trunk_id) const;
  std::size_t count(KeyKind kind) const;
  /// 0 when the store holds no records of that kind.
  std::size_t dim(KeyKind kind) const;
  const std::string& embedder_name() const noexcept { return embedder_name_; }

  void save(const std::filesystem::path& path) const;
  static KnowledgeStore load(const std::filesystem::path& path);

  friend bool operator==(const KnowledgeStore& a, const KnowledgeStore& b) {
    return a.trunks_ == b.trunks_ && a.records_ == b.records_ &&
           a.embedder_name_ == b.embedder_name_;
  }

 private:
  std::vector<KnowledgeTrunk> trunks_;
  std::vector<EmbeddingRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::string embedder_name_ = std::string(HashingEmbedder::kName);
};

void to_json(nlohmann::json& j, const KnowledgeTrunk& t);
/// Throws ValidationError naming the offending field.
void from_json(const nlohmann::json& j, KnowledgeTrunk& t);

/// Trunks file: one JSON object per line.
std::vector<KnowledgeTrunk> read_trunks_file(const std::filesystem::path& path);
void write_trunks_file(const std::filesystem::path& path, std::span<const KnowledgeTrunk> trunks);
/// Snippets file: one {"trunk_id", "code"} object per line.
std::map<std::string, std::string> read_snippets_file(const std::filesystem::path& path);
void write_snippets_file(const std::filesystem::path& path,
                         const std::map<std::string, std::string>& snippets);

}  // namespace ctfagent
