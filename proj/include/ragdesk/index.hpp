#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/common.hpp"
#include "ragdesk/ingest.hpp"

namespace ragdesk::index {

inline constexpr std::size_t kDefaultDimension = 1024;
inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;
inline constexpr double kRrfConstant = 60.0;
inline constexpr int kCandidateMultiplier = 4;
/// Cosine values at or below this are treated as no similarity (rounding noise).
inline constexpr double kMinSimilarity = 1e-12;

struct Embedding {
    std::vector<double> values;
    /// Signed slot counts behind `values` for count-based embedders, sorted
    /// by slot. Empty for other embedders.
    std::vector<std::pair<std::uint32_t, std::int64_t>> counts;

    [[nodiscard]] bool is_zero() const;
};

double dot(const Embedding& a, const Embedding& b);
/// Cosine of two embeddings. When both carry counts the value is
/// sqrt(D^2 / (|a|^2 |b|^2)) from exact integers, so equal similarities
/// compare equal; otherwise the dot product of the normalised values.
double cosine(const Embedding& a, const Embedding& b);

/// FNV-1a 64-bit over the bytes of `s`.
std::uint64_t fnv1a64(std::string_view s);

/// Text embedder interface; the built-in implementation is `HashingEmbedder`.
class Embedder {
public:
    virtual ~Embedder() = default;
    [[nodiscard]] virtual Embedding embed(std::string_view text) const = 0;
    [[nodiscard]] virtual std::size_t dimension() const = 0;
};

/// Feature-hashed bag of tokens: slot = hash mod d, sign from bit 63
/// (set => -1), then L2-normalised. Empty input gives the zero vector.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dimension = kDefaultDimension);
    [[nodiscard]] Embedding embed(std::string_view text) const override;
    [[nodiscard]] std::size_t dimension() const override { return dimension_; }

private:
    std::size_t dimension_;
};

Embedding embed(std::string_view text, std::size_t dimension = kDefaultDimension);

struct Principal {
    std::string user_id;
    std::set<std::string> groups;
    Sensitivity clearance = Sensitivity::internal;
};

/// {"user_id", "groups": [...], "clearance"}; clearance defaults to internal.
Principal principal_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Principal& p);

/// ACL intersection and clearance check; the single retrieval-time gate.
bool permits(const Principal& who, const ingest::Chunk& chunk);

enum class Fusion { lexical, vector, rrf };

std::string_view to_string(Fusion f);
Fusion parse_fusion(std::string_view text);

struct ScoredHit {
    std::string chunk_id;
    std::string doc_id;
    std::optional<double> lexical_score;
    std::optional<int> lexical_rank;
    std::optional<double> vector_score;
    std::optional<int> vector_rank;
    double fused_score = 0.0;
    std::shared_ptr<const ingest::Chunk> chunk;
};

/// Sum of 1/(60 + rank) over the ranks that are present.
double rrf_score(std::optional<int> lexical_rank, std::optional<int> vector_rank);

nlohmann::json to_json(const ScoredHit& hit, bool include_text = false);

struct IndexStats {
    std::size_t chunk_count = 0;
    std::size_t document_count = 0;
    std::size_t total_tokens = 0;
    double average_length = 0.0;
};

/// Lexical (BM25) plus vector (cosine) index over chunks.
///
/// Searches take a shared lock for their whole duration; upserts and deletes
/// take an exclusive lock, so a reader sees a document's chunks either all
/// before or all after a replacement. Access filtering happens before top-k
/// truncation in every search path.
class HybridIndex {
public:
    explicit HybridIndex(std::shared_ptr<const Embedder> embedder = nullptr);

    HybridIndex(const HybridIndex&) = delete;
    HybridIndex& operator=(const HybridIndex&) = delete;

    /// Replaces all chunks of every doc_id present in `chunks`. Returns the
    /// number of chunks inserted.
    std::size_t upsert_chunks(const std::vector<ingest::Chunk>& chunks);
    std::size_t delete_document(const std::string& doc_id);
    void clear();

    [[nodiscard]] std::vector<ScoredHit> lexical_search(std::string_view query, int k,
                                                        const Principal& who) const;
    [[nodiscard]] std::vector<ScoredHit> vector_search(std::string_view query, int k,
                                                       const Principal& who) const;
    [[nodiscard]] std::vector<ScoredHit> hybrid_search(std::string_view query, int k,
                                                       const Principal& who, Fusion fusion) const;

    [[nodiscard]] IndexStats stats() const;
    [[nodiscard]] std::shared_ptr<const ingest::Chunk> find_chunk(const std::string& chunk_id) const;
    [[nodiscard]] std::vector<std::shared_ptr<const ingest::Chunk>> all_chunks() const;
    [[nodiscard]] std::size_t document_frequency(const std::string& term) const;

    /// Writes `index.stats.json` and `segment-000.jsonl` into `dir`.
    void save(const std::string& dir) const;
    /// Replaces the current contents with a saved snapshot.
    void load(const std::string& dir);

private:
    struct Entry {
        std::shared_ptr<const ingest::Chunk> chunk;
        std::unordered_map<std::string, std::uint32_t> term_freq;
        std::size_t length = 0;
        Embedding embedding;
    };

    void remove_locked(const std::string& doc_id);
    void insert_locked(const ingest::Chunk& chunk);
    std::vector<ScoredHit> lexical_locked(std::string_view query, int k, const Principal& who) const;
    std::vector<ScoredHit> vector_locked(std::string_view query, int k, const Principal& who) const;

    std::shared_ptr<const Embedder> embedder_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, Entry> entries_;  // keyed by chunk_id
    std::map<std::string, std::vector<std::string>> doc_chunks_;
    std::unordered_map<std::string, std::map<std::string, std::uint32_t>> postings_;
    std::size_t total_tokens_ = 0;
};

}  // namespace ragdesk::index
