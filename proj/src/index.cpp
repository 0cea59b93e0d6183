#include "ragdesk/index.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>

namespace ragdesk::index {

using nlohmann::json;

bool Embedding::is_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

double dot(const Embedding& a, const Embedding& b) {
    const std::size_t n = std::min(a.values.size(), b.values.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += a.values[i] * b.values[i];
    return sum;
}

double cosine(const Embedding& a, const Embedding& b) {
    if (a.counts.empty() || b.counts.empty()) return dot(a, b);
    std::int64_t d = 0, na = 0, nb = 0;
    for (const auto& [slot, c] : a.counts) na += c * c;
    for (const auto& [slot, c] : b.counts) nb += c * c;
    auto i = a.counts.begin();
    auto j = b.counts.begin();
    while (i != a.counts.end() && j != b.counts.end()) {
        if (i->first < j->first) {
            ++i;
        } else if (j->first < i->first) {
            ++j;
        } else {
            d += i->second * j->second;
            ++i;
            ++j;
        }
    }
    if (d == 0) return 0.0;
    const long double p = static_cast<long double>(na) * static_cast<long double>(nb);
    const long double r = std::sqrt(static_cast<long double>(d) * static_cast<long double>(d) / p);
    return d > 0 ? static_cast<double>(r) : -static_cast<double>(r);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
    if (dimension_ == 0) throw Error(ErrorCode::config_invalid, "embedding dimension must be > 0");
}

Embedding HashingEmbedder::embed(std::string_view text) const {
    Embedding e;
    e.values.assign(dimension_, 0.0);
    std::map<std::uint32_t, std::int64_t> counts;
    for (const auto& tok : ingest::tokenize(text)) {
        const std::uint64_t h = fnv1a64(tok);
        const std::size_t slot = static_cast<std::size_t>(h % dimension_);
        const int sign = (h >> 63) ? -1 : 1;
        e.values[slot] += sign;
        counts[static_cast<std::uint32_t>(slot)] += sign;
    }
    for (const auto& [slot, c] : counts) {
        if (c != 0) e.counts.emplace_back(slot, c);
    }
    double norm = 0.0;
    for (double v : e.values) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : e.values) v /= norm;
    }
    return e;
}

Embedding embed(std::string_view text, std::size_t dimension) {
    return HashingEmbedder(dimension).embed(text);
}

Principal principal_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::bad_request, "principal must be an object");
    Principal p;
    try {
        p.user_id = j.value("user_id", j.value("id", ""));
        const auto groups = j.value("groups", nlohmann::json::array());
        if (!groups.is_array()) throw Error(ErrorCode::bad_request, "principal: groups must be a list");
        for (const auto& g : groups) p.groups.insert(g.get<std::string>());
        if (j.contains("clearance")) p.clearance = parse_sensitivity(j.at("clearance").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::bad_request, std::string("principal: ") + e.what());
    }
    return p;
}

nlohmann::json to_json(const Principal& p) {
    return nlohmann::json{{"user_id", p.user_id}, {"groups", p.groups}, {"clearance", ragdesk::to_string(p.clearance)}};
}

bool permits(const Principal& who, const ingest::Chunk& chunk) {
    if (chunk.sensitivity > who.clearance) return false;
    // Both sides are sorted sets.
    auto a = chunk.acl.begin();
    auto b = who.groups.begin();
    while (a != chunk.acl.end() && b != who.groups.end()) {
        if (*a == *b) return true;
        if (*a < *b) ++a;
        else ++b;
    }
    return false;
}

std::string_view to_string(Fusion f) {
    switch (f) {
        case Fusion::lexical: return "lexical";
        case Fusion::vector: return "vector";
        case Fusion::rrf: return "rrf";
    }
    return "rrf";
}

Fusion parse_fusion(std::string_view text) {
    if (text == "lexical") return Fusion::lexical;
    if (text == "vector") return Fusion::vector;
    if (text == "rrf") return Fusion::rrf;
    throw Error(ErrorCode::config_invalid, "unknown fusion '" + std::string(text) + "'");
}

double rrf_score(std::optional<int> lexical_rank, std::optional<int> vector_rank) {
    double s = 0.0;
    if (lexical_rank) s += 1.0 / (kRrfConstant + *lexical_rank);
    if (vector_rank) s += 1.0 / (kRrfConstant + *vector_rank);
    return s;
}

json to_json(const ScoredHit& hit, bool include_text) {
    json j{{"chunk_id", hit.chunk_id}, {"doc_id", hit.doc_id}, {"fused_score", hit.fused_score}};
    j["lexical_score"] = hit.lexical_score ? json(*hit.lexical_score) : json(nullptr);
    j["lexical_rank"] = hit.lexical_rank ? json(*hit.lexical_rank) : json(nullptr);
    j["vector_score"] = hit.vector_score ? json(*hit.vector_score) : json(nullptr);
    j["vector_rank"] = hit.vector_rank ? json(*hit.vector_rank) : json(nullptr);
    if (hit.chunk) {
        j["uri"] = hit.chunk->uri;
        if (include_text) j["text"] = hit.chunk->text;
    }
    return j;
}

namespace {

bool by_score_then_id(const std::pair<double, const std::string*>& a,
                      const std::pair<double, const std::string*>& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
}

}  // namespace

HybridIndex::HybridIndex(std::shared_ptr<const Embedder> embedder)
    : embedder_(embedder ? std::move(embedder) : std::make_shared<HashingEmbedder>()) {}

void HybridIndex::remove_locked(const std::string& doc_id) {
    auto it = doc_chunks_.find(doc_id);
    if (it == doc_chunks_.end()) return;
    for (const auto& chunk_id : it->second) {
        auto e = entries_.find(chunk_id);
        if (e == entries_.end()) continue;
        for (const auto& [term, tf] : e->second.term_freq) {
            auto p = postings_.find(term);
            if (p == postings_.end()) continue;
            p->second.erase(chunk_id);
            if (p->second.empty()) postings_.erase(p);
        }
        total_tokens_ -= e->second.length;
        entries_.erase(e);
    }
    doc_chunks_.erase(it);
}

void HybridIndex::insert_locked(const ingest::Chunk& chunk) {
    if (entries_.count(chunk.chunk_id) != 0) {
        throw Error(ErrorCode::validation, "duplicate chunk_id '" + chunk.chunk_id + "' in upsert");
    }
    Entry e;
    e.chunk = std::make_shared<const ingest::Chunk>(chunk);
    const auto tokens = ingest::tokenize(chunk.text);
    e.length = tokens.size();
    for (const auto& t : tokens) ++e.term_freq[t];
    e.embedding = embedder_->embed(chunk.text);
    for (const auto& [term, tf] : e.term_freq) postings_[term][chunk.chunk_id] = tf;
    total_tokens_ += e.length;
    doc_chunks_[chunk.doc_id].push_back(chunk.chunk_id);
    entries_.emplace(chunk.chunk_id, std::move(e));
}

std::size_t HybridIndex::upsert_chunks(const std::vector<ingest::Chunk>& chunks) {
    std::set<std::string> docs;
    std::set<std::string> ids;
    for (const auto& c : chunks) {
        docs.insert(c.doc_id);
        if (!ids.insert(c.chunk_id).second) {
            throw Error(ErrorCode::validation, "duplicate chunk_id '" + c.chunk_id + "' in upsert");
        }
    }
    std::unique_lock lock(mutex_);
    for (const auto& id : ids) {
        auto it = entries_.find(id);
        if (it != entries_.end() && docs.count(it->second.chunk->doc_id) == 0) {
            throw Error(ErrorCode::validation, "chunk_id '" + id + "' already belongs to another document");
        }
    }
    for (const auto& d : docs) remove_locked(d);
    for (const auto& c : chunks) insert_locked(c);
    return chunks.size();
}

std::size_t HybridIndex::delete_document(const std::string& doc_id) {
    std::unique_lock lock(mutex_);
    auto it = doc_chunks_.find(doc_id);
    if (it == doc_chunks_.end()) return 0;
    const std::size_t n = it->second.size();
    remove_locked(doc_id);
    return n;
}

void HybridIndex::clear() {
    std::unique_lock lock(mutex_);
    entries_.clear();
    doc_chunks_.clear();
    postings_.clear();
    total_tokens_ = 0;
}

std::vector<ScoredHit> HybridIndex::lexical_locked(std::string_view query, int k,
                                                   const Principal& who) const {
    std::vector<ScoredHit> out;
    if (k < 1 || entries_.empty()) return out;
    auto qtokens = ingest::tokenize(query);
    std::sort(qtokens.begin(), qtokens.end());
    qtokens.erase(std::unique(qtokens.begin(), qtokens.end()), qtokens.end());
    if (qtokens.empty()) return out;

    const double n_docs = static_cast<double>(entries_.size());
    const double avgdl = static_cast<double>(total_tokens_) / n_docs;
    std::map<std::string, double> scores;
    for (const auto& term : qtokens) {
        auto p = postings_.find(term);
        if (p == postings_.end()) continue;
        const double df = static_cast<double>(p->second.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const auto& [chunk_id, tf_raw] : p->second) {
            const auto& entry = entries_.at(chunk_id);
            if (!permits(who, *entry.chunk)) continue;
            const double tf = tf_raw;
            const double dl = static_cast<double>(entry.length);
            const double norm = avgdl > 0.0 ? dl / avgdl : 0.0;
            scores[chunk_id] += idf * tf * (kBm25K1 + 1.0) / (tf + kBm25K1 * (1.0 - kBm25B + kBm25B * norm));
        }
    }
    std::vector<std::pair<double, const std::string*>> ranked;
    ranked.reserve(scores.size());
    for (const auto& [id, s] : scores) ranked.emplace_back(s, &id);
    std::sort(ranked.begin(), ranked.end(), by_score_then_id);
    const std::size_t limit = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i) {
        const auto& entry = entries_.at(*ranked[i].second);
        ScoredHit h;
        h.chunk_id = entry.chunk->chunk_id;
        h.doc_id = entry.chunk->doc_id;
        h.lexical_score = ranked[i].first;
        h.lexical_rank = static_cast<int>(i + 1);
        h.chunk = entry.chunk;
        out.push_back(std::move(h));
    }
    return out;
}

std::vector<ScoredHit> HybridIndex::vector_locked(std::string_view query, int k,
                                                  const Principal& who) const {
    std::vector<ScoredHit> out;
    if (k < 1) return out;
    const Embedding q = embedder_->embed(query);
    if (q.is_zero()) return out;
    std::vector<std::pair<double, const std::string*>> ranked;
    for (const auto& [id, entry] : entries_) {
        if (!permits(who, *entry.chunk)) continue;
        const double s = cosine(q, entry.embedding);
        // Chunks with no positive similarity carry no signal for this query.
        if (s > kMinSimilarity) ranked.emplace_back(s, &id);
    }
    std::sort(ranked.begin(), ranked.end(), by_score_then_id);
    const std::size_t limit = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i) {
        const auto& entry = entries_.at(*ranked[i].second);
        ScoredHit h;
        h.chunk_id = entry.chunk->chunk_id;
        h.doc_id = entry.chunk->doc_id;
        h.vector_score = ranked[i].first;
        h.vector_rank = static_cast<int>(i + 1);
        h.chunk = entry.chunk;
        out.push_back(std::move(h));
    }
    return out;
}

std::vector<ScoredHit> HybridIndex::lexical_search(std::string_view query, int k,
                                                   const Principal& who) const {
    std::shared_lock lock(mutex_);
    return lexical_locked(query, k, who);
}

std::vector<ScoredHit> HybridIndex::vector_search(std::string_view query, int k,
                                                  const Principal& who) const {
    std::shared_lock lock(mutex_);
    return vector_locked(query, k, who);
}

std::vector<ScoredHit> HybridIndex::hybrid_search(std::string_view query, int k,
                                                  const Principal& who, Fusion fusion) const {
    if (k < 1) return {};
    std::shared_lock lock(mutex_);
    if (fusion == Fusion::lexical || fusion == Fusion::vector) {
        auto hits = fusion == Fusion::lexical ? lexical_locked(query, k, who) : vector_locked(query, k, who);
        for (auto& h : hits) h.fused_score = rrf_score(h.lexical_rank, h.vector_rank);
        return hits;
    }
    const int depth = kCandidateMultiplier * k;
    std::map<std::string, ScoredHit> merged;
    for (auto& h : lexical_locked(query, depth, who)) merged.emplace(h.chunk_id, std::move(h));
    for (auto& h : vector_locked(query, depth, who)) {
        auto [it, inserted] = merged.try_emplace(h.chunk_id, h);
        if (!inserted) {
            it->second.vector_score = h.vector_score;
            it->second.vector_rank = h.vector_rank;
        }
    }
    std::vector<ScoredHit> hits;
    hits.reserve(merged.size());
    for (auto& [id, h] : merged) {
        h.fused_score = rrf_score(h.lexical_rank, h.vector_rank);
        hits.push_back(std::move(h));
    }
    std::sort(hits.begin(), hits.end(), [](const ScoredHit& a, const ScoredHit& b) {
        if (a.fused_score != b.fused_score) return a.fused_score > b.fused_score;
        return a.chunk_id < b.chunk_id;
    });
    if (hits.size() > static_cast<std::size_t>(k)) hits.resize(static_cast<std::size_t>(k));
    return hits;
}

IndexStats HybridIndex::stats() const {
    std::shared_lock lock(mutex_);
    IndexStats s;
    s.chunk_count = entries_.size();
    s.document_count = doc_chunks_.size();
    s.total_tokens = total_tokens_;
    s.average_length = entries_.empty() ? 0.0 : static_cast<double>(total_tokens_) / entries_.size();
    return s;
}

std::shared_ptr<const ingest::Chunk> HybridIndex::find_chunk(const std::string& chunk_id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(chunk_id);
    return it == entries_.end() ? nullptr : it->second.chunk;
}

std::vector<std::shared_ptr<const ingest::Chunk>> HybridIndex::all_chunks() const {
    std::shared_lock lock(mutex_);
    std::vector<std::shared_ptr<const ingest::Chunk>> out;
    out.reserve(entries_.size());
    for (const auto& [id, e] : entries_) out.push_back(e.chunk);
    return out;
}

std::size_t HybridIndex::document_frequency(const std::string& term) const {
    std::shared_lock lock(mutex_);
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

void HybridIndex::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::shared_lock lock(mutex_);
    {
        std::ofstream seg(fs::path(dir) / "segment-000.jsonl", std::ios::trunc);
        if (!seg) throw Error(ErrorCode::validation, "cannot write index segment in '" + dir + "'");
        for (const auto& [id, e] : entries_) seg << ingest::to_json(*e.chunk).dump() << '\n';
    }
    json header{{"format", "ragdesk-index/1"},
                {"chunk_count", entries_.size()},
                {"document_count", doc_chunks_.size()},
                {"total_tokens", total_tokens_},
                {"embedding_dimension", embedder_->dimension()},
                {"segments", json::array({"segment-000.jsonl"})}};
    std::ofstream out(fs::path(dir) / "index.stats.json", std::ios::trunc);
    out << header.dump(2) << '\n';
}

void HybridIndex::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream hin(fs::path(dir) / "index.stats.json");
    if (!hin) throw Error(ErrorCode::not_found, "no index snapshot in '" + dir + "'");
    const json header = json::parse(hin);
    std::vector<ingest::Chunk> chunks;
    for (const auto& seg_name : header.at("segments")) {
        std::ifstream seg(fs::path(dir) / seg_name.get<std::string>());
        if (!seg) throw Error(ErrorCode::not_found, "missing index segment " + seg_name.get<std::string>());
        std::string line;
        while (std::getline(seg, line)) {
            if (!line.empty()) chunks.push_back(ingest::chunk_from_json(json::parse(line)));
        }
    }
    std::unique_lock lock(mutex_);
    entries_.clear();
    doc_chunks_.clear();
    postings_.clear();
    total_tokens_ = 0;
    for (const auto& c : chunks) insert_locked(c);
    if (entries_.size() != header.at("chunk_count").get<std::size_t>()) {
        throw Error(ErrorCode::validation, "index snapshot chunk count mismatch in '" + dir + "'");
    }
}

}  // namespace ragdesk::index
