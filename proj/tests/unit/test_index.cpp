#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ragdesk/index.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ragdesk;
using namespace ragdesk::index;
using Catch::Matchers::WithinAbs;

namespace {

void load_apples(HybridIndex& idx) {
    idx.upsert_chunks({fixture::chunk("d1", "apple banana", {"fruit"}),
                       fixture::chunk("d2", "apple apple", {"orchard"}),
                       fixture::chunk("d3", "cherry", {"fruit"})});
}

std::vector<std::string> ids(const std::vector<ScoredHit>& hits) {
    std::vector<std::string> out;
    for (const auto& h : hits) out.push_back(h.chunk_id);
    return out;
}

}  // namespace

TEST_CASE("bm25 apple example", "[index]") {
    HybridIndex idx;
    load_apples(idx);
    const Principal all{"u", {"fruit", "orchard"}, Sensitivity::internal};

    const auto hits = idx.lexical_search("apple", 10, all);
    REQUIRE(ids(hits) == std::vector<std::string>{"d2", "d1"});
    CHECK_THAT(*hits[0].lexical_score, WithinAbs(0.6118, 1e-3));
    CHECK_THAT(*hits[1].lexical_score, WithinAbs(0.4344, 1e-3));
    CHECK(*hits[0].lexical_rank == 1);

    // Hand evaluation: N=3, df=2, avgdl=5/3.
    const double idf = std::log(1.6);
    const double norm = 1.0 - 0.75 + 0.75 * (2.0 / (5.0 / 3.0));
    CHECK_THAT(*hits[0].lexical_score, WithinAbs(idf * 2 * 2.2 / (2 + 1.2 * norm), 1e-12));
    CHECK_THAT(*hits[1].lexical_score, WithinAbs(idf * 2.2 / (1 + 1.2 * norm), 1e-12));

    CHECK(ids(idx.lexical_search("cherry", 10, all)) == std::vector<std::string>{"d3"});
    const Principal no_orchard{"u", {"fruit"}, Sensitivity::internal};
    CHECK(ids(idx.lexical_search("apple", 10, no_orchard)) == std::vector<std::string>{"d1"});
    CHECK(idx.lexical_search("", 10, all).empty());
}

TEST_CASE("lexical search matches the full scan oracle", "[index]") {
    std::mt19937 rng(11);
    HybridIndex idx;
    std::vector<oracle::Doc> docs;
    std::vector<ingest::Chunk> chunks;
    for (int i = 0; i < 150; ++i) {
        const std::string id = "c" + std::to_string(i);
        const bool open = rng() % 4 != 0;
        chunks.push_back(fixture::chunk(id, fixture::random_text(rng, 40, 1, 25), {open ? "all" : "other"}));
        docs.push_back({id, chunks.back().text, open});
    }
    idx.upsert_chunks(chunks);
    for (int q = 0; q < 30; ++q) {
        const auto query = fixture::random_text(rng, 50, 1, 4);
        const auto got = idx.lexical_search(query, 10, fixture::everyone());
        const auto want = oracle::bm25(docs, query, 10);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].chunk_id == want[i].id);
            CHECK_THAT(*got[i].lexical_score, WithinAbs(want[i].score, 1e-9));
        }
    }
}

TEST_CASE("embedding", "[index]") {
    const auto a = embed("alpha beta");
    CHECK(a.values == embed("alpha beta").values);
    CHECK_THAT(dot(a, a), WithinAbs(1.0, 1e-9));
    CHECK(embed("").is_zero());
    CHECK(embed("?!").is_zero());

    const auto ha = oracle::hashed_counts("alpha beta");
    const auto hb = oracle::hashed_counts("gamma delta");
    bool collide = false;
    for (const auto& [slot, c] : ha) collide = collide || hb.count(slot);
    REQUIRE_FALSE(collide);
    CHECK_THAT(dot(a, embed("gamma delta")), WithinAbs(0.0, 1e-9));
    CHECK(cosine(a, embed("gamma delta")) == 0.0);

    // Equal similarities from different count profiles compare equal.
    const auto q = embed("alpha");
    const auto once = embed("alpha beta");
    const auto thrice = embed("alpha alpha alpha beta beta beta");
    CHECK(cosine(q, once) == cosine(q, thrice));
    CHECK_THAT(cosine(q, once), WithinAbs(dot(q, once), 1e-12));
    CHECK_THAT(cosine(q, once), WithinAbs(std::sqrt(0.5), 1e-15));

    CHECK(fnv1a64("") == 14695981039346656037ull);
    CHECK(fnv1a64("a") == oracle::fnv1a("a"));
}

TEST_CASE("vector search", "[index]") {
    HybridIndex idx;
    load_apples(idx);
    idx.upsert_chunks({fixture::chunk("d4", "red cherry pie", {"fruit"})});
    const auto hits = idx.vector_search("red cherry pie", 10, fixture::everyone());
    CHECK(hits.empty());  // no group in common
    const Principal p{"u", {"fruit", "orchard"}, Sensitivity::internal};
    const auto hits2 = idx.vector_search("red cherry pie", 10, p);
    REQUIRE_FALSE(hits2.empty());
    CHECK(hits2[0].chunk_id == "d4");
    CHECK_THAT(*hits2[0].vector_score, WithinAbs(1.0, 1e-9));
    CHECK(idx.vector_search("", 10, p).empty());
}

TEST_CASE("vector search matches the cosine oracle", "[index]") {
    std::mt19937 rng(5);
    HybridIndex idx;
    std::vector<oracle::Doc> docs;
    std::vector<ingest::Chunk> chunks;
    for (int i = 0; i < 100; ++i) {
        const std::string id = "v" + std::to_string(i);
        chunks.push_back(fixture::chunk(id, fixture::random_text(rng, 200, 2, 20)));
        docs.push_back({id, chunks.back().text, true});
    }
    idx.upsert_chunks(chunks);
    for (int q = 0; q < 20; ++q) {
        const auto query = fixture::random_text(rng, 200, 1, 5);
        const auto got = idx.vector_search(query, 10, fixture::everyone());
        const auto want = oracle::cosine(docs, query, 10);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].chunk_id == want[i].id);
            CHECK_THAT(*got[i].vector_score, WithinAbs(want[i].score, 1e-9));
        }
    }
}

TEST_CASE("rrf fusion", "[index]") {
    CHECK_THAT(rrf_score(1, 1), WithinAbs(2.0 / 61, 1e-15));
    CHECK_THAT(rrf_score(1, 1), WithinAbs(0.032787, 1e-6));
    CHECK_THAT(rrf_score(2, std::nullopt), WithinAbs(0.016129, 1e-6));
    CHECK(rrf_score(std::nullopt, 2) == rrf_score(2, std::nullopt));
    CHECK(rrf_score(std::nullopt, std::nullopt) == 0.0);

    HybridIndex idx;
    load_apples(idx);
    const Principal p{"u", {"fruit", "orchard"}, Sensitivity::internal};
    for (const auto* q : {"apple", "apple cherry", "banana", "cherry pie"}) {
        const auto hits = idx.hybrid_search(q, 3, p, Fusion::rrf);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            const auto& h = hits[i];
            CHECK((h.lexical_rank || h.vector_rank));
            CHECK(h.fused_score == rrf_score(h.lexical_rank, h.vector_rank));
            if (i > 0) {
                CHECK((hits[i - 1].fused_score > h.fused_score ||
                       (hits[i - 1].fused_score == h.fused_score && hits[i - 1].chunk_id < h.chunk_id)));
            }
        }
        CHECK(ids(idx.hybrid_search(q, 3, p, Fusion::lexical)) == ids(idx.lexical_search(q, 3, p)));
        CHECK(ids(idx.hybrid_search(q, 3, p, Fusion::vector)) == ids(idx.vector_search(q, 3, p)));
    }
}

TEST_CASE("filtering happens before truncation", "[index]") {
    HybridIndex idx;
    std::vector<ingest::Chunk> chunks;
    for (int i = 0; i < 10; ++i) {
        chunks.push_back(fixture::chunk("secret" + std::to_string(i), "budget budget budget", {"all"},
                                        Sensitivity::restricted));
    }
    chunks.push_back(fixture::chunk("open", "budget plan notes", {"all"}, Sensitivity::public_));
    idx.upsert_chunks(chunks);
    const Principal reader{"u", {"all"}, Sensitivity::internal};
    CHECK(ids(idx.lexical_search("budget", 1, reader)) == std::vector<std::string>{"open"});
    CHECK(ids(idx.vector_search("budget", 1, reader)) == std::vector<std::string>{"open"});
    CHECK(ids(idx.hybrid_search("budget", 1, reader, Fusion::rrf)) == std::vector<std::string>{"open"});

    const auto k3 = ids(idx.lexical_search("budget", 3, fixture::everyone()));
    const auto k6 = ids(idx.lexical_search("budget", 6, fixture::everyone()));
    CHECK(std::equal(k3.begin(), k3.end(), k6.begin()));
}

TEST_CASE("upsert replaces and delete removes", "[index]") {
    HybridIndex idx;
    load_apples(idx);
    CHECK(idx.stats().chunk_count == 3);
    CHECK(idx.upsert_chunks({fixture::chunk("d1", "kiwi", {"fruit"})}) == 1);
    CHECK(idx.stats().chunk_count == 3);
    const Principal p{"u", {"fruit", "orchard"}, Sensitivity::internal};
    CHECK(ids(idx.lexical_search("banana", 5, p)).empty());
    CHECK(ids(idx.lexical_search("kiwi", 5, p)) == std::vector<std::string>{"d1"});
    CHECK(idx.document_frequency("apple") == 1);

    CHECK(idx.delete_document("d2") == 1);
    CHECK(idx.delete_document("nope") == 0);
    CHECK(idx.lexical_search("apple", 5, p).empty());
    CHECK(idx.vector_search("apple apple", 5, p).empty());
    idx.upsert_chunks({fixture::chunk("d2", "apple apple", {"orchard"})});
    CHECK(ids(idx.lexical_search("apple", 5, p)) == std::vector<std::string>{"d2"});
}

TEST_CASE("snapshot round trip", "[index]") {
    HybridIndex idx;
    load_apples(idx);
    const auto dir = fixture::temp_dir("snapshot");
    idx.save(dir.string());
    CHECK(std::filesystem::exists(dir / "index.stats.json"));
    HybridIndex copy;
    copy.load(dir.string());
    const Principal p{"u", {"fruit", "orchard"}, Sensitivity::internal};
    const auto a = idx.hybrid_search("apple banana", 5, p, Fusion::rrf);
    const auto b = copy.hybrid_search("apple banana", 5, p, Fusion::rrf);
    REQUIRE(ids(a) == ids(b));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].fused_score == b[i].fused_score);
    std::filesystem::remove_all(dir);
}

TEST_CASE("principal json", "[index]") {
    const auto p = principal_from_json({{"id", "ann"}, {"groups", {"a", "b"}}});
    CHECK(p.user_id == "ann");
    CHECK(p.clearance == Sensitivity::internal);
    CHECK(p.groups.size() == 2);
    CHECK_THROWS_AS(principal_from_json({{"groups", "a"}}), Error);
}
