#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ragdesk/index.hpp"
#include "ragdesk/ingest.hpp"

namespace fixture {

inline ragdesk::ingest::Chunk chunk(const std::string& id, const std::string& text,
                                  ragdesk::ingest::Acl acl = {"all"},
                                  ragdesk::Sensitivity s = ragdesk::Sensitivity::internal) {
    ragdesk::ingest::Chunk c;
    c.chunk_id = id;
    c.doc_id = id;
    c.uri = "kb://" + id;
    c.text = text;
    c.token_end = ragdesk::ingest::tokenize(text).size();
    c.acl = std::move(acl);
    c.sensitivity = s;
    return c;
}

inline ragdesk::index::Principal everyone() {
    return {"tester", {"all"}, ragdesk::Sensitivity::restricted};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() /
             ("ragdesk-" + tag + "-" + std::to_string(rng() % 1000000000ULL));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Random text over a small vocabulary: "t0" .. "t<vocab-1>".
inline std::string random_text(std::mt19937& rng, int vocab, int min_len, int max_len) {
    const int len = min_len + static_cast<int>(rng() % static_cast<unsigned>(max_len - min_len + 1));
    std::string s;
    for (int i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += "t" + std::to_string(rng() % static_cast<unsigned>(vocab));
    }
    return s;
}

}  // namespace fixture
