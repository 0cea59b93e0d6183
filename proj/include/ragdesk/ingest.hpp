#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/common.hpp"

namespace ragdesk::ingest {

/// A token plus the UTF-8 byte range it was read from.
struct TokenSpan {
    std::string text;
    std::size_t byte_start = 0;
    std::size_t byte_end = 0;
};

/// Lowercased maximal runs of Unicode alphanumerics; everything else separates.
std::vector<std::string> tokenize(std::string_view text);
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);

/// Built-in English stopword list (lowercase).
const std::set<std::string, std::less<>>& stopwords();
bool is_stopword(std::string_view token);

enum class Format { plain, markdown, html };

std::string_view to_string(Format f);
/// Throws Error(unsupported_format).
Format parse_format(std::string_view text);

struct Section {
    std::vector<std::string> path;  // empty for the root section
    std::size_t char_start = 0;     // byte offsets into Document::body
    std::size_t char_end = 0;
    int level = 1;

    friend bool operator==(const Section&, const Section&) = default;
};

using Acl = std::set<std::string>;
using Metadata = std::map<std::string, std::string>;

struct Document {
    std::string doc_id;
    std::string uri;
    std::string title;
    std::string body;
    Format format = Format::plain;
    std::vector<Section> sections;
    Acl acl;
    Sensitivity sensitivity = Sensitivity::internal;
    std::string modified_at;  // ISO-8601 UTC
    Metadata metadata;

    friend bool operator==(const Document&, const Document&) = default;
};

/// Parses raw content into a Document. `doc_id` defaults to `uri`.
///
/// Markdown ATX headings (`#`..`######`) and HTML `<h1>`..`<h6>` open sections;
/// each section runs to the next heading of any level, so sections never
/// overlap. HTML tags are stripped and basic entities decoded. Throws
/// Error(empty_acl) when `acl` is empty.
Document parse_document(std::string_view raw, Format format, std::string_view uri, const Acl& acl,
                        Sensitivity sensitivity);

/// Adds "keywords", "heading_terms" and "doc_title". Idempotent.
///
/// List-valued keys are comma-joined token lists.
Document enrich_metadata(Document doc);

enum class ChunkMode { sliding, section_aware };

std::string_view to_string(ChunkMode m);
ChunkMode parse_chunk_mode(std::string_view text);

struct ChunkingConfig {
    int chunk_tokens = 128;
    int overlap_tokens = 16;
    ChunkMode mode = ChunkMode::section_aware;
    bool prepend_section_path = true;

    /// Throws Error(config_invalid).
    void validate() const;

    friend bool operator==(const ChunkingConfig&, const ChunkingConfig&) = default;
};

struct Chunk {
    std::string chunk_id;  // "<doc_id>#<ordinal>"
    std::string doc_id;
    std::string uri;
    int ordinal = 0;
    std::string text;
    std::size_t token_start = 0;
    std::size_t token_end = 0;
    std::vector<std::string> section_path;
    Acl acl;
    Sensitivity sensitivity = Sensitivity::internal;
    Metadata metadata;

    friend bool operator==(const Chunk&, const Chunk&) = default;
};

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg);

/// Half-open token windows [start, end) produced by the sliding procedure over
/// `token_count` tokens.
std::vector<std::pair<std::size_t, std::size_t>> sliding_windows(std::size_t token_count,
                                                                 int chunk_tokens,
                                                                 int overlap_tokens);

// Corpus manifest: JSONL with fields doc_id, uri, format, acl, sensitivity,
// modified_at, body.

struct ManifestEntry {
    std::string doc_id;
    std::string uri;
    Format format = Format::plain;
    Acl acl;
    Sensitivity sensitivity = Sensitivity::internal;
    std::string modified_at;
    std::string body;
};

ManifestEntry manifest_entry_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ManifestEntry& e);

/// Parses and enriches every line. Errors carry the 1-based line number.
/// Duplicate doc_ids are rejected.
std::vector<Document> load_manifest(std::istream& in, std::string_view source_name = "<manifest>");
std::vector<Document> load_manifest_file(const std::string& path);

Document document_from_entry(const ManifestEntry& e);

nlohmann::json to_json(const Chunk& c);
Chunk chunk_from_json(const nlohmann::json& j);

}  // namespace ragdesk::ingest
