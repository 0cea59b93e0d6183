#include "ragdesk/ingest.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <unordered_map>

namespace ragdesk::ingest {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
    std::vector<TokenSpan> out;
    const auto* s = reinterpret_cast<const uint8_t*>(text.data());
    const auto length = static_cast<int32_t>(text.size());
    int32_t i = 0;
    std::optional<TokenSpan> current;
    while (i < length) {
        const int32_t start = i;
        UChar32 c = 0;
        U8_NEXT(s, i, length, c);
        if (c >= 0 && u_isalnum(c)) {
            if (!current) current = TokenSpan{{}, static_cast<std::size_t>(start), 0};
            const UChar32 lower = u_tolower(c);
            char buf[U8_MAX_LENGTH];
            int32_t n = 0;
            U8_APPEND_UNSAFE(buf, n, lower);
            current->text.append(buf, static_cast<std::size_t>(n));
            current->byte_end = static_cast<std::size_t>(i);
        } else if (current) {
            out.push_back(std::move(*current));
            current.reset();
        }
    }
    if (current) out.push_back(std::move(*current));
    return out;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto& span : tokenize_with_offsets(text)) out.push_back(std::move(span.text));
    return out;
}

// ---------------------------------------------------------------------------
// Enumerations

std::string_view to_string(Format f) {
    switch (f) {
        case Format::plain: return "plain";
        case Format::markdown: return "markdown";
        case Format::html: return "html";
    }
    return "plain";
}

Format parse_format(std::string_view text) {
    if (text == "plain" || text == "text") return Format::plain;
    if (text == "markdown" || text == "md") return Format::markdown;
    if (text == "html") return Format::html;
    throw Error(ErrorCode::unsupported_format, "unsupported document format '" + std::string(text) + "'");
}

std::string_view to_string(ChunkMode m) {
    return m == ChunkMode::sliding ? "sliding" : "section_aware";
}

ChunkMode parse_chunk_mode(std::string_view text) {
    if (text == "sliding") return ChunkMode::sliding;
    if (text == "section_aware") return ChunkMode::section_aware;
    throw Error(ErrorCode::config_invalid, "unknown chunking mode '" + std::string(text) + "'");
}

void ChunkingConfig::validate() const {
    if (chunk_tokens <= 0) {
        throw Error(ErrorCode::config_invalid, "chunk_tokens must be > 0");
    }
    if (overlap_tokens < 0) {
        throw Error(ErrorCode::config_invalid, "overlap_tokens must be >= 0");
    }
    if (overlap_tokens >= chunk_tokens) {
        throw Error(ErrorCode::config_invalid, "overlap_tokens must be < chunk_tokens");
    }
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Heading {
    std::size_t offset;  // byte offset of the heading in the body
    int level;
    std::string text;
};

std::vector<Section> build_sections(const std::string& body, const std::vector<Heading>& headings) {
    std::vector<Section> sections;
    const std::size_t first = headings.empty() ? body.size() : headings.front().offset;
    const bool root_has_content =
        std::any_of(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(first),
                    [](unsigned char ch) { return !std::isspace(ch); });
    if (first > 0 && root_has_content) sections.push_back(Section{{}, 0, first, 1});

    std::vector<std::pair<int, std::string>> stack;
    for (std::size_t i = 0; i < headings.size(); ++i) {
        const auto& h = headings[i];
        while (!stack.empty() && stack.back().first >= h.level) stack.pop_back();
        stack.emplace_back(h.level, h.text);
        const std::size_t end = i + 1 < headings.size() ? headings[i + 1].offset : body.size();
        if (end <= h.offset) continue;
        Section sec;
        sec.level = h.level;
        sec.char_start = h.offset;
        sec.char_end = end;
        for (const auto& [lvl, txt] : stack) sec.path.push_back(txt);
        sections.push_back(std::move(sec));
    }
    return sections;
}

void parse_markdown(std::string_view raw, std::string& body, std::vector<Heading>& headings) {
    body.assign(raw);
    bool in_fence = false;
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t eol = body.find('\n', pos);
        if (eol == std::string::npos) eol = body.size();
        const std::string_view line(body.data() + pos, eol - pos);
        std::size_t indent = 0;
        while (indent < line.size() && indent < 3 && line[indent] == ' ') ++indent;
        const std::string_view rest = line.substr(indent);
        if (rest.starts_with("```") || rest.starts_with("~~~")) {
            in_fence = !in_fence;
        } else if (!in_fence && !rest.empty() && rest.front() == '#') {
            std::size_t hashes = 0;
            while (hashes < rest.size() && rest[hashes] == '#') ++hashes;
            const bool terminated = hashes == rest.size() || rest[hashes] == ' ' || rest[hashes] == '\t';
            if (hashes <= 6 && terminated) {
                std::string text = trim(rest.substr(hashes));
                while (!text.empty() && text.back() == '#') text.pop_back();
                headings.push_back(Heading{pos, static_cast<int>(hashes), trim(text)});
            }
        }
        pos = eol + 1;
    }
}

std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

void append_codepoint(std::string& out, UChar32 cp) {
    char buf[U8_MAX_LENGTH];
    int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf, n, U8_MAX_LENGTH, cp, error);
    if (!error) out.append(buf, static_cast<std::size_t>(n));
}

// Decodes the entity starting at raw[pos] == '&'. Returns consumed length, 0 if unknown.
std::size_t decode_entity(std::string_view raw, std::size_t pos, std::string& out) {
    const std::size_t semi = raw.find(';', pos);
    if (semi == std::string_view::npos || semi - pos > 10) return 0;
    const std::string_view name = raw.substr(pos + 1, semi - pos - 1);
    static const std::unordered_map<std::string_view, std::string_view> kNamed = {
        {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", " "},
    };
    if (auto it = kNamed.find(name); it != kNamed.end()) {
        out.append(it->second);
        return semi - pos + 1;
    }
    if (name.size() >= 2 && name.front() == '#') {
        long cp = 0;
        try {
            cp = (name[1] == 'x' || name[1] == 'X') ? std::stol(std::string(name.substr(2)), nullptr, 16)
                                                    : std::stol(std::string(name.substr(1)), nullptr, 10);
        } catch (const std::exception&) {
            return 0;
        }
        if (cp <= 0 || cp > 0x10FFFF) return 0;
        append_codepoint(out, static_cast<UChar32>(cp));
        return semi - pos + 1;
    }
    return 0;
}

void ensure_newline(std::string& out) {
    if (!out.empty() && out.back() != '\n') out.push_back('\n');
}

void parse_html(std::string_view raw, std::string& body, std::vector<Heading>& headings) {
    static const std::set<std::string, std::less<>> kBlock = {
        "p", "div", "br", "li", "ul", "ol", "tr", "table", "section", "article", "blockquote",
        "pre", "hr", "header", "footer", "main", "nav", "td", "th", "dd", "dt", "dl"};
    std::optional<Heading> open_heading;
    std::size_t i = 0;
    while (i < raw.size()) {
        const char ch = raw[i];
        if (ch == '<') {
            if (raw.compare(i, 4, "<!--") == 0) {
                const std::size_t end = raw.find("-->", i + 4);
                i = end == std::string_view::npos ? raw.size() : end + 3;
                continue;
            }
            const std::size_t close = raw.find('>', i + 1);
            if (close == std::string_view::npos) {
                body.append(raw.substr(i));
                break;
            }
            std::string_view tag = raw.substr(i + 1, close - i - 1);
            const bool closing = !tag.empty() && tag.front() == '/';
            if (closing) tag.remove_prefix(1);
            std::size_t name_end = 0;
            while (name_end < tag.size() && std::isalnum(static_cast<unsigned char>(tag[name_end]))) ++name_end;
            const std::string name = lower_ascii(tag.substr(0, name_end));
            i = close + 1;

            if (!closing && (name == "script" || name == "style" || name == "head")) {
                const std::string end_tag = "</" + name;
                std::size_t search = i;
                std::size_t found = std::string_view::npos;
                while (search < raw.size()) {
                    const std::size_t lt = raw.find("</", search);
                    if (lt == std::string_view::npos) break;
                    if (lower_ascii(raw.substr(lt, end_tag.size())) == end_tag) {
                        found = lt;
                        break;
                    }
                    search = lt + 2;
                }
                if (found == std::string_view::npos) {
                    i = raw.size();
                } else {
                    const std::size_t gt = raw.find('>', found);
                    i = gt == std::string_view::npos ? raw.size() : gt + 1;
                }
                continue;
            }
            const bool is_heading = name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '6';
            if (is_heading) {
                if (!closing) {
                    ensure_newline(body);
                    open_heading = Heading{body.size(), name[1] - '0', {}};
                } else if (open_heading) {
                    open_heading->text = trim(body.substr(open_heading->offset));
                    headings.push_back(std::move(*open_heading));
                    open_heading.reset();
                    ensure_newline(body);
                }
            } else if (kBlock.count(name) != 0) {
                ensure_newline(body);
            }
            continue;
        }
        if (ch == '&') {
            if (const std::size_t n = decode_entity(raw, i, body); n > 0) {
                i += n;
                continue;
            }
        }
        body.push_back(ch);
        ++i;
    }
    if (open_heading) {
        open_heading->text = trim(body.substr(open_heading->offset));
        headings.push_back(std::move(*open_heading));
    }
}

std::string uri_tail(std::string_view uri) {
    std::string_view u = uri;
    while (!u.empty() && u.back() == '/') u.remove_suffix(1);
    const auto slash = u.rfind('/');
    const std::string_view tail = slash == std::string_view::npos ? u : u.substr(slash + 1);
    return tail.empty() ? std::string(uri) : std::string(tail);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

}  // namespace

Document parse_document(std::string_view raw, Format format, std::string_view uri, const Acl& acl,
                        Sensitivity sensitivity) {
    if (acl.empty()) {
        throw Error(ErrorCode::empty_acl, "document '" + std::string(uri) + "' has an empty ACL");
    }
    Document doc;
    doc.doc_id = std::string(uri);
    doc.uri = std::string(uri);
    doc.format = format;
    doc.acl = acl;
    doc.sensitivity = sensitivity;

    std::vector<Heading> headings;
    switch (format) {
        case Format::plain:
            doc.body.assign(raw);
            if (!doc.body.empty()) doc.sections.push_back(Section{{}, 0, doc.body.size(), 1});
            break;
        case Format::markdown:
            parse_markdown(raw, doc.body, headings);
            doc.sections = build_sections(doc.body, headings);
            break;
        case Format::html:
            parse_html(raw, doc.body, headings);
            doc.sections = build_sections(doc.body, headings);
            break;
    }
    doc.title = headings.empty() ? uri_tail(uri) : headings.front().text;
    return doc;
}

// ---------------------------------------------------------------------------
// Enrichment

Document enrich_metadata(Document doc) {
    std::map<std::string, int> freq;
    for (auto& tok : tokenize(doc.body)) {
        if (!is_stopword(tok)) ++freq[std::move(tok)];
    }
    std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> keywords;
    for (std::size_t i = 0; i < ranked.size() && i < 10; ++i) keywords.push_back(ranked[i].first);

    std::set<std::string> heading_terms;
    for (const auto& sec : doc.sections) {
        for (const auto& part : sec.path) {
            for (auto& tok : tokenize(part)) heading_terms.insert(std::move(tok));
        }
    }

    doc.metadata["keywords"] = join(keywords, ",");
    doc.metadata["heading_terms"] = join({heading_terms.begin(), heading_terms.end()}, ",");
    doc.metadata["doc_title"] = doc.title;
    return doc;
}

// ---------------------------------------------------------------------------
// Chunking

std::vector<std::pair<std::size_t, std::size_t>> sliding_windows(std::size_t token_count,
                                                                 int chunk_tokens,
                                                                 int overlap_tokens) {
    std::vector<std::pair<std::size_t, std::size_t>> windows;
    if (token_count == 0) return windows;
    const auto size = static_cast<std::size_t>(chunk_tokens);
    const auto stride = static_cast<std::size_t>(chunk_tokens - overlap_tokens);
    for (std::size_t start = 0;; start += stride) {
        const std::size_t end = std::min(start + size, token_count);
        windows.emplace_back(start, end);
        if (end >= token_count) break;
    }
    return windows;
}

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
    cfg.validate();
    const auto tokens = tokenize_with_offsets(doc.body);

    // Section index of every token (-1 when a token lies outside all sections).
    std::vector<int> owner(tokens.size(), -1);
    {
        std::size_t s = 0;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            while (s < doc.sections.size() && doc.sections[s].char_end <= tokens[t].byte_start) ++s;
            if (s < doc.sections.size() && doc.sections[s].char_start <= tokens[t].byte_start) {
                owner[t] = static_cast<int>(s);
            }
        }
    }

    // Token spans chunked independently: the whole document, or one per section run.
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    if (cfg.mode == ChunkMode::sliding) {
        if (!tokens.empty()) spans.emplace_back(0, tokens.size());
    } else {
        std::size_t begin = 0;
        for (std::size_t t = 1; t <= tokens.size(); ++t) {
            if (t == tokens.size() || owner[t] != owner[begin]) {
                spans.emplace_back(begin, t);
                begin = t;
            }
        }
    }

    std::vector<Chunk> chunks;
    for (const auto& [span_start, span_end] : spans) {
        for (auto [ws, we] : sliding_windows(span_end - span_start, cfg.chunk_tokens, cfg.overlap_tokens)) {
            const std::size_t start = span_start + ws;
            const std::size_t end = span_start + we;
            Chunk c;
            c.doc_id = doc.doc_id;
            c.uri = doc.uri;
            c.ordinal = static_cast<int>(chunks.size());
            c.chunk_id = doc.doc_id + "#" + std::to_string(c.ordinal);
            c.token_start = start;
            c.token_end = end;
            if (owner[start] >= 0) c.section_path = doc.sections[static_cast<std::size_t>(owner[start])].path;
            const std::size_t b0 = tokens[start].byte_start;
            const std::size_t b1 = tokens[end - 1].byte_end;
            std::string text = doc.body.substr(b0, b1 - b0);
            if (cfg.prepend_section_path && !c.section_path.empty()) {
                text = join(c.section_path, " > ") + ": " + text;
            }
            c.text = std::move(text);
            c.acl = doc.acl;
            c.sensitivity = doc.sensitivity;
            c.metadata = doc.metadata;
            c.metadata["section_path"] = join(c.section_path, " > ");
            chunks.push_back(std::move(c));
        }
    }
    return chunks;
}

// ---------------------------------------------------------------------------
// Manifest

ManifestEntry manifest_entry_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::validation, "manifest entry must be a JSON object");
    auto require_string = [&](const char* key) -> std::string {
        if (!j.contains(key) || !j.at(key).is_string()) {
            throw Error(ErrorCode::validation, std::string("field '") + key + "' must be a string");
        }
        return j.at(key).get<std::string>();
    };
    ManifestEntry e;
    e.doc_id = require_string("doc_id");
    if (e.doc_id.empty()) throw Error(ErrorCode::validation, "field 'doc_id' must be non-empty");
    e.uri = require_string("uri");
    e.format = parse_format(require_string("format"));
    if (!j.contains("acl") || !j.at("acl").is_array()) {
        throw Error(ErrorCode::validation, "field 'acl' must be an array of strings");
    }
    for (const auto& g : j.at("acl")) {
        if (!g.is_string()) throw Error(ErrorCode::validation, "field 'acl' must be an array of strings");
        e.acl.insert(g.get<std::string>());
    }
    e.sensitivity = parse_sensitivity(require_string("sensitivity"));
    e.modified_at = require_string("modified_at");
    parse_iso8601(e.modified_at);
    e.body = require_string("body");
    return e;
}

json to_json(const ManifestEntry& e) {
    return json{{"doc_id", e.doc_id},
                {"uri", e.uri},
                {"format", to_string(e.format)},
                {"acl", e.acl},
                {"sensitivity", to_string(e.sensitivity)},
                {"modified_at", e.modified_at},
                {"body", e.body}};
}

Document document_from_entry(const ManifestEntry& e) {
    Document doc = parse_document(e.body, e.format, e.uri, e.acl, e.sensitivity);
    doc.doc_id = e.doc_id;
    doc.modified_at = e.modified_at;
    return enrich_metadata(std::move(doc));
}

std::vector<Document> load_manifest(std::istream& in, std::string_view source_name) {
    std::vector<Document> docs;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = std::string(source_name) + ":" + std::to_string(lineno) + ": ";
        try {
            const auto entry = manifest_entry_from_json(json::parse(line));
            if (!seen.insert(entry.doc_id).second) {
                throw Error(ErrorCode::validation, "duplicate doc_id '" + entry.doc_id + "'");
            }
            docs.push_back(document_from_entry(entry));
        } catch (const Error& e) {
            throw Error(e.code(), where + e.what());
        } catch (const json::exception& e) {
            throw Error(ErrorCode::validation, where + e.what());
        }
    }
    return docs;
}

std::vector<Document> load_manifest_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "cannot open corpus manifest '" + path + "'");
    return load_manifest(in, path);
}

json to_json(const Chunk& c) {
    return json{{"chunk_id", c.chunk_id},       {"doc_id", c.doc_id},
                {"uri", c.uri},                 {"ordinal", c.ordinal},
                {"text", c.text},               {"token_start", c.token_start},
                {"token_end", c.token_end},     {"section_path", c.section_path},
                {"acl", c.acl},                 {"sensitivity", to_string(c.sensitivity)},
                {"metadata", c.metadata}};
}

Chunk chunk_from_json(const json& j) {
    Chunk c;
    c.chunk_id = j.at("chunk_id").get<std::string>();
    c.doc_id = j.at("doc_id").get<std::string>();
    c.uri = j.at("uri").get<std::string>();
    c.ordinal = j.at("ordinal").get<int>();
    c.text = j.at("text").get<std::string>();
    c.token_start = j.at("token_start").get<std::size_t>();
    c.token_end = j.at("token_end").get<std::size_t>();
    c.section_path = j.at("section_path").get<std::vector<std::string>>();
    c.acl = j.at("acl").get<Acl>();
    c.sensitivity = parse_sensitivity(j.at("sensitivity").get<std::string>());
    c.metadata = j.at("metadata").get<Metadata>();
    return c;
}

}  // namespace ragdesk::ingest
