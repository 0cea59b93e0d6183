#include "ragdesk/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace ragdesk::config {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& message) {
    throw Error(ErrorCode::config_invalid, field + ": " + message);
}

std::string resolve(const std::string& base, const std::string& p) {
    if (p.empty()) return p;
    const fs::path path(p);
    return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

template <class F>
auto field(const std::string& name, F&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        invalid(name, e.what());
    } catch (const Error& e) {
        invalid(name, e.what());
    }
}

std::string required_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) invalid(where + key, "is required");
    if (!j.at(key).is_string()) invalid(where + key, "must be a string");
    return j.at(key).get<std::string>();
}

ingest::ChunkingConfig chunking_from_json(const json& j, ingest::ChunkingConfig c) {
    c.chunk_tokens = j.value("chunk_tokens", c.chunk_tokens);
    c.overlap_tokens = j.value("overlap_tokens", c.overlap_tokens);
    if (j.contains("mode")) c.mode = ingest::parse_chunk_mode(j.at("mode").get<std::string>());
    c.prepend_section_path = j.value("prepend_section_path", c.prepend_section_path);
    c.validate();
    return c;
}

}  // namespace

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte_offset) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < text.size() && i < byte_offset; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

AppConfig AppConfig::from_json(const json& j, const std::string& base_dir) {
    if (!j.is_object()) invalid("$", "config must be a JSON object");
    static const std::set<std::string> kKeys = {"corpora",   "bot_registry",     "guardrail_policy", "templates_dir",
                                                "providers", "subscriptions",    "default_pipeline", "default_bot_id",
                                                "data_dir",  "listen"};
    for (const auto& [k, v] : j.items()) {
        if (kKeys.count(k) == 0) invalid(k, "unknown key");
    }
    AppConfig c;

    if (j.contains("default_pipeline")) {
        c.default_pipeline = field("default_pipeline", [&] { return rag::PipelineConfig::from_json(j.at("default_pipeline")); });
    }
    field("default_pipeline", [&] { c.default_pipeline.validate(); return 0; });

    if (!j.contains("corpora") || !j.at("corpora").is_array() || j.at("corpora").empty()) {
        invalid("corpora", "must be a non-empty list");
    }
    std::set<std::string> corpus_ids;
    for (std::size_t i = 0; i < j.at("corpora").size(); ++i) {
        const auto& e = j.at("corpora")[i];
        const std::string where = "corpora[" + std::to_string(i) + "].";
        if (!e.is_object()) invalid("corpora[" + std::to_string(i) + "]", "must be an object");
        CorpusSpec s;
        s.corpus_id = required_string(e, "corpus_id", where);
        s.path = resolve(base_dir, required_string(e, "path", where));
        if (e.contains("chunking")) {
            s.chunking = field(where + "chunking",
                               [&] { return chunking_from_json(e.at("chunking"), c.default_pipeline.chunking); });
        }
        if (!corpus_ids.insert(s.corpus_id).second) invalid(where + "corpus_id", "duplicate '" + s.corpus_id + "'");
        c.corpora.push_back(std::move(s));
    }

    c.bot_registry = resolve(base_dir, required_string(j, "bot_registry", ""));
    if (j.contains("guardrail_policy")) c.guardrail_policy = resolve(base_dir, required_string(j, "guardrail_policy", ""));
    if (j.contains("templates_dir")) c.templates_dir = resolve(base_dir, required_string(j, "templates_dir", ""));
    c.data_dir = resolve(base_dir, required_string(j, "data_dir", ""));
    if (j.contains("listen")) c.listen = required_string(j, "listen", "");
    if (j.contains("default_bot_id")) c.default_bot_id = required_string(j, "default_bot_id", "");

    if (!j.contains("providers") || !j.at("providers").is_array() || j.at("providers").empty()) {
        invalid("providers", "must be a non-empty list");
    }
    std::set<std::string> models;
    for (std::size_t i = 0; i < j.at("providers").size(); ++i) {
        const std::string where = "providers[" + std::to_string(i) + "]";
        json pj = j.at("providers")[i];
        if (pj.is_object() && pj.contains("script_file")) {
            const std::string path = resolve(base_dir, pj.at("script_file").get<std::string>());
            std::ifstream in(path);
            if (!in) invalid(where + ".script_file", "cannot open '" + path + "'");
            pj["script"] = field(where + ".script_file", [&] { return json::parse(in); });
            pj.erase("script_file");
        }
        auto p = field(where, [&] {
            auto cfg = gateway::ProviderConfig::from_json(pj);
            cfg.validate();
            return cfg;
        });
        for (const auto& m : p.model_ids) {
            if (!models.insert(m).second) invalid(where + ".model_ids", "model '" + m + "' is served twice");
        }
        c.providers.push_back(std::move(p));
    }

    for (std::size_t i = 0; i < j.value("subscriptions", json::array()).size(); ++i) {
        const auto& e = j.at("subscriptions")[i];
        const std::string where = "subscriptions[" + std::to_string(i) + "].";
        SubscriptionSpec s;
        s.subscription_id = required_string(e, "subscription_id", where);
        if (e.contains("quota") && !e.at("quota").is_null()) {
            s.quota = field(where + "quota", [&] {
                const auto& q = e.at("quota");
                return q.is_string() ? Money::parse(q.get<std::string>()) : Money::parse(q.dump());
            });
        }
        if (e.contains("rate_limit_per_minute") && !e.at("rate_limit_per_minute").is_null()) {
            s.rate_limit_per_minute = field(where + "rate_limit_per_minute", [&] {
                const int v = e.at("rate_limit_per_minute").get<int>();
                if (v < 0) throw Error(ErrorCode::config_invalid, "must be >= 0");
                return v;
            });
        }
        c.subscriptions.push_back(std::move(s));
    }
    if (c.listen_port() <= 0) invalid("listen", "expected host:port");
    return c;
}

AppConfig AppConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config_invalid, path + ": cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw Error(ErrorCode::config_invalid,
                    path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
    const std::string base = fs::path(path).parent_path().string();
    try {
        return from_json(j, base.empty() ? "." : base);
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

void AppConfig::check_files() const {
    auto need = [](const std::string& field_name, const std::string& p) {
        if (!fs::exists(p)) invalid(field_name, "'" + p + "' does not exist");
    };
    for (std::size_t i = 0; i < corpora.size(); ++i) need("corpora[" + std::to_string(i) + "].path", corpora[i].path);
    need("bot_registry", bot_registry);
    if (guardrail_policy) need("guardrail_policy", *guardrail_policy);
    if (templates_dir) need("templates_dir", *templates_dir);
}

std::string AppConfig::listen_host() const {
    const auto colon = listen.rfind(':');
    return colon == std::string::npos ? listen : listen.substr(0, colon);
}

int AppConfig::listen_port() const {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) return -1;
    try {
        const int p = std::stoi(listen.substr(colon + 1));
        return p > 0 && p < 65536 ? p : -1;
    } catch (const std::exception&) {
        return -1;
    }
}

}  // namespace ragdesk::config
