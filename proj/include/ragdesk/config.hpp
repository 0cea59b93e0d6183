#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/gateway.hpp"
#include "ragdesk/pipeline.hpp"

namespace ragdesk::config {

struct CorpusSpec {
    std::string corpus_id;
    std::string path;  // JSONL manifest
    std::optional<ingest::ChunkingConfig> chunking;
};

struct SubscriptionSpec {
    std::string subscription_id;
    std::optional<Money> quota;  // remaining allowance; absent = unlimited
    std::optional<int> rate_limit_per_minute;
};

/// Service configuration. Relative paths are resolved against the directory
/// of the config file.
struct AppConfig {
    std::vector<CorpusSpec> corpora;
    std::string bot_registry;
    std::optional<std::string> guardrail_policy;
    std::optional<std::string> templates_dir;
    std::vector<gateway::ProviderConfig> providers;
    std::vector<SubscriptionSpec> subscriptions;
    rag::PipelineConfig default_pipeline;
    std::string default_bot_id;
    std::string data_dir;
    std::string listen = "127.0.0.1:8080";

    /// Throws Error(config_invalid) whose message starts with the field path.
    static AppConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    /// Parse errors report "path:line:column".
    static AppConfig load_file(const std::string& path);

    /// Every referenced file or directory exists.
    void check_files() const;

    [[nodiscard]] std::string listen_host() const;
    [[nodiscard]] int listen_port() const;
};

/// Line and column (1-based) of a byte offset in `text`.
std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte_offset);

}  // namespace ragdesk::config
