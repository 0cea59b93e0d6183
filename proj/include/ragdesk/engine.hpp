#pragma once

#include <atomic>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/agent.hpp"
#include "ragdesk/config.hpp"
#include "ragdesk/eval.hpp"

namespace ragdesk::engine {

struct IngestSummary {
    std::size_t documents = 0;
    std::size_t chunks = 0;
};

struct ChatInput {
    index::Principal principal;
    std::string message;
    std::vector<rag::Turn> history;
    std::optional<std::string> bot_id;
    std::string request_id;  // generated when empty
};

struct ChatOutput {
    rag::Answer answer;
    std::string bot_id;

    [[nodiscard]] nlohmann::json to_json() const;
};

enum class Rating { up, down };

struct Feedback {
    std::string trace_id;
    Rating rating = Rating::up;
    std::string comment;
    std::string user_id;
    TimePoint timestamp;

    [[nodiscard]] nlohmann::json to_json() const;
    static Feedback from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kMaxFeedbackComment = 2000;

/// One vote per trace; a later vote replaces the earlier one. Persisted as
/// JSONL where the last line for a trace wins.
class FeedbackStore {
public:
    FeedbackStore() = default;
    explicit FeedbackStore(const std::string& path);

    /// Truncates the comment to kMaxFeedbackComment bytes (on a UTF-8
    /// boundary); returns true when an earlier vote was replaced.
    bool record(Feedback f);
    [[nodiscard]] std::optional<Feedback> get(const std::string& trace_id) const;
    [[nodiscard]] std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, Feedback> votes_;
    std::ofstream out_;
};

struct EngineOptions {
    std::function<TimePoint()> clock;  // gateway clock; system time by default
};

/// Everything the service and the CLI share: indexes, gateway, trace and
/// feedback stores, policy, templates and the bot orchestrator.
class Engine {
public:
    explicit Engine(config::AppConfig cfg, EngineOptions options = {});
    static std::unique_ptr<Engine> from_file(const std::string& path, EngineOptions options = {});

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Replaces the documents of a corpus that appear in `docs`.
    IngestSummary ingest(const std::string& corpus_id, const std::vector<ingest::Document>& docs);
    /// Re-reads every configured manifest.
    IngestSummary ingest_configured();
    /// Writes index snapshots under data_dir/index/<corpus_id>.
    void save_snapshots() const;

    ChatOutput chat(const ChatInput& input);

    ragops::EvalReport evaluate(const std::vector<ragops::EvalCase>& suite,
                                const std::optional<nlohmann::json>& pipeline_overrides = std::nullopt,
                                const std::optional<std::string>& corpus_id = std::nullopt);
    ragops::GridResult grid_search(const ragops::GridSpec& grid, const std::vector<ragops::EvalCase>& suite,
                                   const std::optional<std::string>& corpus_id = std::nullopt);

    [[nodiscard]] const config::AppConfig& config() const { return cfg_; }
    [[nodiscard]] gateway::Gateway& gateway() { return *gateway_; }
    [[nodiscard]] ragops::TraceStore& traces() { return *traces_; }
    [[nodiscard]] FeedbackStore& feedback() { return *feedback_; }
    [[nodiscard]] const agent::Orchestrator& orchestrator() const { return *orchestrator_; }
    [[nodiscard]] const guard::GuardrailPolicy& policy() const { return policy_; }
    [[nodiscard]] const rag::TemplateStore& templates() const { return templates_; }
    /// Throws Error(not_found).
    [[nodiscard]] const index::HybridIndex& index(const std::string& corpus_id) const;
    [[nodiscard]] std::vector<std::string> corpus_ids() const;
    [[nodiscard]] std::vector<ingest::Document> documents(const std::string& corpus_id) const;

private:
    struct Corpus {
        config::CorpusSpec spec;
        ingest::ChunkingConfig chunking;
        std::unique_ptr<index::HybridIndex> index;
        std::unique_ptr<rag::Pipeline> pipeline;
        std::vector<ingest::Document> documents;
    };

    Corpus& corpus(const std::string& corpus_id);
    const Corpus& corpus(const std::string& corpus_id) const;
    std::string snapshot_dir(const std::string& corpus_id) const;

    config::AppConfig cfg_;
    EngineOptions options_;
    guard::GuardrailPolicy policy_;
    rag::TemplateStore templates_;
    std::unique_ptr<gateway::Gateway> gateway_;
    std::unique_ptr<ragops::TraceStore> traces_;
    std::unique_ptr<FeedbackStore> feedback_;
    std::map<std::string, Corpus> corpora_;
    std::unique_ptr<agent::Orchestrator> orchestrator_;
    mutable std::mutex docs_mutex_;
    std::atomic<std::uint64_t> request_counter_{0};
};

}  // namespace ragdesk::engine
