#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/gateway.hpp"
#include "ragdesk/guardrails.hpp"
#include "ragdesk/index.hpp"
#include "ragdesk/ingest.hpp"
#include "ragdesk/templates.hpp"
#include "ragdesk/trace.hpp"

namespace ragdesk::rag {

enum class Rerank { none, lexical_overlap };

std::string_view to_string(Rerank r);
Rerank parse_rerank(std::string_view text);

struct PipelineConfig {
    ingest::ChunkingConfig chunking;
    index::Fusion fusion = index::Fusion::rrf;
    Rerank rerank = Rerank::none;
    int top_k = 5;
    int context_token_budget = 2048;
    std::string prompt_template_id = "ANSWER";
    std::string model_id = "mock-small";
    bool rephrase_enabled = false;
    std::string subscription_id = "default";
    std::string failure_message = "Sorry, I could not produce an answer right now. Please try again later.";

    /// Throws Error(config_invalid).
    void validate() const;

    /// Missing keys keep their defaults; unknown keys are rejected.
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig from_json(const nlohmann::json& j, const PipelineConfig& base);
    [[nodiscard]] nlohmann::json to_json() const;
};

struct Turn {
    std::string role;
    std::string text;
};

struct QueryContext {
    index::Principal principal;
    std::string bot_id;
    std::vector<Turn> history;
    std::string request_id;
};

struct Citation {
    int marker = 0;
    std::string doc_id;
    std::string uri;
    std::string chunk_id;

    friend bool operator==(const Citation&, const Citation&) = default;
};

struct Answer {
    std::string text;
    std::vector<Citation> citations;
    std::string trace_id;
    bool blocked = false;
    std::optional<std::string> block_reason;
    std::optional<std::string> error;  // set on failure answers
};

nlohmann::json to_json(const Citation& c);
nlohmann::json to_json(const Answer& a);

struct Rephrasal {
    std::string original;
    std::string rephrased;
    bool fallback = false;
    std::string note;  // why the fallback happened
};

/// Unique non-stopword query tokens found in the chunk, over the number of
/// unique non-stopword query tokens. Zero when the query has none.
double lexical_overlap(std::string_view query, const ingest::Chunk& chunk);

/// Stable re-sort by lexical overlap, or identity for Rerank::none.
std::vector<index::ScoredHit> rerank(std::string_view query, std::vector<index::ScoredHit> hits,
                                     Rerank strategy);

std::string render_history(const std::vector<Turn>& history);
/// "[i] (uri)\n<chunk text>" blocks separated by blank lines, or "NO CONTEXT".
std::string render_context(const std::vector<index::ScoredHit>& hits);

struct AssembledPrompt {
    std::string prompt_text;
    std::vector<index::ScoredHit> included_hits;
    std::size_t prompt_tokens = 0;
    bool overflow = false;  // the top-1 hit alone exceeds the budget
};

/// Includes hits greedily in rank order while the rendered prompt fits the
/// token budget; the first hit is always included. Throws Error(unknown_template).
AssembledPrompt assemble_prompt(const TemplateStore& templates, const std::string& template_id,
                                std::string_view query, const std::vector<index::ScoredHit>& hits,
                                const std::vector<Turn>& history, int budget);

struct CitationExtraction {
    std::string text;
    std::vector<Citation> citations;
    bool fallback = false;
    std::vector<int> stripped_markers;
};

/// "[i]" with 1 <= i <= |hits| cites hit i; other markers are stripped. With
/// no valid marker, the top min(3, |hits|) hits are attached.
CitationExtraction extract_citations_detailed(std::string_view completion,
                                              const std::vector<index::ScoredHit>& included_hits);
Answer extract_citations(std::string_view completion, const std::vector<index::ScoredHit>& included_hits);

struct PipelineResult {
    Answer answer;
    ragops::Trace trace;
    std::vector<index::ScoredHit> ranked_hits;    // after rerank
    std::vector<index::ScoredHit> included_hits;  // numbered in the prompt
    std::string prompt_text;
    std::string raw_completion;
};

inline constexpr const char* kStageNames[] = {"guardrail_in", "rephrase", "retrieve",  "rerank",
                                              "assemble_prompt", "generate", "cite", "guardrail_out"};

/// The answer flow over one index. Reentrant: concurrent calls share the
/// index read side, the gateway and the trace store.
class Pipeline {
public:
    Pipeline(const index::HybridIndex& index, gateway::Gateway& gateway, const guard::GuardrailPolicy& policy,
             const TemplateStore& templates, ragops::TraceStore& traces);

    Rephrasal rephrase_query(const QueryContext& ctx, std::string_view query, const PipelineConfig& cfg) const;

    /// One gateway chat call; throws the gateway's Error on failure.
    gateway::ChatResponse generate_answer(const std::string& prompt_text, const std::string& model_id,
                                          const QueryContext& ctx, const PipelineConfig& cfg) const;

    /// Runs every stage and persists the trace. `leading_stages` are placed
    /// before the pipeline's own stages in the stored trace.
    PipelineResult answer(const QueryContext& ctx, std::string_view query, const PipelineConfig& cfg,
                          std::vector<ragops::StageRecord> leading_stages = {}) const;

    [[nodiscard]] const index::HybridIndex& index() const { return index_; }
    [[nodiscard]] gateway::Gateway& gateway() const { return gateway_; }
    [[nodiscard]] const guard::GuardrailPolicy& policy() const { return policy_; }
    [[nodiscard]] const TemplateStore& templates() const { return templates_; }
    [[nodiscard]] ragops::TraceStore& traces() const { return traces_; }

private:
    const index::HybridIndex& index_;
    gateway::Gateway& gateway_;
    const guard::GuardrailPolicy& policy_;
    const TemplateStore& templates_;
    ragops::TraceStore& traces_;
};

/// Captures start time and duration of one stage.
class StageClock {
public:
    explicit StageClock(std::string name);
    ragops::StageRecord finish(std::string_view input, std::string_view output, nlohmann::json detail) const;

private:
    std::string name_;
    TimePoint started_at_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace ragdesk::rag
