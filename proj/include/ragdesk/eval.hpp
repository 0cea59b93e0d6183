#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/pipeline.hpp"

namespace ragdesk::ragops {

struct EvalCase {
    std::string case_id;
    std::string query;
    std::set<std::string> gold_doc_ids;
    std::optional<std::string> gold_answer;
    index::Principal principal;

    [[nodiscard]] nlohmann::json to_json() const;
    static EvalCase from_json(const nlohmann::json& j);
};

/// JSONL suite; errors carry "name:line".
std::vector<EvalCase> load_suite(std::istream& in, const std::string& name = "suite");
std::vector<EvalCase> load_suite_file(const std::string& path);
std::string suite_digest(const std::vector<EvalCase>& suite);

struct CaseRow {
    std::string case_id;
    std::optional<int> hit_at_k;  // absent when the case has no gold documents
    std::optional<double> reciprocal_rank;
    double faithfulness = 1.0;
    std::optional<double> answer_f1;
    std::map<std::string, double> stage_latency_us;
    std::string trace_id;
    std::optional<std::string> error;

    [[nodiscard]] nlohmann::json to_json() const;
    static CaseRow from_json(const nlohmann::json& j);
};

struct Percentiles {
    double p50 = 0.0;
    double p95 = 0.0;
};

struct Aggregates {
    std::size_t cases = 0;
    std::optional<double> hit_at_k;
    std::optional<double> mrr;
    double faithfulness = 0.0;
    std::optional<double> answer_f1;
    std::map<std::string, Percentiles> latency_us;

    /// Quality metrics by name: hit_at_k, mrr, faithfulness, answer_f1.
    [[nodiscard]] std::map<std::string, double> metrics() const;
};

struct EvalReport {
    int k = 0;
    std::vector<CaseRow> rows;
    Aggregates aggregates;
    nlohmann::json config;
    std::string suite_digest;

    [[nodiscard]] nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    [[nodiscard]] std::string text_table() const;
};

/// Leading "LABEL: " prefix (upper-case letters then colon and space) removed.
std::string strip_label(std::string_view text);
/// Non-stopword answer tokens found in the context, over non-stopword answer
/// tokens (both as sets); 1.0 when the answer has none.
double faithfulness(std::string_view answer, std::string_view context);
/// Multiset token F1.
double token_f1(std::string_view answer, std::string_view gold);
/// Nearest-rank percentile, p in (0, 1]; 0 for an empty list.
double percentile(std::vector<double> values, double p);

Aggregates aggregate(const std::vector<CaseRow>& rows);

struct EvalEnv {
    gateway::Gateway& gateway;
    const guard::GuardrailPolicy& policy;
    const rag::TemplateStore& templates;
    TraceStore& traces;
};

/// Chunks and indexes `corpus` with cfg.chunking, then scores every case.
/// Throws Error(empty_suite).
EvalReport evaluate(const std::vector<ingest::Document>& corpus, const rag::PipelineConfig& cfg,
                    const std::vector<EvalCase>& suite, const EvalEnv& env);
/// Scores every case against an existing index.
EvalReport evaluate_index(const index::HybridIndex& index, const rag::PipelineConfig& cfg,
                          const std::vector<EvalCase>& suite, const EvalEnv& env);

/// Builds an index from documents with the given chunking.
void build_index(index::HybridIndex& index, const std::vector<ingest::Document>& corpus,
                 const ingest::ChunkingConfig& chunking);

struct GridSpec {
    /// Axis name in {chunk_tokens, overlap_tokens, fusion, rerank, top_k} to values.
    std::map<std::string, std::vector<nlohmann::json>> axes;
    std::string objective = "mrr";

    static GridSpec from_json(const nlohmann::json& j);
    /// Throws Error(config_invalid).
    void validate() const;
    [[nodiscard]] std::size_t size() const;
};

struct GridPoint {
    std::map<std::string, nlohmann::json> assignment;
    std::string encoding;  // "axis=value;..." in axis order
    rag::PipelineConfig config;
    std::optional<EvalReport> report;
    double objective = 0.0;
    std::optional<std::string> skipped;  // reason when the point was not evaluated
};

struct GridResult {
    std::string objective;
    std::vector<GridPoint> ranked;   // evaluated points, best first
    std::vector<GridPoint> skipped;  // in enumeration order

    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] std::string text_table() const;
};

std::string encode_assignment(const std::map<std::string, nlohmann::json>& assignment);

/// Exhaustive search; the index is rebuilt whenever the chunking changes.
GridResult grid_search(const std::vector<ingest::Document>& corpus, const rag::PipelineConfig& base,
                       const GridSpec& grid, const std::vector<EvalCase>& suite, const EvalEnv& env);

struct MetricDelta {
    std::string metric;
    double baseline = 0.0;
    double candidate = 0.0;
    double allowed_drop = 0.0;
};

struct GateResult {
    bool pass = true;
    std::vector<MetricDelta> failures;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Fails when any quality metric drops by more than its epsilon (default 0).
/// Throws Error(suite_mismatch).
GateResult regression_gate(const EvalReport& baseline, const EvalReport& candidate,
                           const std::map<std::string, double>& epsilon);

}  // namespace ragdesk::ragops
