#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/pipeline.hpp"

namespace ragdesk::agent {

struct BotSpec {
    std::string bot_id;
    std::string display_name;
    std::set<std::string> keyword_terms;
    std::string corpus_id;
    rag::PipelineConfig pipeline_cfg;
    bool decompose = false;  // ask the model for a decomposition plan first

    [[nodiscard]] nlohmann::json to_json() const;
    /// Pipeline settings missing from the entry come from `base`.
    static BotSpec from_json(const nlohmann::json& j, const rag::PipelineConfig& base = {});
};

/// Parses a JSON list of bots; rejects duplicate ids.
std::vector<BotSpec> bots_from_json(const nlohmann::json& j, const rag::PipelineConfig& base = {});
std::vector<BotSpec> load_bot_registry(const std::string& path, const rag::PipelineConfig& base = {});

struct RouteDecision {
    std::string bot_id;
    std::map<std::string, int> scores;
    bool fallback = false;  // no bot scored above zero
};

/// Bot with the largest |query tokens ∩ keyword_terms|, ties by bot_id;
/// `default_bot_id` when every score is zero.
RouteDecision route_detailed(std::string_view query, const std::vector<BotSpec>& bots,
                             const std::string& default_bot_id);
std::string route(std::string_view query, const std::vector<BotSpec>& bots, const std::string& default_bot_id);

inline constexpr std::size_t kMaxSubQueries = 8;

struct DecompositionPlan {
    enum class Kind { simple, multi_part };
    Kind kind = Kind::simple;
    std::vector<std::string> sub_queries;
    std::size_t dropped = 0;  // SUBQ lines beyond the cap
    std::string note;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Reads "SUBQ: <text>" lines; two or more make a multi-part plan.
DecompositionPlan parse_plan(std::string_view completion);

class Orchestrator {
public:
    using PipelineFor = std::function<const rag::Pipeline&(const std::string& corpus_id)>;

    Orchestrator(std::vector<BotSpec> bots, std::string default_bot_id, PipelineFor pipelines);

    [[nodiscard]] const std::vector<BotSpec>& bots() const { return bots_; }
    [[nodiscard]] const std::string& default_bot_id() const { return default_bot_id_; }
    /// Throws Error(not_found).
    [[nodiscard]] const BotSpec& bot(const std::string& bot_id) const;

    /// DECOMPOSE gateway call; any gateway failure yields a simple plan.
    DecompositionPlan decompose(std::string_view query, const BotSpec& bot,
                                const std::vector<rag::Turn>& history = {}) const;

    /// Answers through `bot`. The returned result's trace is the stored one.
    rag::PipelineResult orchestrate(const rag::QueryContext& ctx, std::string_view query, const BotSpec& bot,
                                    const RouteDecision& routing) const;

    /// Routes (unless `bot_id` is given) and orchestrates.
    rag::PipelineResult handle(const rag::QueryContext& ctx, std::string_view query,
                               const std::optional<std::string>& bot_id = std::nullopt) const;

private:
    rag::PipelineResult multi_part(const rag::QueryContext& ctx, std::string_view query, const BotSpec& bot,
                                   const rag::Pipeline& pipeline, const DecompositionPlan& plan,
                                   ragops::StageRecord route_stage) const;

    std::vector<BotSpec> bots_;
    std::string default_bot_id_;
    PipelineFor pipelines_;
};

}  // namespace ragdesk::agent
