#include "ragdesk/agent.hpp"

#include <fstream>
#include <sstream>

#include "ragdesk/ingest.hpp"

namespace ragdesk::agent {

using nlohmann::json;

json BotSpec::to_json() const {
    return json{{"bot_id", bot_id},
                {"display_name", display_name},
                {"keyword_terms", keyword_terms},
                {"corpus_id", corpus_id},
                {"decompose", decompose},
                {"pipeline", pipeline_cfg.to_json()}};
}

BotSpec BotSpec::from_json(const json& j, const rag::PipelineConfig& base) {
    if (!j.is_object()) throw Error(ErrorCode::config_invalid, "bot entry must be an object");
    BotSpec b;
    try {
        b.bot_id = j.at("bot_id").get<std::string>();
        b.display_name = j.value("display_name", b.bot_id);
        b.corpus_id = j.at("corpus_id").get<std::string>();
        b.decompose = j.value("decompose", false);
        for (const auto& t : j.value("keyword_terms", json::array())) {
            for (auto& tok : ingest::tokenize(t.get<std::string>())) b.keyword_terms.insert(std::move(tok));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_invalid, std::string("bot entry: ") + e.what());
    }
    if (b.bot_id.empty()) throw Error(ErrorCode::config_invalid, "bot_id must be non-empty");
    b.pipeline_cfg = j.contains("pipeline") ? rag::PipelineConfig::from_json(j.at("pipeline"), base) : base;
    b.pipeline_cfg.validate();
    return b;
}

std::vector<BotSpec> bots_from_json(const json& j, const rag::PipelineConfig& base) {
    if (!j.is_array()) throw Error(ErrorCode::config_invalid, "bot registry must be a JSON list");
    std::vector<BotSpec> bots;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < j.size(); ++i) {
        try {
            bots.push_back(BotSpec::from_json(j[i], base));
        } catch (const Error& e) {
            throw Error(e.code(), "[" + std::to_string(i) + "]: " + e.what());
        }
        if (!seen.insert(bots.back().bot_id).second) {
            throw Error(ErrorCode::config_invalid, "[" + std::to_string(i) + "]: duplicate bot_id '" +
                                                       bots.back().bot_id + "'");
        }
    }
    if (bots.empty()) throw Error(ErrorCode::config_invalid, "bot registry is empty");
    return bots;
}

std::vector<BotSpec> load_bot_registry(const std::string& path, const rag::PipelineConfig& base) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "cannot open bot registry '" + path + "'");
    try {
        return bots_from_json(json::parse(in), base);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_invalid, path + ": " + e.what());
    } catch (const Error& e) {
        throw Error(e.code(), path + e.what());
    }
}

RouteDecision route_detailed(std::string_view query, const std::vector<BotSpec>& bots,
                             const std::string& default_bot_id) {
    const auto toks = ingest::tokenize(query);
    const std::set<std::string> q(toks.begin(), toks.end());
    RouteDecision d;
    int best = 0;
    for (const auto& b : bots) {
        int score = 0;
        for (const auto& t : q) score += static_cast<int>(b.keyword_terms.count(t));
        d.scores[b.bot_id] = score;
    }
    // scores is ordered by bot_id, so the first strict maximum is the tie winner
    for (const auto& [id, score] : d.scores) {
        if (score > best) {
            best = score;
            d.bot_id = id;
        }
    }
    if (best == 0) {
        d.bot_id = default_bot_id;
        d.fallback = true;
    }
    return d;
}

std::string route(std::string_view query, const std::vector<BotSpec>& bots, const std::string& default_bot_id) {
    return route_detailed(query, bots, default_bot_id).bot_id;
}

json DecompositionPlan::to_json() const {
    json j{{"kind", kind == Kind::simple ? "simple" : "multi_part"}, {"sub_queries", sub_queries}};
    if (dropped > 0) j["dropped_sub_queries"] = dropped;
    if (!note.empty()) j["note"] = note;
    return j;
}

DecompositionPlan parse_plan(std::string_view completion) {
    std::vector<std::string> found;
    std::istringstream in{std::string(completion)};
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.rfind("SUBQ:", 0) != 0) continue;
        std::string sub = trim(std::string_view(t).substr(5));
        if (!sub.empty()) found.push_back(std::move(sub));
    }
    DecompositionPlan plan;
    if (found.size() < 2) return plan;
    plan.kind = DecompositionPlan::Kind::multi_part;
    if (found.size() > kMaxSubQueries) {
        plan.dropped = found.size() - kMaxSubQueries;
        found.resize(kMaxSubQueries);
        plan.note = "plan truncated to " + std::to_string(kMaxSubQueries) + " sub-queries";
    }
    plan.sub_queries = std::move(found);
    return plan;
}

Orchestrator::Orchestrator(std::vector<BotSpec> bots, std::string default_bot_id, PipelineFor pipelines)
    : bots_(std::move(bots)), default_bot_id_(std::move(default_bot_id)), pipelines_(std::move(pipelines)) {
    if (bots_.empty()) throw Error(ErrorCode::config_invalid, "at least one bot is required");
    (void)bot(default_bot_id_);
}

const BotSpec& Orchestrator::bot(const std::string& bot_id) const {
    for (const auto& b : bots_) {
        if (b.bot_id == bot_id) return b;
    }
    throw Error(ErrorCode::not_found, "unknown bot '" + bot_id + "'");
}

DecompositionPlan Orchestrator::decompose(std::string_view query, const BotSpec& bot,
                                          const std::vector<rag::Turn>& history) const {
    const auto& pipeline = pipelines_(bot.corpus_id);
    gateway::ChatRequest req;
    req.subscription_id = bot.pipeline_cfg.subscription_id;
    req.model_id = bot.pipeline_cfg.model_id;
    try {
        req.messages.push_back(
            {"user", pipeline.templates().render("DECOMPOSE", rag::render_history(history), "", query)});
        return parse_plan(pipeline.gateway().chat(req).text);
    } catch (const Error& e) {
        DecompositionPlan plan;
        plan.note = std::string("decompose fallback: ") + std::string(to_string(e.code()));
        return plan;
    }
}

rag::PipelineResult Orchestrator::handle(const rag::QueryContext& ctx, std::string_view query,
                                         const std::optional<std::string>& bot_id) const {
    RouteDecision routing;
    if (bot_id && !bot_id->empty()) {
        routing.bot_id = *bot_id;
    } else {
        routing = route_detailed(query, bots_, default_bot_id_);
    }
    rag::QueryContext c = ctx;
    c.bot_id = routing.bot_id;
    return orchestrate(c, query, bot(routing.bot_id), routing);
}

rag::PipelineResult Orchestrator::orchestrate(const rag::QueryContext& ctx, std::string_view query,
                                              const BotSpec& bot, const RouteDecision& routing) const {
    const auto& pipeline = pipelines_(bot.corpus_id);
    // Blocked queries go straight to the pipeline so nothing reaches the gateway.
    if (!guard::check_input(query, pipeline.policy()).allowed) return pipeline.answer(ctx, query, bot.pipeline_cfg);

    rag::StageClock clock("route");
    DecompositionPlan plan;
    if (bot.decompose) plan = decompose(query, bot, ctx.history);
    json detail{{"status", "ok"},
                {"bot_id", bot.bot_id},
                {"explicit", routing.scores.empty()},
                {"scores", routing.scores},
                {"fallback", routing.fallback},
                {"decompose", bot.decompose},
                {"plan", plan.to_json()}};
    auto stage = clock.finish(query, bot.bot_id + "\n" + plan.to_json().dump(), std::move(detail));
    if (plan.kind == DecompositionPlan::Kind::simple) return pipeline.answer(ctx, query, bot.pipeline_cfg, {stage});
    return multi_part(ctx, query, bot, pipeline, plan, std::move(stage));
}

rag::PipelineResult Orchestrator::multi_part(const rag::QueryContext& ctx, std::string_view query,
                                             const BotSpec& bot, const rag::Pipeline& pipeline,
                                             const DecompositionPlan& plan, ragops::StageRecord route_stage) const {
    const auto& cfg = bot.pipeline_cfg;
    rag::PipelineResult res;
    auto& trace = res.trace;
    trace.trace_id = pipeline.traces().next_id();
    trace.request_id = ctx.request_id;
    trace.user_id = ctx.principal.user_id;
    trace.stages.push_back(std::move(route_stage));

    // fan_out
    struct Sub {
        std::string query;
        rag::PipelineResult result;
        bool ok = false;
    };
    std::vector<Sub> subs;
    {
        rag::StageClock clock("fan_out");
        json children = json::array();
        json child_ids = json::array();
        std::string ids;
        for (std::size_t i = 0; i < plan.sub_queries.size(); ++i) {
            rag::QueryContext child = ctx;
            child.request_id = ctx.request_id + "/" + std::to_string(i + 1);
            Sub s{plan.sub_queries[i], pipeline.answer(child, plan.sub_queries[i], cfg), false};
            s.ok = !s.result.answer.error && !s.result.answer.blocked;
            std::string status = s.ok ? "ok" : (s.result.answer.blocked ? "blocked" : "error");
            json c{{"index", i + 1}, {"sub_query", s.query}, {"status", status}};
            if (s.result.answer.error) c["error_code"] = *s.result.answer.error;
            children.push_back(std::move(c));
            child_ids.push_back(s.result.trace.trace_id);
            ids += s.result.trace.trace_id + "\n";
            subs.push_back(std::move(s));
        }
        trace.stages.push_back(clock.finish(json(plan.sub_queries).dump(), ids,
                                            json{{"status", "ok"}, {"children", children},
                                                 {"child_trace_ids", child_ids}}));
    }

    auto finish = [&]() -> rag::PipelineResult {
        res.answer.trace_id = trace.trace_id;
        pipeline.traces().store(trace);
        return std::move(res);
    };

    std::string context;
    int n = 0;
    for (const auto& s : subs) {
        if (!s.ok) continue;
        if (n++) context += "\n\n";
        context += "[" + std::to_string(n) + "] Q: " + s.query + "\nA: " + s.result.answer.text;
    }

    // aggregate
    {
        rag::StageClock clock("aggregate");
        auto fail = [&](const std::string& code, const std::string& message) -> rag::PipelineResult {
            const json err{{"status", "error"}, {"error_code", code}, {"message", message}};
            trace.stages.push_back(clock.finish(context, message, err));
            rag::StageClock ec("error");
            json d = err;
            d["stage"] = "aggregate";
            trace.stages.push_back(ec.finish(message, cfg.failure_message, d));
            res.answer.text = cfg.failure_message;
            res.answer.error = code;
            return finish();
        };
        if (n == 0) return fail(std::string(to_string(ErrorCode::provider_error)), "every sub-query failed");
        gateway::ChatRequest req;
        req.subscription_id = cfg.subscription_id;
        req.model_id = cfg.model_id;
        std::string prompt;
        gateway::ChatResponse resp;
        try {
            prompt = pipeline.templates().render("AGGREGATE", rag::render_history(ctx.history), context, query);
            req.messages.push_back({"user", prompt});
            resp = pipeline.gateway().chat(req);
        } catch (const Error& e) {
            return fail(std::string(to_string(e.code())), e.what());
        }
        res.prompt_text = prompt;
        res.raw_completion = resp.text;
        res.answer.text = resp.text;
        trace.stages.push_back(clock.finish(prompt, resp.text,
                                            json{{"status", "ok"},
                                                 {"sub_answers", n},
                                                 {"model_id", cfg.model_id},
                                                 {"prompt_tokens", resp.prompt_tokens},
                                                 {"completion_tokens", resp.completion_tokens},
                                                 {"cost", resp.cost.to_string()},
                                                 {"audit_id", resp.audit_id},
                                                 {"prompt_text", prompt},
                                                 {"completion", resp.text}}));
    }

    // citation union, renumbered in first-seen order
    std::set<std::string> seen;
    for (const auto& s : subs) {
        if (!s.ok) continue;
        for (auto c : s.result.answer.citations) {
            if (!seen.insert(c.chunk_id).second) continue;
            c.marker = static_cast<int>(res.answer.citations.size()) + 1;
            res.answer.citations.push_back(std::move(c));
        }
        for (const auto& h : s.result.included_hits) res.included_hits.push_back(h);
        for (const auto& h : s.result.ranked_hits) res.ranked_hits.push_back(h);
    }

    // guardrail_out
    {
        rag::StageClock clock("guardrail_out");
        const std::string before = res.answer.text;
        auto red = guard::redact_output(before, pipeline.policy());
        json counts = json::array();
        for (const auto& r : red.redactions) counts.push_back({{"rule", r.rule}, {"count", r.count}});
        res.answer.text = std::move(red.text);
        json cites = json::array();
        for (const auto& c : res.answer.citations) cites.push_back(rag::to_json(c));
        trace.stages.push_back(clock.finish(before, res.answer.text,
                                            json{{"status", "ok"}, {"redactions", counts}, {"citations", cites}}));
    }
    return finish();
}

}  // namespace ragdesk::agent
