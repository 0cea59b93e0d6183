#include "ragdesk/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace ragdesk::rag {

using nlohmann::json;
using index::ScoredHit;

std::string_view to_string(Rerank r) { return r == Rerank::none ? "none" : "lexical_overlap"; }

Rerank parse_rerank(std::string_view text) {
    if (text == "none") return Rerank::none;
    if (text == "lexical_overlap") return Rerank::lexical_overlap;
    throw Error(ErrorCode::config_invalid, "unknown rerank strategy '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
    chunking.validate();
    if (top_k < 1) throw Error(ErrorCode::config_invalid, "top_k must be >= 1");
    if (context_token_budget <= 0) throw Error(ErrorCode::config_invalid, "context_token_budget must be > 0");
    if (prompt_template_id.empty()) throw Error(ErrorCode::config_invalid, "prompt_template_id must be non-empty");
    if (model_id.empty()) throw Error(ErrorCode::config_invalid, "model_id must be non-empty");
    if (subscription_id.empty()) throw Error(ErrorCode::config_invalid, "subscription_id must be non-empty");
}

PipelineConfig PipelineConfig::from_json(const json& j) { return from_json(j, PipelineConfig{}); }

PipelineConfig PipelineConfig::from_json(const json& j, const PipelineConfig& base) {
    if (!j.is_object()) throw Error(ErrorCode::config_invalid, "pipeline config must be a JSON object");
    static const std::set<std::string> kKeys = {
        "chunking", "fusion", "rerank", "top_k", "context_token_budget", "prompt_template_id",
        "model_id", "rephrase_enabled", "subscription_id", "failure_message"};
    for (const auto& [k, v] : j.items()) {
        if (kKeys.count(k) == 0) throw Error(ErrorCode::config_invalid, "unknown pipeline config key '" + k + "'");
    }
    PipelineConfig c = base;
    try {
        if (j.contains("chunking")) {
            const auto& ch = j.at("chunking");
            c.chunking.chunk_tokens = ch.value("chunk_tokens", c.chunking.chunk_tokens);
            c.chunking.overlap_tokens = ch.value("overlap_tokens", c.chunking.overlap_tokens);
            if (ch.contains("mode")) c.chunking.mode = ingest::parse_chunk_mode(ch.at("mode").get<std::string>());
            c.chunking.prepend_section_path = ch.value("prepend_section_path", c.chunking.prepend_section_path);
        }
        if (j.contains("fusion")) c.fusion = index::parse_fusion(j.at("fusion").get<std::string>());
        if (j.contains("rerank")) c.rerank = parse_rerank(j.at("rerank").get<std::string>());
        c.top_k = j.value("top_k", c.top_k);
        c.context_token_budget = j.value("context_token_budget", c.context_token_budget);
        c.prompt_template_id = j.value("prompt_template_id", c.prompt_template_id);
        c.model_id = j.value("model_id", c.model_id);
        c.rephrase_enabled = j.value("rephrase_enabled", c.rephrase_enabled);
        c.subscription_id = j.value("subscription_id", c.subscription_id);
        c.failure_message = j.value("failure_message", c.failure_message);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_invalid, std::string("pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

json PipelineConfig::to_json() const {
    return json{{"chunking",
                 {{"chunk_tokens", chunking.chunk_tokens},
                  {"overlap_tokens", chunking.overlap_tokens},
                  {"mode", ingest::to_string(chunking.mode)},
                  {"prepend_section_path", chunking.prepend_section_path}}},
                {"fusion", index::to_string(fusion)},
                {"rerank", to_string(rerank)},
                {"top_k", top_k},
                {"context_token_budget", context_token_budget},
                {"prompt_template_id", prompt_template_id},
                {"model_id", model_id},
                {"rephrase_enabled", rephrase_enabled},
                {"subscription_id", subscription_id},
                {"failure_message", failure_message}};
}

json to_json(const Citation& c) {
    return json{{"marker", c.marker}, {"doc_id", c.doc_id}, {"uri", c.uri}, {"chunk_id", c.chunk_id}};
}

json to_json(const Answer& a) {
    json cites = json::array();
    for (const auto& c : a.citations) cites.push_back(to_json(c));
    json j{{"text", a.text}, {"citations", cites}, {"trace_id", a.trace_id}, {"blocked", a.blocked}};
    j["block_reason"] = a.block_reason ? json(*a.block_reason) : json(nullptr);
    if (a.error) j["error"] = *a.error;
    return j;
}

// ---------------------------------------------------------------------------
// Stage functions

namespace {

std::set<std::string> content_tokens(std::string_view text) {
    std::set<std::string> out;
    for (auto& t : ingest::tokenize(text)) {
        if (!ingest::is_stopword(t)) out.insert(std::move(t));
    }
    return out;
}

json hits_detail(const std::vector<ScoredHit>& hits) {
    json arr = json::array();
    for (const auto& h : hits) arr.push_back(index::to_json(h));
    return arr;
}

std::string hit_ids(const std::vector<ScoredHit>& hits) {
    std::string s;
    for (const auto& h : hits) {
        s += h.chunk_id;
        s.push_back('\n');
    }
    return s;
}

}  // namespace

double lexical_overlap(std::string_view query, const ingest::Chunk& chunk) {
    const auto q = content_tokens(query);
    if (q.empty()) return 0.0;
    const auto toks = ingest::tokenize(chunk.text);
    const std::set<std::string> c(toks.begin(), toks.end());
    std::size_t shared = 0;
    for (const auto& t : q) shared += c.count(t);
    return static_cast<double>(shared) / static_cast<double>(q.size());
}

std::vector<ScoredHit> rerank(std::string_view query, std::vector<ScoredHit> hits, Rerank strategy) {
    if (strategy == Rerank::none || content_tokens(query).empty()) return hits;
    std::vector<std::pair<double, ScoredHit>> scored;
    scored.reserve(hits.size());
    for (auto& h : hits) {
        const double s = h.chunk ? lexical_overlap(query, *h.chunk) : 0.0;
        scored.emplace_back(s, std::move(h));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<ScoredHit> out;
    out.reserve(scored.size());
    for (auto& [s, h] : scored) out.push_back(std::move(h));
    return out;
}

std::string render_history(const std::vector<Turn>& history) {
    if (history.empty()) return "(none)";
    std::string out;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (i) out.push_back('\n');
        out += history[i].role + ": " + history[i].text;
    }
    return out;
}

std::string render_context(const std::vector<ScoredHit>& hits) {
    if (hits.empty()) return "NO CONTEXT";
    std::string out;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (i) out += "\n\n";
        out += "[" + std::to_string(i + 1) + "] (" + (hits[i].chunk ? hits[i].chunk->uri : std::string()) + ")\n";
        if (hits[i].chunk) out += hits[i].chunk->text;
    }
    return out;
}

AssembledPrompt assemble_prompt(const TemplateStore& templates, const std::string& template_id,
                                std::string_view query, const std::vector<ScoredHit>& hits,
                                const std::vector<Turn>& history, int budget) {
    if (budget <= 0) throw Error(ErrorCode::config_invalid, "context token budget must be > 0");
    const std::string hist = render_history(history);
    auto build = [&](const std::vector<ScoredHit>& included) {
        AssembledPrompt p;
        p.prompt_text = templates.render(template_id, hist, render_context(included), query);
        p.prompt_tokens = ingest::tokenize(p.prompt_text).size();
        p.included_hits = included;
        return p;
    };
    const auto limit = static_cast<std::size_t>(budget);
    if (hits.empty()) return build({});

    std::vector<ScoredHit> included{hits.front()};
    AssembledPrompt best = build(included);
    best.overflow = best.prompt_tokens > limit;
    for (std::size_t i = 1; i < hits.size() && !best.overflow; ++i) {
        included.push_back(hits[i]);
        AssembledPrompt next = build(included);
        if (next.prompt_tokens > limit) break;
        best = std::move(next);
    }
    return best;
}

CitationExtraction extract_citations_detailed(std::string_view completion,
                                              const std::vector<ScoredHit>& included_hits) {
    CitationExtraction out;
    std::set<int> used;
    const int n = static_cast<int>(included_hits.size());
    std::size_t i = 0;
    while (i < completion.size()) {
        if (completion[i] == '[') {
            std::size_t j = i + 1;
            while (j < completion.size() && std::isdigit(static_cast<unsigned char>(completion[j]))) ++j;
            if (j > i + 1 && j < completion.size() && completion[j] == ']') {
                const std::string_view digits = completion.substr(i + 1, j - i - 1);
                int marker = -1;
                if (digits.size() <= 6) marker = std::stoi(std::string(digits));
                if (marker >= 1 && marker <= n) {
                    used.insert(marker);
                    out.text.append(completion.substr(i, j - i + 1));
                } else {
                    out.stripped_markers.push_back(marker);
                }
                i = j + 1;
                continue;
            }
        }
        out.text.push_back(completion[i]);
        ++i;
    }
    auto cite = [&](int marker) {
        const auto& h = included_hits[static_cast<std::size_t>(marker - 1)];
        out.citations.push_back(Citation{marker, h.doc_id, h.chunk ? h.chunk->uri : std::string(), h.chunk_id});
    };
    if (used.empty()) {
        out.fallback = true;
        for (int m = 1; m <= std::min(3, n); ++m) cite(m);
    } else {
        for (int m : used) cite(m);
    }
    return out;
}

Answer extract_citations(std::string_view completion, const std::vector<ScoredHit>& included_hits) {
    auto ex = extract_citations_detailed(completion, included_hits);
    Answer a;
    a.text = std::move(ex.text);
    a.citations = std::move(ex.citations);
    return a;
}

// ---------------------------------------------------------------------------
// Pipeline

StageClock::StageClock(std::string name)
    : name_(std::move(name)), started_at_(Clock::now()), start_(std::chrono::steady_clock::now()) {}

ragops::StageRecord StageClock::finish(std::string_view input, std::string_view output, json detail) const {
    ragops::StageRecord r;
    r.stage_name = name_;
    r.started_at = started_at_;
    r.duration = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start_);
    r.input_digest = sha256_hex(input);
    r.output_digest = sha256_hex(output);
    r.detail = std::move(detail);
    return r;
}

Pipeline::Pipeline(const index::HybridIndex& index, gateway::Gateway& gateway, const guard::GuardrailPolicy& policy,
                   const TemplateStore& templates, ragops::TraceStore& traces)
    : index_(index), gateway_(gateway), policy_(policy), templates_(templates), traces_(traces) {}

Rephrasal Pipeline::rephrase_query(const QueryContext& ctx, std::string_view query, const PipelineConfig& cfg) const {
    Rephrasal r{std::string(query), std::string(query), false, {}};
    if (!cfg.rephrase_enabled) return r;
    try {
        gateway::ChatRequest req;
        req.subscription_id = cfg.subscription_id;
        req.model_id = cfg.model_id;
        req.messages.push_back({"user", templates_.render("REPHRASE", render_history(ctx.history), "", query)});
        const auto resp = gateway_.chat(req);
        std::string text = trim(resp.text);
        if (text.empty()) {
            r.fallback = true;
            r.note = "empty rephrase response";
        } else {
            r.rephrased = std::move(text);
        }
    } catch (const Error& e) {
        r.fallback = true;
        r.note = std::string(to_string(e.code())) + ": " + e.what();
    }
    return r;
}

gateway::ChatResponse Pipeline::generate_answer(const std::string& prompt_text, const std::string& model_id,
                                                const QueryContext&, const PipelineConfig& cfg) const {
    gateway::ChatRequest req;
    req.subscription_id = cfg.subscription_id;
    req.model_id = model_id;
    req.messages.push_back({"user", prompt_text});
    return gateway_.chat(req);
}

PipelineResult Pipeline::answer(const QueryContext& ctx, std::string_view query, const PipelineConfig& cfg,
                                std::vector<ragops::StageRecord> leading_stages) const {
    cfg.validate();
    PipelineResult res;
    auto& trace = res.trace;
    trace.trace_id = traces_.next_id();
    trace.request_id = ctx.request_id;
    trace.user_id = ctx.principal.user_id;
    trace.stages = std::move(leading_stages);
    const std::string q(query);

    auto finish = [&]() -> PipelineResult {
        res.answer.trace_id = trace.trace_id;
        traces_.store(trace);
        return std::move(res);
    };
    auto fail = [&](const StageClock& clock, std::string_view input, const Error& e) -> PipelineResult {
        const json err{{"status", "error"}, {"error_code", to_string(e.code())}, {"message", e.what()}};
        trace.stages.push_back(clock.finish(input, e.what(), err));
        StageClock ec("error");
        json detail = err;
        detail["stage"] = trace.stages.back().stage_name;
        trace.stages.push_back(ec.finish(e.what(), cfg.failure_message, detail));
        res.answer.text = cfg.failure_message;
        res.answer.error = std::string(to_string(e.code()));
        return finish();
    };

    // guardrail_in
    {
        StageClock clock("guardrail_in");
        const auto verdict = guard::check_input(q, policy_);
        json detail{{"status", verdict.allowed ? "ok" : "blocked"}, {"verdict", verdict.allowed ? "allow" : "block"}};
        if (!verdict.allowed) detail["reason"] = verdict.reason;
        trace.stages.push_back(clock.finish(q, verdict.allowed ? "allow" : "block:" + verdict.reason, detail));
        if (!verdict.allowed) {
            res.answer.text = policy_.refusal_message();
            res.answer.blocked = true;
            res.answer.block_reason = verdict.reason;
            return finish();
        }
    }

    // rephrase
    Rephrasal rephrasal;
    {
        StageClock clock("rephrase");
        rephrasal = rephrase_query(ctx, q, cfg);
        json detail{{"status", rephrasal.fallback ? "fallback" : "ok"},
                    {"enabled", cfg.rephrase_enabled},
                    {"original", rephrasal.original},
                    {"rephrased", rephrasal.rephrased}};
        if (rephrasal.fallback) detail["note"] = rephrasal.note;
        trace.stages.push_back(clock.finish(q + "\n" + render_history(ctx.history), rephrasal.rephrased, detail));
    }

    // retrieve
    std::vector<ScoredHit> hits;
    {
        StageClock clock("retrieve");
        auto raw = index_.hybrid_search(rephrasal.rephrased, cfg.top_k, ctx.principal, cfg.fusion);
        const std::size_t before = raw.size();
        hits = guard::filter_sensitive_hits(std::move(raw), ctx.principal.clearance);
        json detail{{"status", "ok"},
                    {"query", rephrasal.rephrased},
                    {"fusion", index::to_string(cfg.fusion)},
                    {"top_k", cfg.top_k},
                    {"hits", hits_detail(hits)},
                    {"filtered_out", before - hits.size()}};
        trace.stages.push_back(clock.finish(rephrasal.rephrased, hit_ids(hits), detail));
    }

    // rerank
    {
        StageClock clock("rerank");
        const std::string input = hit_ids(hits);
        hits = rerank(rephrasal.rephrased, std::move(hits), cfg.rerank);
        json order = json::array();
        for (const auto& h : hits) {
            json o{{"chunk_id", h.chunk_id}};
            if (cfg.rerank == Rerank::lexical_overlap && h.chunk) {
                o["overlap"] = lexical_overlap(rephrasal.rephrased, *h.chunk);
            }
            order.push_back(std::move(o));
        }
        trace.stages.push_back(clock.finish(input, hit_ids(hits),
                                            json{{"status", "ok"}, {"strategy", to_string(cfg.rerank)}, {"order", order}}));
    }
    res.ranked_hits = hits;

    // assemble_prompt
    AssembledPrompt prompt;
    {
        StageClock clock("assemble_prompt");
        try {
            prompt = assemble_prompt(templates_, cfg.prompt_template_id, q, hits, ctx.history, cfg.context_token_budget);
        } catch (const Error& e) {
            return fail(clock, hit_ids(hits), e);
        }
        json included = json::array();
        for (std::size_t i = 0; i < prompt.included_hits.size(); ++i) {
            included.push_back({{"marker", i + 1}, {"chunk_id", prompt.included_hits[i].chunk_id}});
        }
        trace.stages.push_back(clock.finish(hit_ids(hits), prompt.prompt_text,
                                            json{{"status", "ok"},
                                                 {"template_id", cfg.prompt_template_id},
                                                 {"budget", cfg.context_token_budget},
                                                 {"prompt_tokens", prompt.prompt_tokens},
                                                 {"overflow", prompt.overflow},
                                                 {"included", included},
                                                 {"prompt_text", prompt.prompt_text}}));
    }
    res.included_hits = prompt.included_hits;
    res.prompt_text = prompt.prompt_text;

    // generate
    {
        StageClock clock("generate");
        gateway::ChatResponse resp;
        try {
            resp = generate_answer(prompt.prompt_text, cfg.model_id, ctx, cfg);
        } catch (const Error& e) {
            return fail(clock, prompt.prompt_text, e);
        }
        res.raw_completion = resp.text;
        trace.stages.push_back(clock.finish(prompt.prompt_text, resp.text,
                                            json{{"status", "ok"},
                                                 {"model_id", cfg.model_id},
                                                 {"prompt_tokens", resp.prompt_tokens},
                                                 {"completion_tokens", resp.completion_tokens},
                                                 {"cost", resp.cost.to_string()},
                                                 {"audit_id", resp.audit_id},
                                                 {"provider_latency_us", resp.provider_latency.count()},
                                                 {"completion", resp.text}}));
    }

    // cite
    {
        StageClock clock("cite");
        auto ex = extract_citations_detailed(res.raw_completion, prompt.included_hits);
        json cites = json::array();
        for (const auto& c : ex.citations) cites.push_back(to_json(c));
        res.answer.text = std::move(ex.text);
        res.answer.citations = std::move(ex.citations);
        trace.stages.push_back(clock.finish(res.raw_completion, cites.dump(),
                                            json{{"status", "ok"},
                                                 {"citations", cites},
                                                 {"fallback", ex.fallback},
                                                 {"stripped_markers", ex.stripped_markers}}));
    }

    // guardrail_out
    {
        StageClock clock("guardrail_out");
        const std::string before = res.answer.text;
        auto red = guard::redact_output(before, policy_);
        json counts = json::array();
        for (const auto& r : red.redactions) counts.push_back({{"rule", r.rule}, {"count", r.count}});
        res.answer.text = std::move(red.text);
        trace.stages.push_back(clock.finish(before, res.answer.text, json{{"status", "ok"}, {"redactions", counts}}));
    }
    return finish();
}

}  // namespace ragdesk::rag
