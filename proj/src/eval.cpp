#include "ragdesk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace ragdesk::ragops {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Suite

json EvalCase::to_json() const {
    json j{{"case_id", case_id}, {"query", query}, {"gold_doc_ids", gold_doc_ids},
           {"principal", index::to_json(principal)}};
    if (gold_answer) j["gold_answer"] = *gold_answer;
    return j;
}

EvalCase EvalCase::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::validation, "case must be a JSON object");
    EvalCase c;
    try {
        c.case_id = j.at("case_id").get<std::string>();
        c.query = j.at("query").get<std::string>();
        for (const auto& d : j.value("gold_doc_ids", json::array())) c.gold_doc_ids.insert(d.get<std::string>());
        if (j.contains("gold_answer") && !j.at("gold_answer").is_null()) {
            c.gold_answer = j.at("gold_answer").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, e.what());
    }
    if (j.contains("principal")) c.principal = index::principal_from_json(j.at("principal"));
    if (c.case_id.empty()) throw Error(ErrorCode::validation, "case_id must be non-empty");
    if (c.gold_doc_ids.empty() && !c.gold_answer) {
        throw Error(ErrorCode::validation, "case '" + c.case_id + "' needs gold_doc_ids or gold_answer");
    }
    return c;
}

std::vector<EvalCase> load_suite(std::istream& in, const std::string& name) {
    std::vector<EvalCase> suite;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = name + ":" + std::to_string(lineno) + ": ";
        try {
            suite.push_back(EvalCase::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::validation, where + e.what());
        } catch (const Error& e) {
            throw Error(e.code(), where + e.what());
        }
        if (!ids.insert(suite.back().case_id).second) {
            throw Error(ErrorCode::validation, where + "duplicate case_id '" + suite.back().case_id + "'");
        }
    }
    return suite;
}

std::vector<EvalCase> load_suite_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "cannot open suite '" + path + "'");
    return load_suite(in, path);
}

std::string suite_digest(const std::vector<EvalCase>& suite) {
    json arr = json::array();
    for (const auto& c : suite) arr.push_back(c.to_json());
    return sha256_hex(arr.dump());
}

// ---------------------------------------------------------------------------
// Metrics

std::string strip_label(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size() && text[i] >= 'A' && text[i] <= 'Z') ++i;
    if (i > 0 && text.substr(i, 2) == ": ") return std::string(text.substr(i + 2));
    return std::string(text);
}

double faithfulness(std::string_view answer, std::string_view context) {
    std::set<std::string> ans;
    for (auto& t : ingest::tokenize(answer)) {
        if (!ingest::is_stopword(t)) ans.insert(std::move(t));
    }
    if (ans.empty()) return 1.0;
    const auto ctx_tokens = ingest::tokenize(context);
    const std::set<std::string> ctx(ctx_tokens.begin(), ctx_tokens.end());
    std::size_t grounded = 0;
    for (const auto& t : ans) grounded += ctx.count(t);
    return static_cast<double>(grounded) / static_cast<double>(ans.size());
}

double token_f1(std::string_view answer, std::string_view gold) {
    const auto a = ingest::tokenize(answer);
    const auto g = ingest::tokenize(gold);
    if (a.empty() && g.empty()) return 1.0;
    if (a.empty() || g.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : g) ++counts[t];
    std::size_t common = 0;
    for (const auto& t : a) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(a.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

Aggregates aggregate(const std::vector<CaseRow>& rows) {
    Aggregates a;
    a.cases = rows.size();
    double hits = 0, rr = 0, faith = 0, f1 = 0;
    std::size_t gold_rows = 0, f1_rows = 0;
    std::map<std::string, std::vector<double>> lat;
    for (const auto& r : rows) {
        if (r.hit_at_k) {
            ++gold_rows;
            hits += *r.hit_at_k;
            rr += r.reciprocal_rank.value_or(0.0);
        }
        if (r.answer_f1) {
            ++f1_rows;
            f1 += *r.answer_f1;
        }
        faith += r.faithfulness;
        for (const auto& [stage, us] : r.stage_latency_us) lat[stage].push_back(us);
    }
    if (gold_rows) {
        a.hit_at_k = hits / static_cast<double>(gold_rows);
        a.mrr = rr / static_cast<double>(gold_rows);
    }
    if (f1_rows) a.answer_f1 = f1 / static_cast<double>(f1_rows);
    if (!rows.empty()) a.faithfulness = faith / static_cast<double>(rows.size());
    for (auto& [stage, v] : lat) a.latency_us[stage] = Percentiles{percentile(v, 0.50), percentile(v, 0.95)};
    return a;
}

std::map<std::string, double> Aggregates::metrics() const {
    std::map<std::string, double> m{{"faithfulness", faithfulness}};
    if (hit_at_k) m["hit_at_k"] = *hit_at_k;
    if (mrr) m["mrr"] = *mrr;
    if (answer_f1) m["answer_f1"] = *answer_f1;
    return m;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> opt_get(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("-"); }

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

}  // namespace

json CaseRow::to_json() const {
    json j{{"case_id", case_id},
           {"hit_at_k", opt(hit_at_k)},
           {"reciprocal_rank", opt(reciprocal_rank)},
           {"faithfulness", faithfulness},
           {"answer_f1", opt(answer_f1)},
           {"stage_latency_us", stage_latency_us},
           {"trace_id", trace_id}};
    if (error) j["error"] = *error;
    return j;
}

CaseRow CaseRow::from_json(const json& j) {
    CaseRow r;
    r.case_id = j.at("case_id").get<std::string>();
    r.hit_at_k = opt_get<int>(j, "hit_at_k");
    r.reciprocal_rank = opt_get<double>(j, "reciprocal_rank");
    r.faithfulness = j.at("faithfulness").get<double>();
    r.answer_f1 = opt_get<double>(j, "answer_f1");
    r.stage_latency_us = j.value("stage_latency_us", std::map<std::string, double>{});
    r.trace_id = j.value("trace_id", "");
    r.error = opt_get<std::string>(j, "error");
    return r;
}

json EvalReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) rows_j.push_back(r.to_json());
    json lat = json::object();
    for (const auto& [stage, p] : aggregates.latency_us) lat[stage] = {{"p50", p.p50}, {"p95", p.p95}};
    return json{{"k", k},
                {"suite_digest", suite_digest},
                {"config", config},
                {"aggregates",
                 {{"cases", aggregates.cases},
                  {"hit_at_k", opt(aggregates.hit_at_k)},
                  {"mrr", opt(aggregates.mrr)},
                  {"faithfulness", aggregates.faithfulness},
                  {"answer_f1", opt(aggregates.answer_f1)},
                  {"latency_us", lat}}},
                {"rows", rows_j}};
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    try {
        r.k = j.value("k", 0);
        r.suite_digest = j.at("suite_digest").get<std::string>();
        r.config = j.value("config", json::object());
        for (const auto& row : j.at("rows")) r.rows.push_back(CaseRow::from_json(row));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, std::string("report: ") + e.what());
    }
    r.aggregates = aggregate(r.rows);
    return r;
}

std::string EvalReport::text_table() const {
    std::ostringstream out;
    out << pad("case", 24) << pad("hit@" + std::to_string(k), 8) << pad("rr", 8) << pad("faith", 8) << "f1\n";
    for (const auto& r : rows) {
        out << pad(r.case_id, 24) << pad(r.hit_at_k ? std::to_string(*r.hit_at_k) : "-", 8)
            << pad(fmt_opt(r.reciprocal_rank), 8) << pad(fmt(r.faithfulness), 8) << fmt_opt(r.answer_f1);
        if (r.error) out << "  error=" << *r.error;
        out << '\n';
    }
    const auto& a = aggregates;
    out << pad("ALL (" + std::to_string(a.cases) + ")", 24) << pad(fmt_opt(a.hit_at_k), 8) << pad(fmt_opt(a.mrr), 8)
        << pad(fmt(a.faithfulness), 8) << fmt_opt(a.answer_f1) << '\n';
    if (!a.latency_us.empty()) {
        out << '\n' << pad("stage", 24) << pad("p50_us", 12) << "p95_us\n";
        for (const auto& [stage, p] : a.latency_us) {
            out << pad(stage, 24) << pad(fmt(p.p50, "%.0f"), 12) << fmt(p.p95, "%.0f") << '\n';
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Evaluation

void build_index(index::HybridIndex& idx, const std::vector<ingest::Document>& corpus,
                 const ingest::ChunkingConfig& chunking) {
    chunking.validate();
    idx.clear();
    std::vector<ingest::Chunk> chunks;
    for (const auto& doc : corpus) {
        auto c = ingest::chunk_document(doc, chunking);
        chunks.insert(chunks.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
    idx.upsert_chunks(chunks);
}

EvalReport evaluate_index(const index::HybridIndex& idx, const rag::PipelineConfig& cfg,
                          const std::vector<EvalCase>& suite, const EvalEnv& env) {
    if (suite.empty()) throw Error(ErrorCode::empty_suite, "evaluation suite is empty");
    cfg.validate();
    rag::Pipeline pipeline(idx, env.gateway, env.policy, env.templates, env.traces);
    EvalReport report;
    report.k = cfg.top_k;
    report.config = cfg.to_json();
    report.suite_digest = suite_digest(suite);
    const std::string run_id = env.traces.next_id();
    for (const auto& c : suite) {
        rag::QueryContext ctx;
        ctx.principal = c.principal;
        ctx.request_id = "eval/" + run_id + "/" + c.case_id;
        const auto res = pipeline.answer(ctx, c.query, cfg);

        CaseRow row;
        row.case_id = c.case_id;
        row.trace_id = res.trace.trace_id;
        row.error = res.answer.error;
        if (res.answer.blocked) row.error = "blocked";
        if (!c.gold_doc_ids.empty()) {
            row.reciprocal_rank = 0.0;
            for (std::size_t i = 0; i < res.ranked_hits.size(); ++i) {
                if (c.gold_doc_ids.count(res.ranked_hits[i].doc_id)) {
                    row.reciprocal_rank = 1.0 / static_cast<double>(i + 1);
                    break;
                }
            }
            row.hit_at_k = *row.reciprocal_rank > 0.0 ? 1 : 0;
        }
        const std::string produced =
            strip_label(res.raw_completion.empty() ? res.answer.text : res.raw_completion);
        row.faithfulness = faithfulness(produced, res.prompt_text);
        if (c.gold_answer) row.answer_f1 = token_f1(strip_label(res.answer.text), *c.gold_answer);
        for (const auto& s : res.trace.stages) {
            row.stage_latency_us[s.stage_name] += static_cast<double>(s.duration.count());
        }
        report.rows.push_back(std::move(row));
    }
    report.aggregates = aggregate(report.rows);
    return report;
}

EvalReport evaluate(const std::vector<ingest::Document>& corpus, const rag::PipelineConfig& cfg,
                    const std::vector<EvalCase>& suite, const EvalEnv& env) {
    if (suite.empty()) throw Error(ErrorCode::empty_suite, "evaluation suite is empty");
    index::HybridIndex idx;
    build_index(idx, corpus, cfg.chunking);
    return evaluate_index(idx, cfg, suite, env);
}

// ---------------------------------------------------------------------------
// Grid search

namespace {

const std::set<std::string> kAxes = {"chunk_tokens", "overlap_tokens", "fusion", "rerank", "top_k"};
const std::set<std::string> kObjectives = {"hit_at_k", "mrr", "faithfulness", "answer_f1"};

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

void apply(rag::PipelineConfig& cfg, const std::string& axis, const json& v) {
    try {
        if (axis == "chunk_tokens") cfg.chunking.chunk_tokens = v.get<int>();
        else if (axis == "overlap_tokens") cfg.chunking.overlap_tokens = v.get<int>();
        else if (axis == "top_k") cfg.top_k = v.get<int>();
        else if (axis == "fusion") cfg.fusion = index::parse_fusion(v.get<std::string>());
        else if (axis == "rerank") cfg.rerank = rag::parse_rerank(v.get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_invalid, axis + "=" + value_text(v) + ": " + e.what());
    }
}

std::string chunking_key(const ingest::ChunkingConfig& c) {
    return std::to_string(c.chunk_tokens) + "/" + std::to_string(c.overlap_tokens) + "/" +
           std::string(ingest::to_string(c.mode)) + "/" + (c.prepend_section_path ? "1" : "0");
}

}  // namespace

GridSpec GridSpec::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::config_invalid, "grid must be a JSON object");
    GridSpec g;
    const json& axes = j.contains("axes") ? j.at("axes") : j;
    for (const auto& [name, values] : axes.items()) {
        if (name == "objective" && !j.contains("axes")) continue;
        if (!values.is_array()) throw Error(ErrorCode::config_invalid, "axes." + name + " must be a list");
        g.axes[name] = values.get<std::vector<json>>();
    }
    g.objective = j.value("objective", g.objective);
    g.validate();
    return g;
}

void GridSpec::validate() const {
    if (axes.empty()) throw Error(ErrorCode::config_invalid, "grid needs at least one axis");
    for (const auto& [name, values] : axes) {
        if (kAxes.count(name) == 0) throw Error(ErrorCode::config_invalid, "unknown grid axis '" + name + "'");
        if (values.empty()) throw Error(ErrorCode::config_invalid, "grid axis '" + name + "' has no values");
    }
    if (kObjectives.count(objective) == 0) {
        throw Error(ErrorCode::config_invalid, "unknown objective '" + objective + "'");
    }
}

std::size_t GridSpec::size() const {
    std::size_t n = 1;
    for (const auto& [name, values] : axes) n *= values.size();
    return n;
}

std::string encode_assignment(const std::map<std::string, json>& assignment) {
    std::string out;
    for (const auto& [axis, v] : assignment) {
        if (!out.empty()) out.push_back(';');
        out += axis + "=" + value_text(v);
    }
    return out;
}

GridResult grid_search(const std::vector<ingest::Document>& corpus, const rag::PipelineConfig& base,
                       const GridSpec& grid, const std::vector<EvalCase>& suite, const EvalEnv& env) {
    grid.validate();
    if (suite.empty()) throw Error(ErrorCode::empty_suite, "evaluation suite is empty");
    GridResult result;
    result.objective = grid.objective;

    std::vector<std::pair<std::string, const std::vector<json>*>> axes;
    for (const auto& [name, values] : grid.axes) axes.emplace_back(name, &values);
    std::vector<std::size_t> pos(axes.size(), 0);
    std::map<std::string, std::unique_ptr<index::HybridIndex>> indexes;

    for (std::size_t point = 0; point < grid.size(); ++point) {
        GridPoint gp;
        for (std::size_t a = 0; a < axes.size(); ++a) gp.assignment[axes[a].first] = (*axes[a].second)[pos[a]];
        gp.encoding = encode_assignment(gp.assignment);
        gp.config = base;
        try {
            for (const auto& [axis, v] : gp.assignment) apply(gp.config, axis, v);
            gp.config.validate();
            const std::string key = chunking_key(gp.config.chunking);
            auto& idx = indexes[key];
            if (!idx) {
                idx = std::make_unique<index::HybridIndex>();
                build_index(*idx, corpus, gp.config.chunking);
            }
            gp.report = evaluate_index(*idx, gp.config, suite, env);
            const auto metrics = gp.report->aggregates.metrics();
            auto it = metrics.find(grid.objective);
            if (it == metrics.end()) throw Error(ErrorCode::config_invalid, "objective '" + grid.objective + "' not available for this suite");
            gp.objective = it->second;
            result.ranked.push_back(std::move(gp));
        } catch (const Error& e) {
            gp.skipped = std::string(to_string(e.code())) + ": " + e.what();
            result.skipped.push_back(std::move(gp));
        }
        // odometer over axes, last axis fastest
        for (std::size_t a = axes.size(); a-- > 0;) {
            if (++pos[a] < axes[a].second->size()) break;
            pos[a] = 0;
        }
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(), [](const GridPoint& x, const GridPoint& y) {
        if (x.objective != y.objective) return x.objective > y.objective;
        return x.encoding < y.encoding;
    });
    return result;
}

json GridResult::to_json() const {
    json ranked_j = json::array();
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& p = ranked[i];
        ranked_j.push_back({{"rank", i + 1},
                            {"encoding", p.encoding},
                            {"assignment", p.assignment},
                            {"objective", p.objective},
                            {"config", p.config.to_json()},
                            {"report", p.report ? p.report->to_json() : json(nullptr)}});
    }
    json skipped_j = json::array();
    for (const auto& p : skipped) skipped_j.push_back({{"encoding", p.encoding}, {"reason", p.skipped.value_or("")}});
    return json{{"objective", objective}, {"ranked", ranked_j}, {"skipped", skipped_j}};
}

std::string GridResult::text_table() const {
    std::ostringstream out;
    out << pad("rank", 6) << pad(objective, 10) << pad("hit@k", 8) << pad("mrr", 8) << pad("faith", 8) << "config\n";
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& p = ranked[i];
        const auto& a = p.report->aggregates;
        out << pad(std::to_string(i + 1), 6) << pad(fmt(p.objective), 10) << pad(fmt_opt(a.hit_at_k), 8)
            << pad(fmt_opt(a.mrr), 8) << pad(fmt(a.faithfulness), 8) << p.encoding << '\n';
    }
    for (const auto& p : skipped) out << "skipped  " << p.encoding << "  " << p.skipped.value_or("") << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Regression gate

json GateResult::to_json() const {
    json f = json::array();
    for (const auto& d : failures) {
        f.push_back({{"metric", d.metric},
                     {"baseline", d.baseline},
                     {"candidate", d.candidate},
                     {"delta", d.candidate - d.baseline},
                     {"allowed_drop", d.allowed_drop}});
    }
    return json{{"pass", pass}, {"failures", f}};
}

GateResult regression_gate(const EvalReport& baseline, const EvalReport& candidate,
                           const std::map<std::string, double>& epsilon) {
    if (baseline.suite_digest != candidate.suite_digest) {
        throw Error(ErrorCode::suite_mismatch, "baseline and candidate were run on different suites");
    }
    GateResult g;
    const auto base = baseline.aggregates.metrics();
    const auto cand = candidate.aggregates.metrics();
    for (const auto& [metric, b] : base) {
        auto e = epsilon.find(metric);
        const double allowed = e == epsilon.end() ? 0.0 : e->second;
        auto c = cand.find(metric);
        const double cv = c == cand.end() ? 0.0 : c->second;
        if (b - cv > allowed + 1e-12) g.failures.push_back({metric, b, cv, allowed});
    }
    g.pass = g.failures.empty();
    return g;
}

}  // namespace ragdesk::ragops
