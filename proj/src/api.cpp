#include "ragdesk/api.hpp"

#include <sstream>

namespace ragdesk::api {

using nlohmann::json;

std::string ApiRequest::header(const std::string& lower_name) const {
    auto it = headers.find(lower_name);
    return it == headers.end() ? std::string() : it->second;
}

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::unauthorized: return 403;
        case ErrorCode::not_found:
        case ErrorCode::unknown_model:
        case ErrorCode::unknown_subscription: return 404;
        case ErrorCode::quota_exceeded:
        case ErrorCode::rate_limited: return 429;
        case ErrorCode::provider_error: return 502;
        case ErrorCode::provider_timeout: return 504;
        default: return 400;
    }
}

ApiResponse error_response(ErrorCode code, const std::string& message) {
    return ApiResponse{http_status(code), json{{"error_code", to_string(code)}, {"message", message}}};
}

std::set<std::string> roles_of(const ApiRequest& req) {
    std::set<std::string> roles;
    std::stringstream ss(req.header("x-roles"));
    std::string r;
    while (std::getline(ss, r, ',')) {
        r = trim(r);
        if (!r.empty()) roles.insert(r);
    }
    return roles;
}

namespace {

json parse_body(const ApiRequest& req) {
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::bad_request, std::string("malformed JSON body: ") + e.what());
    }
}

json parse_object(const ApiRequest& req) {
    json j = parse_body(req);
    if (!j.is_object()) throw Error(ErrorCode::bad_request, "request body must be a JSON object");
    return j;
}

template <class T>
T get_field(const json& j, const char* key) {
    if (!j.contains(key)) throw Error(ErrorCode::bad_request, std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::bad_request, std::string("field '") + key + "': " + e.what());
    }
}

std::optional<std::string> query_param(const ApiRequest& req, const std::string& key) {
    auto it = req.query.find(key);
    if (it == req.query.end() || it->second.empty()) return std::nullopt;
    return it->second;
}

gateway::TimeWindow window_of(const ApiRequest& req) {
    gateway::TimeWindow w;
    try {
        if (auto f = query_param(req, "from")) w.from = parse_iso8601(*f);
        if (auto t = query_param(req, "to")) w.to = parse_iso8601(*t);
    } catch (const Error& e) {
        throw Error(ErrorCode::bad_request, e.what());
    }
    return w;
}

std::vector<ragops::EvalCase> suite_of(const json& body) {
    if (body.contains("suite_path")) return ragops::load_suite_file(get_field<std::string>(body, "suite_path"));
    if (!body.contains("suite")) throw Error(ErrorCode::bad_request, "missing field 'suite' or 'suite_path'");
    const auto& s = body.at("suite");
    std::vector<ragops::EvalCase> suite;
    if (s.is_string()) {
        std::istringstream in(s.get<std::string>());
        suite = ragops::load_suite(in, "suite");
    } else if (s.is_array()) {
        for (const auto& c : s) suite.push_back(ragops::EvalCase::from_json(c));
    } else {
        throw Error(ErrorCode::bad_request, "'suite' must be a list of cases or a JSONL string");
    }
    return suite;
}

}  // namespace

ApiResponse Api::handle(const ApiRequest& req) {
    try {
        const auto& p = req.path;
        auto only = [&](const char* method) {
            if (req.method != method) throw Error(ErrorCode::bad_request, "method not allowed");
        };
        if (p == "/v1/health") return ApiResponse{200, json{{"status", "ok"}}};
        if (p == "/v1/ingest") {
            only("POST");
            return ingest(req);
        }
        if (p == "/v1/chat") {
            only("POST");
            return chat(req);
        }
        if (p.rfind("/v1/traces/", 0) == 0 && p.size() > 11) {
            only("GET");
            return trace(req, p.substr(11));
        }
        if (p == "/v1/eval/run") {
            only("POST");
            return eval_run(req);
        }
        if (p == "/v1/eval/gridsearch") {
            only("POST");
            return eval_grid(req);
        }
        if (p == "/v1/gateway/chat") {
            only("POST");
            return gateway_chat(req);
        }
        if (p == "/v1/gateway/usage") {
            only("GET");
            return gateway_usage(req);
        }
        if (p == "/v1/gateway/audit") {
            only("GET");
            return gateway_audit(req);
        }
        if (p == "/v1/bots") {
            only("GET");
            return bots(req);
        }
        if (p == "/v1/feedback") {
            only("POST");
            return feedback(req);
        }
        return error_response(ErrorCode::not_found, "no route for " + req.method + " " + p);
    } catch (const Error& e) {
        return error_response(e.code(), e.what());
    } catch (const json::exception& e) {
        return error_response(ErrorCode::bad_request, e.what());
    }
}

ApiResponse Api::ingest(const ApiRequest& req) {
    std::string corpus_id = query_param(req, "corpus_id").value_or("");
    std::vector<ingest::Document> docs;
    json j;
    bool is_object = false;
    try {
        j = json::parse(req.body);
        is_object = j.is_object();
    } catch (const json::parse_error&) {
    }
    if (is_object && (j.contains("path") || j.contains("jsonl") || j.contains("corpus_id"))) {
        if (j.contains("corpus_id")) corpus_id = get_field<std::string>(j, "corpus_id");
        if (j.contains("path")) {
            docs = ingest::load_manifest_file(get_field<std::string>(j, "path"));
        } else {
            std::istringstream in(get_field<std::string>(j, "jsonl"));
            docs = ingest::load_manifest(in, "body");
        }
    } else {
        std::istringstream in(req.body);
        docs = ingest::load_manifest(in, "body");
    }
    if (corpus_id.empty()) corpus_id = engine_.orchestrator().bot(engine_.orchestrator().default_bot_id()).corpus_id;
    const auto s = engine_.ingest(corpus_id, docs);
    return ApiResponse{200, json{{"corpus_id", corpus_id}, {"documents", s.documents}, {"chunks", s.chunks}}};
}

ApiResponse Api::chat(const ApiRequest& req) {
    const json j = parse_object(req);
    engine::ChatInput in;
    in.message = get_field<std::string>(j, "message");
    if (!j.contains("user")) throw Error(ErrorCode::bad_request, "missing field 'user'");
    try {
        in.principal = index::principal_from_json(j.at("user"));
    } catch (const Error& e) {
        throw Error(ErrorCode::bad_request, e.what());
    }
    if (j.contains("bot_id") && !j.at("bot_id").is_null()) in.bot_id = get_field<std::string>(j, "bot_id");
    if (j.contains("history")) {
        if (!j.at("history").is_array()) throw Error(ErrorCode::bad_request, "'history' must be a list");
        for (const auto& t : j.at("history")) {
            if (!t.is_object()) throw Error(ErrorCode::bad_request, "history turns must be objects");
            in.history.push_back({get_field<std::string>(t, "role"), get_field<std::string>(t, "text")});
        }
    }
    if (j.contains("request_id")) in.request_id = get_field<std::string>(j, "request_id");
    if (auth_) auth_(req, in.principal);
    return ApiResponse{200, engine_.chat(in).to_json()};
}

ApiResponse Api::trace(const ApiRequest& req, const std::string& trace_id) {
    const auto t = engine_.traces().get(trace_id);
    const auto roles = roles_of(req);
    const bool privileged = roles.count("auditor") || roles.count("developer");
    if (!privileged && (t.user_id.empty() || req.header("x-user-id") != t.user_id)) {
        throw Error(ErrorCode::unauthorized, "trace belongs to another user");
    }
    return ApiResponse{200, ragops::to_json(t)};
}

ApiResponse Api::eval_run(const ApiRequest& req) {
    const json j = parse_object(req);
    const auto suite = suite_of(j);
    std::optional<json> overrides;
    if (j.contains("pipeline")) overrides = j.at("pipeline");
    std::optional<std::string> corpus;
    if (j.contains("corpus_id")) corpus = get_field<std::string>(j, "corpus_id");
    const auto report = engine_.evaluate(suite, overrides, corpus);
    json out{{"report", report.to_json()}, {"table", report.text_table()}};
    if (j.contains("baseline")) {
        const auto baseline = ragops::EvalReport::from_json(j.at("baseline"));
        const auto eps = j.value("epsilon", std::map<std::string, double>{});
        out["gate"] = ragops::regression_gate(baseline, report, eps).to_json();
    }
    return ApiResponse{200, out};
}

ApiResponse Api::eval_grid(const ApiRequest& req) {
    const json j = parse_object(req);
    const auto suite = suite_of(j);
    if (!j.contains("grid")) throw Error(ErrorCode::bad_request, "missing field 'grid'");
    const auto grid = ragops::GridSpec::from_json(j.at("grid"));
    std::optional<std::string> corpus;
    if (j.contains("corpus_id")) corpus = get_field<std::string>(j, "corpus_id");
    const auto result = engine_.grid_search(grid, suite, corpus);
    json out = result.to_json();
    out["table"] = result.text_table();
    return ApiResponse{200, out};
}

ApiResponse Api::gateway_chat(const ApiRequest& req) {
    const json j = parse_object(req);
    gateway::ChatRequest cr;
    cr.subscription_id = get_field<std::string>(j, "subscription_id");
    cr.model_id = get_field<std::string>(j, "model_id");
    cr.max_tokens = j.value("max_tokens", 0);
    if (!j.contains("messages") || !j.at("messages").is_array()) {
        throw Error(ErrorCode::bad_request, "'messages' must be a list");
    }
    for (const auto& m : j.at("messages")) {
        if (!m.is_object()) throw Error(ErrorCode::bad_request, "messages must be objects");
        const char* text_key = m.contains("text") ? "text" : "content";
        cr.messages.push_back({get_field<std::string>(m, "role"), get_field<std::string>(m, text_key)});
    }
    const auto r = engine_.gateway().chat(cr);
    return ApiResponse{200, json{{"text", r.text},
                                 {"prompt_tokens", r.prompt_tokens},
                                 {"completion_tokens", r.completion_tokens},
                                 {"provider_latency_us", r.provider_latency.count()},
                                 {"cost", r.cost.to_string()},
                                 {"audit_id", r.audit_id}}};
}

ApiResponse Api::gateway_usage(const ApiRequest& req) {
    const auto sub = query_param(req, "subscription_id");
    if (!sub) throw Error(ErrorCode::bad_request, "missing query parameter 'subscription_id'");
    return ApiResponse{200, engine_.gateway().usage_report(*sub, window_of(req)).to_json()};
}

ApiResponse Api::gateway_audit(const ApiRequest& req) {
    gateway::Caller caller{req.header("x-user-id"), roles_of(req)};
    gateway::AuditFilter f;
    f.subscription_id = query_param(req, "subscription_id");
    f.model_id = query_param(req, "model_id");
    f.window = window_of(req);
    json records = json::array();
    for (const auto& r : engine_.gateway().audit_query(caller, f)) records.push_back(r.to_json());
    return ApiResponse{200, json{{"records", records}}};
}

ApiResponse Api::bots(const ApiRequest&) {
    const auto& orch = engine_.orchestrator();
    json list = json::array();
    for (const auto& b : orch.bots()) {
        list.push_back({{"bot_id", b.bot_id},
                        {"display_name", b.display_name},
                        {"corpus_id", b.corpus_id},
                        {"keyword_terms", b.keyword_terms},
                        {"decompose", b.decompose}});
    }
    return ApiResponse{200, json{{"bots", list}, {"default_bot_id", orch.default_bot_id()}}};
}

ApiResponse Api::feedback(const ApiRequest& req) {
    const json j = parse_object(req);
    auto f = engine::Feedback::from_json(j);
    if (!engine_.traces().contains(f.trace_id)) throw Error(ErrorCode::not_found, "unknown trace '" + f.trace_id + "'");
    if (f.user_id.empty()) f.user_id = req.header("x-user-id");
    f.timestamp = Clock::now();
    const bool replaced = engine_.feedback().record(std::move(f));
    return ApiResponse{200, json{{"ok", true}, {"replaced", replaced}}};
}

}  // namespace ragdesk::api
