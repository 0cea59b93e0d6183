#include "ragdesk/gateway.hpp"

#include <algorithm>

#include "ragdesk/ingest.hpp"

namespace ragdesk::gateway {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Mock provider

MockScript::MockScript(std::vector<MockRule> rules) : rules_(std::move(rules)) {
    compiled_.reserve(rules_.size());
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        if (rules_[i].match == MatchKind::regex) {
            try {
                compiled_.emplace_back(std::regex(rules_[i].pattern, std::regex::ECMAScript));
            } catch (const std::regex_error& e) {
                throw Error(ErrorCode::config_invalid,
                            "mock rule " + std::to_string(i) + ": pattern does not compile: " + e.what());
            }
        } else {
            compiled_.emplace_back(std::nullopt);
        }
    }
}

MockScript MockScript::from_json(const json& j) {
    std::vector<MockRule> rules;
    for (const auto& r : j.value("rules", json::array())) {
        MockRule rule;
        const std::string match = r.value("match", "substring");
        if (match == "substring") rule.match = MatchKind::substring;
        else if (match == "regex") rule.match = MatchKind::regex;
        else throw Error(ErrorCode::config_invalid, "mock rule match must be 'substring' or 'regex'");
        rule.pattern = r.at("pattern").get<std::string>();
        rule.response = r.value("response", "");
        const std::string fault = r.value("fault", "none");
        if (fault == "none") rule.fault = Fault::none;
        else if (fault == "error") rule.fault = Fault::error;
        else if (fault == "timeout") rule.fault = Fault::timeout;
        else throw Error(ErrorCode::config_invalid, "mock rule fault must be none, error or timeout");
        rules.push_back(std::move(rule));
    }
    return MockScript(std::move(rules));
}

json MockScript::to_json() const {
    json rules = json::array();
    for (const auto& r : rules_) {
        json jr{{"match", r.match == MatchKind::regex ? "regex" : "substring"},
                {"pattern", r.pattern},
                {"response", r.response}};
        if (r.fault == Fault::error) jr["fault"] = "error";
        if (r.fault == Fault::timeout) jr["fault"] = "timeout";
        rules.push_back(std::move(jr));
    }
    return json{{"rules", rules}};
}

const MockRule* MockScript::match(std::string_view last_user_message) const {
    const std::string msg(last_user_message);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        const bool hit = compiled_[i] ? std::regex_search(msg, *compiled_[i])
                                      : msg.find(rules_[i].pattern) != std::string::npos;
        if (hit) return &rules_[i];
    }
    return nullptr;
}

std::string last_user_message(const ChatRequest& request) {
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == "user") return it->text;
    }
    return {};
}

ProviderReply MockProvider::complete(const ChatRequest& request) {
    const std::string last = last_user_message(request);
    const MockRule* rule = script_.match(last);
    if (rule == nullptr) return ProviderReply{"ECHO: " + last, std::nullopt, std::nullopt};
    switch (rule->fault) {
        case Fault::error: throw Error(ErrorCode::provider_error, "mock provider fault: " + rule->pattern);
        case Fault::timeout: throw Error(ErrorCode::provider_timeout, "mock provider timeout: " + rule->pattern);
        case Fault::none: break;
    }
    return ProviderReply{rule->response, std::nullopt, std::nullopt};
}

// ---------------------------------------------------------------------------
// Configuration

ProviderConfig ProviderConfig::from_json(const json& j) {
    ProviderConfig c;
    c.provider_id = j.at("provider_id").get<std::string>();
    const std::string kind = j.value("kind", "mock");
    if (kind == "mock") c.kind = ProviderKind::mock;
    else if (kind == "http_chat") c.kind = ProviderKind::http_chat;
    else throw Error(ErrorCode::config_invalid, "provider kind must be 'mock' or 'http_chat'");
    c.endpoint = j.value("endpoint", "");
    c.model_ids = j.at("model_ids").get<std::vector<std::string>>();
    if (j.contains("price")) {
        const auto& p = j.at("price");
        auto money = [](const json& v) {
            return v.is_string() ? Money::parse(v.get<std::string>()) : Money::parse(v.dump());
        };
        c.price.prompt_per_1k = money(p.at("prompt_per_1k"));
        c.price.completion_per_1k = money(p.at("completion_per_1k"));
    }
    c.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
    if (j.contains("script")) c.script = MockScript::from_json(j.at("script"));
    else if (c.kind == ProviderKind::mock) c.script = MockScript{};
    return c;
}

json ProviderConfig::to_json() const {
    json j{{"provider_id", provider_id},
           {"kind", kind == ProviderKind::mock ? "mock" : "http_chat"},
           {"model_ids", model_ids},
           {"price", {{"prompt_per_1k", price.prompt_per_1k.to_string()},
                      {"completion_per_1k", price.completion_per_1k.to_string()}}},
           {"timeout_ms", timeout.count()}};
    if (!endpoint.empty()) j["endpoint"] = endpoint;
    if (script) j["script"] = script->to_json();
    return j;
}

void ProviderConfig::validate() const {
    if (provider_id.empty()) throw Error(ErrorCode::config_invalid, "provider_id must be non-empty");
    if (model_ids.empty()) throw Error(ErrorCode::config_invalid, "provider '" + provider_id + "' lists no model_ids");
    if (price.prompt_per_1k.micros < 0 || price.completion_per_1k.micros < 0) {
        throw Error(ErrorCode::config_invalid, "provider '" + provider_id + "' has a negative price");
    }
    if (kind == ProviderKind::mock && !script) {
        throw Error(ErrorCode::config_invalid, "mock provider '" + provider_id + "' requires a script");
    }
    if (kind == ProviderKind::http_chat && endpoint.empty()) {
        throw Error(ErrorCode::config_invalid, "http_chat provider '" + provider_id + "' requires an endpoint");
    }
    if (timeout.count() <= 0) throw Error(ErrorCode::config_invalid, "provider timeout must be > 0");
}

// ---------------------------------------------------------------------------
// Audit records

std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::ok: return "ok";
        case Outcome::rejected: return "rejected";
        case Outcome::error: return "error";
    }
    return "error";
}

Outcome parse_outcome(std::string_view s) {
    if (s == "ok") return Outcome::ok;
    if (s == "rejected") return Outcome::rejected;
    if (s == "error") return Outcome::error;
    throw Error(ErrorCode::validation, "unknown audit outcome '" + std::string(s) + "'");
}

json AuditRecord::to_json() const {
    return json{{"audit_id", audit_id},
                {"timestamp", format_iso8601(timestamp)},
                {"subscription_id", subscription_id},
                {"model_id", model_id},
                {"request_digest", request_digest},
                {"request", request},
                {"response", response},
                {"prompt_tokens", prompt_tokens},
                {"completion_tokens", completion_tokens},
                {"cost", cost.to_string()},
                {"outcome", to_string(outcome)}};
}

AuditRecord AuditRecord::from_json(const json& j) {
    AuditRecord r;
    r.audit_id = j.at("audit_id").get<std::uint64_t>();
    r.timestamp = parse_iso8601(j.at("timestamp").get<std::string>());
    r.subscription_id = j.at("subscription_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.request_digest = j.at("request_digest").get<std::string>();
    r.request = j.at("request");
    r.response = j.at("response");
    r.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
    r.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
    r.cost = Money::parse(j.at("cost").get<std::string>());
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    return r;
}

json canonical_request(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.text}});
    return json{{"subscription_id", request.subscription_id},
                {"model_id", request.model_id},
                {"messages", messages},
                {"max_tokens", request.max_tokens}};
}

std::string request_digest(const json& canonical) { return sha256_hex(canonical.dump()); }

std::int64_t count_prompt_tokens(const ChatRequest& request) {
    std::string joined;
    for (std::size_t i = 0; i < request.messages.size(); ++i) {
        if (i) joined.push_back('\n');
        joined += request.messages[i].text;
    }
    return static_cast<std::int64_t>(ingest::tokenize(joined).size());
}

json UsageReport::to_json() const {
    json models = json::object();
    for (const auto& [id, u] : per_model) {
        models[id] = {{"cost", u.cost.to_string()}, {"requests", u.requests}};
    }
    return json{{"subscription_id", subscription_id},
                {"total_cost", total_cost.to_string()},
                {"total_requests", total_requests},
                {"accepted", accepted},
                {"rejected", rejected},
                {"errored", errored},
                {"per_model", models}};
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)) {
    if (options_.audit_log_path) {
        audit_out_.open(*options_.audit_log_path, std::ios::app);
        if (!audit_out_) {
            throw Error(ErrorCode::validation, "cannot open audit log '" + *options_.audit_log_path + "'");
        }
    }
}

TimePoint Gateway::now() const { return options_.clock ? options_.clock() : Clock::now(); }

void Gateway::register_provider(const ProviderConfig& cfg) {
    cfg.validate();
    std::shared_ptr<Provider> impl;
    if (cfg.kind == ProviderKind::mock) impl = std::make_shared<MockProvider>(*cfg.script);
    else impl = std::make_shared<HttpChatProvider>(cfg.endpoint, cfg.timeout);
    register_provider(cfg, std::move(impl));
}

void Gateway::register_provider(const ProviderConfig& cfg, std::shared_ptr<Provider> impl) {
    if (!impl) throw Error(ErrorCode::config_invalid, "provider implementation is null");
    if (cfg.provider_id.empty() || cfg.model_ids.empty()) {
        throw Error(ErrorCode::config_invalid, "provider needs an id and at least one model");
    }
    if (cfg.price.prompt_per_1k.micros < 0 || cfg.price.completion_per_1k.micros < 0) {
        throw Error(ErrorCode::config_invalid, "provider '" + cfg.provider_id + "' has a negative price");
    }
    std::lock_guard lock(mutex_);
    for (const auto& model : cfg.model_ids) routes_[model] = Route{impl, cfg.price, cfg.provider_id};
}

void Gateway::ensure_subscription(const std::string& subscription_id) {
    if (subscription_id.empty()) throw Error(ErrorCode::validation, "subscription_id must be non-empty");
    std::lock_guard lock(mutex_);
    subscriptions_.try_emplace(subscription_id);
}

void Gateway::set_quota(const std::string& subscription_id, std::optional<Money> units) {
    if (units && units->micros < 0) throw Error(ErrorCode::validation, "quota must be >= 0");
    std::lock_guard lock(mutex_);
    subscriptions_[subscription_id].remaining = units;
}

void Gateway::set_rate_limit(const std::string& subscription_id, std::optional<int> rpm) {
    if (rpm && *rpm < 0) throw Error(ErrorCode::validation, "rate limit must be >= 0");
    std::lock_guard lock(mutex_);
    auto& sub = subscriptions_[subscription_id];
    sub.rate_limit = (rpm && *rpm > 0) ? rpm : std::nullopt;
}

AuditRecord& Gateway::append_locked(AuditRecord record) {
    record.audit_id = next_audit_id_++;
    if (audit_out_.is_open()) {
        audit_out_ << record.to_json().dump() << '\n';
        audit_out_.flush();
    }
    audit_.push_back(std::move(record));
    return audit_.back();
}

ChatResponse Gateway::chat(const ChatRequest& request) {
    const json canonical = canonical_request(request);
    const std::string digest = request_digest(canonical);
    const std::int64_t prompt_tokens = count_prompt_tokens(request);

    auto reject = [&](ErrorCode code, const std::string& message) -> ChatResponse {
        {
            std::lock_guard lock(mutex_);
            AuditRecord r;
            r.timestamp = now();
            r.subscription_id = request.subscription_id;
            r.model_id = request.model_id;
            r.request_digest = digest;
            r.request = canonical;
            r.response = json{{"error", {{"code", to_string(code)}, {"message", message}}}};
            r.prompt_tokens = prompt_tokens;
            r.outcome = Outcome::rejected;
            append_locked(std::move(r));
        }
        throw Error(code, message);
    };

    for (const auto& m : request.messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant") {
            return reject(ErrorCode::bad_request, "invalid message role '" + m.role + "'");
        }
    }

    Route route;
    {
        std::unique_lock lock(mutex_);
        auto r = routes_.find(request.model_id);
        if (r == routes_.end()) {
            lock.unlock();
            return reject(ErrorCode::unknown_model, "model '" + request.model_id + "' is not registered");
        }
        auto s = subscriptions_.find(request.subscription_id);
        if (s == subscriptions_.end()) {
            lock.unlock();
            return reject(ErrorCode::unknown_subscription,
                          "subscription '" + request.subscription_id + "' does not exist");
        }
        auto& sub = s->second;
        if (sub.remaining && sub.remaining->micros <= 0) {
            lock.unlock();
            return reject(ErrorCode::quota_exceeded,
                          "subscription '" + request.subscription_id + "' has exhausted its quota");
        }
        const TimePoint t = now();
        if (sub.rate_limit) {
            while (!sub.recent.empty() && sub.recent.front() <= t - std::chrono::minutes(1)) sub.recent.pop_front();
            if (static_cast<int>(sub.recent.size()) >= *sub.rate_limit) {
                lock.unlock();
                return reject(ErrorCode::rate_limited, "subscription '" + request.subscription_id +
                                                           "' exceeded " + std::to_string(*sub.rate_limit) +
                                                           " requests per minute");
            }
            sub.recent.push_back(t);
        }
        route = r->second;
    }

    const auto started = std::chrono::steady_clock::now();
    std::optional<ProviderReply> reply;
    std::optional<Error> failure;
    try {
        reply = route.provider->complete(request);
    } catch (const Error& e) {
        failure = e;
    } catch (const std::exception& e) {
        failure = Error(ErrorCode::provider_error, e.what());
    }
    const auto latency = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - started);

    AuditRecord r;
    r.subscription_id = request.subscription_id;
    r.model_id = request.model_id;
    r.request_digest = digest;
    r.request = canonical;
    r.prompt_tokens = prompt_tokens;

    if (failure) {
        r.outcome = Outcome::error;
        r.response = json{{"error", {{"code", to_string(failure->code())}, {"message", failure->what()}}},
                          {"provider_id", route.provider_id},
                          {"provider_latency_us", latency.count()}};
        std::lock_guard lock(mutex_);
        r.timestamp = now();
        append_locked(std::move(r));
        throw *failure;
    }

    ChatResponse resp;
    resp.text = reply->text;
    resp.prompt_tokens = prompt_tokens;
    resp.completion_tokens = static_cast<std::int64_t>(ingest::tokenize(reply->text).size());
    resp.provider_latency = latency;
    resp.cost = request_cost(resp.prompt_tokens, route.price.prompt_per_1k, resp.completion_tokens,
                             route.price.completion_per_1k);

    r.outcome = Outcome::ok;
    r.completion_tokens = resp.completion_tokens;
    r.cost = resp.cost;
    r.response = json{{"text", reply->text},
                      {"provider_id", route.provider_id},
                      {"provider_latency_us", latency.count()}};
    if (reply->reported_prompt_tokens) r.response["provider_prompt_tokens"] = *reply->reported_prompt_tokens;
    if (reply->reported_completion_tokens) {
        r.response["provider_completion_tokens"] = *reply->reported_completion_tokens;
    }

    std::lock_guard lock(mutex_);
    r.timestamp = now();
    auto& sub = subscriptions_[request.subscription_id];
    sub.spent += resp.cost;
    if (sub.remaining) *sub.remaining -= resp.cost;
    resp.audit_id = append_locked(std::move(r)).audit_id;
    return resp;
}

UsageReport Gateway::usage_report(const std::string& subscription_id, const TimeWindow& window) const {
    std::lock_guard lock(mutex_);
    if (subscriptions_.count(subscription_id) == 0) {
        throw Error(ErrorCode::unknown_subscription, "subscription '" + subscription_id + "' does not exist");
    }
    UsageReport rep;
    rep.subscription_id = subscription_id;
    for (const auto& r : audit_) {
        if (r.subscription_id != subscription_id || !window.contains(r.timestamp)) continue;
        ++rep.total_requests;
        rep.total_cost += r.cost;
        auto& m = rep.per_model[r.model_id];
        m.cost += r.cost;
        ++m.requests;
        switch (r.outcome) {
            case Outcome::ok: ++rep.accepted; break;
            case Outcome::rejected: ++rep.rejected; break;
            case Outcome::error: ++rep.errored; break;
        }
    }
    return rep;
}

std::vector<AuditRecord> Gateway::audit_query(const Caller& caller, const AuditFilter& filter) const {
    if (!caller.is_auditor()) {
        throw Error(ErrorCode::unauthorized, "caller '" + caller.id + "' lacks the auditor role");
    }
    std::lock_guard lock(mutex_);
    std::vector<AuditRecord> out;
    for (const auto& r : audit_) {
        if (filter.subscription_id && r.subscription_id != *filter.subscription_id) continue;
        if (filter.model_id && r.model_id != *filter.model_id) continue;
        if (!filter.window.contains(r.timestamp)) continue;
        out.push_back(r);
    }
    return out;
}

Money Gateway::ledger_balance(const std::string& subscription_id) const {
    std::lock_guard lock(mutex_);
    auto it = subscriptions_.find(subscription_id);
    if (it == subscriptions_.end()) {
        throw Error(ErrorCode::unknown_subscription, "subscription '" + subscription_id + "' does not exist");
    }
    return it->second.spent;
}

std::optional<Money> Gateway::remaining_quota(const std::string& subscription_id) const {
    std::lock_guard lock(mutex_);
    auto it = subscriptions_.find(subscription_id);
    if (it == subscriptions_.end()) {
        throw Error(ErrorCode::unknown_subscription, "subscription '" + subscription_id + "' does not exist");
    }
    return it->second.remaining;
}

std::size_t Gateway::audit_count() const {
    std::lock_guard lock(mutex_);
    return audit_.size();
}

bool Gateway::has_model(const std::string& model_id) const {
    std::lock_guard lock(mutex_);
    return routes_.count(model_id) != 0;
}

bool Gateway::has_subscription(const std::string& subscription_id) const {
    std::lock_guard lock(mutex_);
    return subscriptions_.count(subscription_id) != 0;
}

void Gateway::replay_audit_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;
    std::vector<AuditRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            records.push_back(AuditRecord::from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(ErrorCode::validation, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    std::lock_guard lock(mutex_);
    for (auto& r : records) {
        auto& sub = subscriptions_[r.subscription_id];
        if (r.outcome == Outcome::ok) {
            sub.spent += r.cost;
            if (sub.remaining) *sub.remaining -= r.cost;
        }
        next_audit_id_ = std::max(next_audit_id_, r.audit_id + 1);
        audit_.push_back(std::move(r));
    }
}

}  // namespace ragdesk::gateway
