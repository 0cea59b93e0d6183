#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdesk/common.hpp"

namespace ragdesk::gateway {

struct Message {
    std::string role;  // system | user | assistant
    std::string text;

    friend bool operator==(const Message&, const Message&) = default;
};

struct ChatRequest {
    std::string subscription_id;
    std::string model_id;
    std::vector<Message> messages;
    int max_tokens = 0;  // 0 = provider default
};

struct ChatResponse {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::chrono::microseconds provider_latency{0};
    Money cost;
    std::uint64_t audit_id = 0;
};

/// Raw provider output before gateway accounting.
struct ProviderReply {
    std::string text;
    std::optional<std::int64_t> reported_prompt_tokens;
    std::optional<std::int64_t> reported_completion_tokens;
};

/// A model backend. Implementations throw Error(provider_error) or
/// Error(provider_timeout) on failure and must be safe to call concurrently.
class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderReply complete(const ChatRequest& request) = 0;
};

enum class MatchKind { substring, regex };
enum class Fault { none, error, timeout };

struct MockRule {
    MatchKind match = MatchKind::substring;
    std::string pattern;
    std::string response;
    Fault fault = Fault::none;
};

/// Ordered response rules over the last user message; first match wins and
/// the default is "ECHO: " + last user message.
class MockScript {
public:
    MockScript() = default;
    explicit MockScript(std::vector<MockRule> rules);

    static MockScript from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;

    /// Returns the matching rule, or nullptr for the echo default.
    [[nodiscard]] const MockRule* match(std::string_view last_user_message) const;
    [[nodiscard]] const std::vector<MockRule>& rules() const { return rules_; }

private:
    std::vector<MockRule> rules_;
    std::vector<std::optional<std::regex>> compiled_;
};

std::string last_user_message(const ChatRequest& request);

class MockProvider final : public Provider {
public:
    explicit MockProvider(MockScript script) : script_(std::move(script)) {}
    ProviderReply complete(const ChatRequest& request) override;

private:
    MockScript script_;
};

/// POSTs {model, messages:[{role,content}], max_tokens} to the endpoint and
/// expects {"text": ...} back.
class HttpChatProvider final : public Provider {
public:
    HttpChatProvider(std::string endpoint, std::chrono::milliseconds timeout);
    ProviderReply complete(const ChatRequest& request) override;

private:
    std::string scheme_host_port_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

enum class ProviderKind { mock, http_chat };

struct Price {
    Money prompt_per_1k;
    Money completion_per_1k;
};

struct ProviderConfig {
    std::string provider_id;
    ProviderKind kind = ProviderKind::mock;
    std::string endpoint;
    std::vector<std::string> model_ids;
    Price price;
    std::chrono::milliseconds timeout{30000};
    std::optional<MockScript> script;

    static ProviderConfig from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;
    /// Throws Error(config_invalid).
    void validate() const;
};

enum class Outcome { ok, rejected, error };

std::string_view to_string(Outcome o);
Outcome parse_outcome(std::string_view s);

struct AuditRecord {
    std::uint64_t audit_id = 0;
    TimePoint timestamp;
    std::string subscription_id;
    std::string model_id;
    std::string request_digest;
    nlohmann::json request;
    nlohmann::json response;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    Money cost;
    Outcome outcome = Outcome::ok;

    [[nodiscard]] nlohmann::json to_json() const;
    static AuditRecord from_json(const nlohmann::json& j);
};

/// Canonical request payload: sorted keys, messages as {role, content}.
nlohmann::json canonical_request(const ChatRequest& request);
std::string request_digest(const nlohmann::json& canonical);

/// Token count of the newline-joined message texts.
std::int64_t count_prompt_tokens(const ChatRequest& request);

struct TimeWindow {
    std::optional<TimePoint> from;  // inclusive
    std::optional<TimePoint> to;    // exclusive

    [[nodiscard]] bool contains(TimePoint t) const {
        return (!from || t >= *from) && (!to || t < *to);
    }
};

struct ModelUsage {
    Money cost;
    std::int64_t requests = 0;
};

struct UsageReport {
    std::string subscription_id;
    Money total_cost;
    std::int64_t total_requests = 0;
    std::int64_t accepted = 0;
    std::int64_t rejected = 0;
    std::int64_t errored = 0;
    std::map<std::string, ModelUsage> per_model;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct AuditFilter {
    std::optional<std::string> subscription_id;
    std::optional<std::string> model_id;
    TimeWindow window;
};

struct Caller {
    std::string id;
    std::set<std::string> roles;

    [[nodiscard]] bool is_auditor() const { return roles.count("auditor") != 0; }
};

struct GatewayOptions {
    std::optional<std::string> audit_log_path;  // append-only JSONL
    std::function<TimePoint()> clock;           // defaults to system_clock::now
};

/// Single egress for model calls. Every `chat` attempt appends exactly one
/// audit record; the ledger is debited only for `ok` outcomes. Quotas are
/// post-paid: a request is admitted while the remaining allowance is positive
/// and may drive it negative, which rejects the next request.
class Gateway {
public:
    explicit Gateway(GatewayOptions options = {});

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    void register_provider(const ProviderConfig& cfg);
    void register_provider(const ProviderConfig& cfg, std::shared_ptr<Provider> impl);

    void ensure_subscription(const std::string& subscription_id);
    /// Sets the remaining allowance; nullopt means unlimited.
    void set_quota(const std::string& subscription_id, std::optional<Money> units);
    /// nullopt or 0 disables rate limiting.
    void set_rate_limit(const std::string& subscription_id, std::optional<int> requests_per_minute);

    ChatResponse chat(const ChatRequest& request);

    [[nodiscard]] UsageReport usage_report(const std::string& subscription_id,
                                           const TimeWindow& window = {}) const;
    [[nodiscard]] std::vector<AuditRecord> audit_query(const Caller& caller,
                                                       const AuditFilter& filter = {}) const;

    [[nodiscard]] Money ledger_balance(const std::string& subscription_id) const;
    [[nodiscard]] std::optional<Money> remaining_quota(const std::string& subscription_id) const;
    [[nodiscard]] std::size_t audit_count() const;
    [[nodiscard]] bool has_model(const std::string& model_id) const;
    [[nodiscard]] bool has_subscription(const std::string& subscription_id) const;

    /// Rebuilds audit history and ledgers from a JSONL audit log.
    void replay_audit_log(const std::string& path);

private:
    struct Route {
        std::shared_ptr<Provider> provider;
        Price price;
        std::string provider_id;
    };
    struct Subscription {
        Money spent;
        std::optional<Money> remaining;
        std::optional<int> rate_limit;
        std::deque<TimePoint> recent;
    };

    AuditRecord& append_locked(AuditRecord record);
    TimePoint now() const;

    GatewayOptions options_;
    mutable std::mutex mutex_;
    std::map<std::string, Route> routes_;  // model_id -> route
    std::map<std::string, Subscription> subscriptions_;
    std::vector<AuditRecord> audit_;
    std::uint64_t next_audit_id_ = 1;
    std::ofstream audit_out_;
};

}  // namespace ragdesk::gateway
