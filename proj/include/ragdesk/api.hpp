#pragma once

#include <functional>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "ragdesk/engine.hpp"

namespace ragdesk::api {

struct ApiRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> headers;  // keys lower-case
    std::map<std::string, std::string> query;
    std::string body;

    [[nodiscard]] std::string header(const std::string& lower_name) const;
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

int http_status(ErrorCode code);
ApiResponse error_response(ErrorCode code, const std::string& message);

/// Called for every chat request with the principal asserted in the body.
/// May rewrite it or throw Error(unauthorized).
using AuthHook = std::function<void(const ApiRequest&, index::Principal&)>;

/// JSON API over an Engine, independent of the HTTP transport.
class Api {
public:
    explicit Api(engine::Engine& engine) : engine_(engine) {}

    void set_auth_hook(AuthHook hook) { auth_ = std::move(hook); }

    ApiResponse handle(const ApiRequest& req);

private:
    ApiResponse ingest(const ApiRequest& req);
    ApiResponse chat(const ApiRequest& req);
    ApiResponse trace(const ApiRequest& req, const std::string& trace_id);
    ApiResponse eval_run(const ApiRequest& req);
    ApiResponse eval_grid(const ApiRequest& req);
    ApiResponse gateway_chat(const ApiRequest& req);
    ApiResponse gateway_usage(const ApiRequest& req);
    ApiResponse gateway_audit(const ApiRequest& req);
    ApiResponse bots(const ApiRequest& req);
    ApiResponse feedback(const ApiRequest& req);

    engine::Engine& engine_;
    AuthHook auth_;
};

/// Comma-separated X-Roles header as a set.
std::set<std::string> roles_of(const ApiRequest& req);

}  // namespace ragdesk::api
