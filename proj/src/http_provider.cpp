#include <httplib.h>

#include "ragdesk/gateway.hpp"

namespace ragdesk::gateway {

using nlohmann::json;

HttpChatProvider::HttpChatProvider(std::string endpoint, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) {
        throw Error(ErrorCode::config_invalid, "endpoint '" + endpoint + "' must be an absolute URL");
    }
    const auto path = endpoint.find('/', scheme + 3);
    scheme_host_port_ = endpoint.substr(0, path);
    path_ = path == std::string::npos ? "/" : endpoint.substr(path);
}

ProviderReply HttpChatProvider::complete(const ChatRequest& request) {
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.text}});
    json body{{"model", request.model_id}, {"messages", messages}, {"max_tokens", request.max_tokens}};

    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::Write ||
            err == httplib::Error::ConnectionTimeout) {
            throw Error(ErrorCode::provider_timeout, "provider request to " + scheme_host_port_ +
                                                         " timed out or was interrupted: " + httplib::to_string(err));
        }
        throw Error(ErrorCode::provider_error, "provider request to " + scheme_host_port_ +
                                                   " failed: " + httplib::to_string(err));
    }
    if (res->status != 200) {
        throw Error(ErrorCode::provider_error, "provider returned HTTP " + std::to_string(res->status));
    }
    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::provider_error, std::string("provider returned invalid JSON: ") + e.what());
    }
    if (!reply.is_object() || !reply.contains("text") || !reply.at("text").is_string()) {
        throw Error(ErrorCode::provider_error, "provider response lacks a string 'text' field");
    }
    ProviderReply out;
    out.text = reply.at("text").get<std::string>();
    if (reply.contains("prompt_tokens") && reply.at("prompt_tokens").is_number_integer()) {
        out.reported_prompt_tokens = reply.at("prompt_tokens").get<std::int64_t>();
    }
    if (reply.contains("completion_tokens") && reply.at("completion_tokens").is_number_integer()) {
        out.reported_completion_tokens = reply.at("completion_tokens").get<std::int64_t>();
    }
    return out;
}

}  // namespace ragdesk::gateway
