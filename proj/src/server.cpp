#include "ragdesk/server.hpp"

#include <algorithm>
#include <cctype>

#include <httplib.h>

namespace ragdesk::server {

struct Server::Impl {
    api::Api& api;
    httplib::Server http;

    explicit Impl(api::Api& a) : api(a) {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) { dispatch(req, res); };
        http.Get(R"(/v1/.*)", handler);
        http.Post(R"(/v1/.*)", handler);
        http.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
            cors(res);
            res.status = 204;
        });
        http.set_payload_max_length(64u << 20);
    }

    static void cors(httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, X-User-Id, X-Roles");
    }

    void dispatch(const httplib::Request& req, httplib::Response& res) {
        api::ApiRequest r;
        r.method = req.method;
        r.path = req.path;
        r.body = req.body;
        for (const auto& [k, v] : req.headers) {
            std::string key = k;
            std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
            r.headers[key] = v;
        }
        for (const auto& [k, v] : req.params) r.query[k] = v;
        const auto out = api.handle(r);
        cors(res);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
    }
};

Server::Server(api::Api& api) : impl_(std::make_unique<Impl>(api)) {}
Server::~Server() { stop(); }

bool Server::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }
int Server::bind_ephemeral(const std::string& host) { return impl_->http.bind_to_any_port(host); }
bool Server::serve_bound() { return impl_->http.listen_after_bind(); }
void Server::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}
bool Server::running() const { return impl_->http.is_running(); }

}  // namespace ragdesk::server
