#pragma once

#include <memory>
#include <string>

#include "ragdesk/api.hpp"

namespace ragdesk::server {

/// HTTP transport for the JSON API. Adds permissive CORS headers so a
/// browser client on another origin can call it.
class Server {
public:
    explicit Server(api::Api& api);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and serves until stop(); returns false if binding failed.
    bool listen(const std::string& host, int port);
    /// Binds to an ephemeral port and returns it (or -1), without serving.
    int bind_ephemeral(const std::string& host);
    /// Serves on a socket bound by bind_ephemeral.
    bool serve_bound();
    void stop();
    [[nodiscard]] bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ragdesk::server
