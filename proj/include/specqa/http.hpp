#pragma once

// Minimal JSON-over-HTTP transport shared by the embedding, rerank and chat
// clients. Tests substitute an in-process Transport; production uses
// cpp-httplib.

#include <chrono>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "specqa/error.hpp"

namespace specqa::http {

struct Request {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
    std::chrono::milliseconds timeout{30000};
};

struct Response {
    int status = 0;
    std::string body;
};

/// Thrown by a Transport when no HTTP response could be obtained at all.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// POSTs a JSON body and returns the response. Throws TransportError when
/// the peer cannot be reached.
using Transport = std::function<Response(const Request&)>;

struct Url {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path;

    std::string origin() const { return scheme + "://" + host + ":" + std::to_string(port); }
};

inline std::optional<Url> parse_url(std::string_view s) {
    Url u;
    auto sep = s.find("://");
    if (sep == std::string_view::npos) return std::nullopt;
    u.scheme = std::string(s.substr(0, sep));
    if (u.scheme != "http" && u.scheme != "https") return std::nullopt;
    auto rest = s.substr(sep + 3);
    auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    u.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    auto colon = authority.rfind(':');
    if (colon != std::string_view::npos) {
        u.host = std::string(authority.substr(0, colon));
        auto port = authority.substr(colon + 1);
        if (port.empty()) return std::nullopt;
        int p = 0;
        for (char c : port) {
            if (c < '0' || c > '9') return std::nullopt;
            p = p * 10 + (c - '0');
            if (p > 65535) return std::nullopt;
        }
        u.port = p;
    } else {
        u.host = std::string(authority);
        u.port = u.scheme == "https" ? 443 : 80;
    }
    if (u.host.empty()) return std::nullopt;
    return u;
}

inline bool is_valid_url(std::string_view s) { return parse_url(s).has_value(); }

/// Blocking cpp-httplib POST. One client per call keeps it connection-safe
/// across threads.
inline Response httplib_post(const Request& req) {
    auto url = parse_url(req.url);
    if (!url) throw TransportError("malformed url: " + req.url);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url->scheme == "https") throw TransportError("https endpoints need a build with OpenSSL support");
#endif
    httplib::Client client(url->origin());
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(req.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(req.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    for (const auto& [k, v] : req.headers) headers.emplace(k, v);
    auto res = client.Post(url->path, headers, req.body, "application/json");
    if (!res) throw TransportError("request to " + req.url + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

inline Transport default_transport() { return httplib_post; }

/// Adds "Authorization: Bearer" when a key is configured.
inline void add_bearer(Request& req, const std::string& api_key) {
    if (!api_key.empty()) req.headers.emplace_back("Authorization", "Bearer " + api_key);
}

}  // namespace specqa::http
