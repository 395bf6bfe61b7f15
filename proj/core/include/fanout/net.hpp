#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

namespace fanout::net {

struct HttpRequest {
    std::string method = "GET";
    std::string url;
    std::map<std::string, std::string> headers;
    std::string body;
    std::chrono::milliseconds timeout{30000};
};

struct HttpResponse {
    long status = 0;
    std::string body;
    std::map<std::string, std::string> headers;  // lower-case names
};

/// Connection-level failure: DNS, refused connection, timeout.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-2xx reply, rendered like "404 Client Error: Not Found for url: ...".
class HttpError : public std::runtime_error {
public:
    HttpError(long status, std::string url, std::string body_excerpt);
    long status() const { return status_; }
    const std::string& url() const { return url_; }
    const std::string& body_excerpt() const { return body_excerpt_; }

private:
    long status_;
    std::string url_;
    std::string body_excerpt_;
};

/// 429 after the retry budget is spent.
class RateLimited : public HttpError {
public:
    using HttpError::HttpError;
};

std::string reason_phrase(long status);

/// "N Client Error: Reason for url: U" (or Server Error for 5xx).
std::string describe_status(long status, const std::string& url);

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    /// Returns any HTTP status; throws TransportError when no response arrives.
    virtual HttpResponse perform(const HttpRequest& request) = 0;
};

/// libcurl-backed transport. Every request carries a timeout.
class CurlTransport final : public HttpTransport {
public:
    CurlTransport();
    HttpResponse perform(const HttpRequest& request) override;

    /// Requests attempted by all CurlTransport instances in this process.
    static std::size_t requests_attempted();

private:
    static std::atomic<std::size_t> attempted_;
};

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds base_delay{500};
    std::chrono::milliseconds max_delay{8000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

Sleeper real_sleeper();

/// Sends the request, retrying 429 and 5xx replies with exponential backoff.
/// A Retry-After header (seconds) replaces the computed delay, capped at
/// policy.max_delay. Returns the first 2xx reply; otherwise throws
/// RateLimited or HttpError. TransportError propagates without retry.
HttpResponse send_with_retry(HttpTransport& transport, const HttpRequest& request, const RetryPolicy& policy,
                             const Sleeper& sleep);

/// Percent-encodes spaces the way a URL-joining client would.
std::string encode_spaces(const std::string& url);

}  // namespace fanout::net
