#include "fanout/net.hpp"

#include <curl/curl.h>

#include <algorithm>
#include <cctype>
#include <memory>
#include <mutex>
#include <thread>

#include "fanout/text.hpp"

namespace fanout::net {

std::atomic<std::size_t> CurlTransport::attempted_{0};

std::string reason_phrase(long status) {
    switch (status) {
        case 400: return "Bad Request";
        case 401: return "Unauthorized";
        case 402: return "Payment Required";
        case 403: return "Forbidden";
        case 404: return "Not Found";
        case 405: return "Method Not Allowed";
        case 408: return "Request Timeout";
        case 410: return "Gone";
        case 422: return "Unprocessable Entity";
        case 429: return "Too Many Requests";
        case 500: return "Internal Server Error";
        case 502: return "Bad Gateway";
        case 503: return "Service Unavailable";
        case 504: return "Gateway Timeout";
        default: return "Unknown";
    }
}

std::string describe_status(long status, const std::string& url) {
    const char* kind = status >= 500 ? "Server Error" : "Client Error";
    return std::to_string(status) + " " + kind + ": " + reason_phrase(status) + " for url: " + url;
}

HttpError::HttpError(long status, std::string url, std::string body_excerpt)
    : std::runtime_error(describe_status(status, url)),
      status_(status),
      url_(std::move(url)),
      body_excerpt_(std::move(body_excerpt)) {}

namespace {

std::size_t write_body(char* ptr, std::size_t size, std::size_t nmemb, void* userdata) {
    static_cast<std::string*>(userdata)->append(ptr, size * nmemb);
    return size * nmemb;
}

std::size_t write_header(char* ptr, std::size_t size, std::size_t nmemb, void* userdata) {
    auto* headers = static_cast<std::map<std::string, std::string>*>(userdata);
    std::string_view line(ptr, size * nmemb);
    auto colon = line.find(':');
    if (colon != std::string_view::npos) {
        (*headers)[text::to_lower(text::trim(line.substr(0, colon)))] = text::trim(line.substr(colon + 1));
    }
    return size * nmemb;
}

bool retryable(long status) { return status == 429 || status >= 500; }

}  // namespace

CurlTransport::CurlTransport() {
    static std::once_flag once;
    std::call_once(once, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });
}

std::size_t CurlTransport::requests_attempted() { return attempted_.load(); }

HttpResponse CurlTransport::perform(const HttpRequest& request) {
    ++attempted_;
    std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
    if (!curl) throw TransportError("curl_easy_init failed");

    HttpResponse response;
    curl_slist* header_list = nullptr;
    for (const auto& [k, v] : request.headers) header_list = curl_slist_append(header_list, (k + ": " + v).c_str());
    std::unique_ptr<curl_slist, decltype(&curl_slist_free_all)> headers_guard(header_list, &curl_slist_free_all);

    CURL* h = curl.get();
    curl_easy_setopt(h, CURLOPT_URL, request.url.c_str());
    curl_easy_setopt(h, CURLOPT_NOSIGNAL, 1L);
    curl_easy_setopt(h, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(h, CURLOPT_TIMEOUT_MS, static_cast<long>(request.timeout.count()));
    curl_easy_setopt(h, CURLOPT_CONNECTTIMEOUT_MS, static_cast<long>(std::min<long long>(request.timeout.count(), 10000)));
    curl_easy_setopt(h, CURLOPT_HTTPHEADER, header_list);
    curl_easy_setopt(h, CURLOPT_WRITEFUNCTION, &write_body);
    curl_easy_setopt(h, CURLOPT_WRITEDATA, &response.body);
    curl_easy_setopt(h, CURLOPT_HEADERFUNCTION, &write_header);
    curl_easy_setopt(h, CURLOPT_HEADERDATA, &response.headers);
    if (request.method == "POST") {
        curl_easy_setopt(h, CURLOPT_POST, 1L);
        curl_easy_setopt(h, CURLOPT_POSTFIELDS, request.body.c_str());
        curl_easy_setopt(h, CURLOPT_POSTFIELDSIZE, static_cast<long>(request.body.size()));
    } else if (request.method != "GET") {
        curl_easy_setopt(h, CURLOPT_CUSTOMREQUEST, request.method.c_str());
    }

    CURLcode rc = curl_easy_perform(h);
    if (rc != CURLE_OK) {
        throw TransportError(std::string("request to ") + request.url + " failed: " + curl_easy_strerror(rc));
    }
    curl_easy_getinfo(h, CURLINFO_RESPONSE_CODE, &response.status);
    return response;
}

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

HttpResponse send_with_retry(HttpTransport& transport, const HttpRequest& request, const RetryPolicy& policy,
                             const Sleeper& sleep) {
    for (int attempt = 0;; ++attempt) {
        HttpResponse response = transport.perform(request);
        if (response.status >= 200 && response.status < 300) return response;
        if (!retryable(response.status) || attempt >= policy.max_retries) {
            std::string excerpt = response.body.substr(0, text::utf8_prefix_bytes(response.body, 300));
            if (response.status == 429) throw RateLimited(response.status, request.url, std::move(excerpt));
            throw HttpError(response.status, request.url, std::move(excerpt));
        }
        auto delay = policy.base_delay * (1LL << attempt);
        if (auto it = response.headers.find("retry-after"); it != response.headers.end()) {
            try {
                delay = std::chrono::seconds(std::stoll(it->second));
            } catch (const std::exception&) {
                // HTTP-date form: keep the computed backoff
            }
        }
        sleep(std::clamp<std::chrono::milliseconds>(std::chrono::duration_cast<std::chrono::milliseconds>(delay),
                                                    std::chrono::milliseconds{0}, policy.max_delay));
    }
}

std::string encode_spaces(const std::string& url) { return text::replace_all(url, " ", "%20"); }

}  // namespace fanout::net
