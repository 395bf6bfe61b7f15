#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fanout/clock.hpp"
#include "fanout/model.hpp"
#include "fanout/net.hpp"
#include "fanout/tool_call.hpp"

namespace fanout::tools {

struct ToolInput {
    std::string name;
    std::string type = "string";
    std::string description;
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::vector<ToolInput> inputs;
    std::string output_type = "string";
};

/// A failure the model should see; what() becomes the observation text.
class ToolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PreconditionError : public ToolError {
public:
    using ToolError::ToolError;
};

class FetchError : public ToolError {
public:
    using ToolError::ToolError;
};

class SummarizerUnavailable : public ToolError {
public:
    using ToolError::ToolError;
};

using Executor = std::function<std::string(const Arguments&)>;

/// Name -> (schema, executor). final_answer is always present and listed last.
/// Invocation never throws: unknown tools, schema mismatches and executor
/// failures come back as error observations.
class ToolRegistry {
public:
    ToolRegistry();

    /// max_concurrency 0 means unlimited. Replaces an existing tool of the same name.
    void add(ToolSpec spec, Executor executor, int max_concurrency = 0);

    bool contains(std::string_view name) const;
    const ToolSpec& spec(std::string_view name) const;
    std::vector<ToolSpec> specs() const;

    Observation invoke(const ToolCall& call, std::size_t call_index, const Clock& clock) const;

    /// "- name: description" blocks with Python-style input dicts.
    std::string render_tool_list() const;
    /// Function-calling schema array, one entry per tool.
    nlohmann::ordered_json function_schemas() const;

private:
    struct Entry {
        ToolSpec spec;
        Executor executor;
        std::shared_ptr<std::counting_semaphore<>> limit;
    };
    const Entry* find(std::string_view name) const;

    std::vector<Entry> entries_;  // final_answer kept at the back
};

ToolSpec web_search_spec();
ToolSpec crawl_page_spec();
ToolSpec final_answer_spec();

// ---- search -----------------------------------------------------------------

inline constexpr std::size_t kMaxSearchResults = 5;

struct SearchResult {
    std::string title;
    std::string url;
    std::string snippet;
    std::optional<std::string> date;
    std::optional<std::string> source;

    friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

nlohmann::ordered_json to_json(const SearchResult& r);
SearchResult search_result_from_json(const nlohmann::ordered_json& j);

/// Numbered "[title](url)" blocks, at most `limit` of them.
std::string render_search_results(const std::vector<SearchResult>& results, std::size_t limit = kMaxSearchResults);

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    /// Throws ToolError on failure.
    virtual std::vector<SearchResult> search(const std::string& query) = 0;
};

struct HttpOptions {
    net::RetryPolicy retry;
    net::Sleeper sleeper = net::real_sleeper();
    std::chrono::milliseconds timeout{30000};
};

/// POST {"q": query, "num": 5} with an X-API-KEY header.
class SerperSearch final : public SearchProvider {
public:
    SerperSearch(std::shared_ptr<net::HttpTransport> transport, std::string api_key,
                 std::string endpoint = "https://google.serper.dev/search", HttpOptions http = {});
    std::vector<SearchResult> search(const std::string& query) override;

private:
    std::shared_ptr<net::HttpTransport> transport_;
    std::string api_key_;
    std::string endpoint_;
    HttpOptions http_;
};

class InMemorySearch final : public SearchProvider {
public:
    void put(const std::string& query, std::vector<SearchResult> results);
    std::vector<SearchResult> search(const std::string& query) override;

private:
    std::map<std::string, std::vector<SearchResult>> results_;  // keyed by normalized query
};

/// Reads <dir>/search/<search_fixture_key(query)>.json.
class FixtureSearch final : public SearchProvider {
public:
    explicit FixtureSearch(std::filesystem::path dir);
    std::vector<SearchResult> search(const std::string& query) override;

private:
    std::filesystem::path dir_;
};

// ---- crawl ------------------------------------------------------------------

inline constexpr std::size_t kPageCharLimit = 60000;
inline constexpr std::string_view kDefaultReaderBase = "https://r.jina.ai";

/// The first `limit` code points of the page. Idempotent.
std::string truncate_page(std::string_view page, std::size_t limit = kPageCharLimit);

class PageFetcher {
public:
    virtual ~PageFetcher() = default;
    /// Throws FetchError.
    virtual std::string fetch(const std::string& url) = 0;
};

/// GET <reader_base>/<url>, optionally with a bearer token.
class ReaderFetcher final : public PageFetcher {
public:
    ReaderFetcher(std::shared_ptr<net::HttpTransport> transport, std::string reader_base = std::string(kDefaultReaderBase),
                  std::string api_key = {}, HttpOptions http = {});
    std::string fetch(const std::string& url) override;

private:
    std::shared_ptr<net::HttpTransport> transport_;
    std::string reader_base_;
    std::string api_key_;
    HttpOptions http_;
};

class InMemoryFetcher final : public PageFetcher {
public:
    explicit InMemoryFetcher(std::string reader_base = std::string(kDefaultReaderBase));
    void put(const std::string& url, std::string page);
    std::string fetch(const std::string& url) override;

private:
    std::string reader_base_;
    std::map<std::string, std::string> pages_;
};

/// Reads <dir>/pages/<page_fixture_key(url)>.txt; a missing file is a 404.
class FixtureFetcher final : public PageFetcher {
public:
    explicit FixtureFetcher(std::filesystem::path dir, std::string reader_base = std::string(kDefaultReaderBase));
    std::string fetch(const std::string& url) override;

private:
    std::filesystem::path dir_;
    std::string reader_base_;
};

class Summarizer {
public:
    virtual ~Summarizer() = default;
    /// Throws SummarizerUnavailable.
    virtual std::string summarize(const std::string& url, const std::string& query, const std::string& page) = 0;
};

/// Renders the crawl_summary template and asks the backend (purpose summarize_page).
class BackendSummarizer final : public Summarizer {
public:
    explicit BackendSummarizer(std::shared_ptr<backend::ModelBackend> backend);
    std::string summarize(const std::string& url, const std::string& query, const std::string& page) override;

private:
    std::shared_ptr<backend::ModelBackend> backend_;
};

struct CrawlOptions {
    std::string reader_base = std::string(kDefaultReaderBase);
    std::size_t char_limit = kPageCharLimit;
};

Executor make_web_search(std::shared_ptr<SearchProvider> provider);
Executor make_crawl_page(std::shared_ptr<PageFetcher> fetcher, std::shared_ptr<Summarizer> summarizer,
                         CrawlOptions options = {});

struct ToolLimits {
    int web_search = 0;
    int crawl_page = 0;
};

/// web_search, crawl_page and final_answer.
std::shared_ptr<ToolRegistry> make_registry(std::shared_ptr<SearchProvider> provider,
                                            std::shared_ptr<PageFetcher> fetcher,
                                            std::shared_ptr<Summarizer> summarizer, CrawlOptions crawl = {},
                                            ToolLimits limits = {});

// ---- fixtures -----------------------------------------------------------------

/// Trimmed, whitespace-collapsed, lower-cased query.
std::string normalize_query(std::string_view query);
std::string search_fixture_key(std::string_view query);
std::string page_fixture_key(std::string_view url);

void write_search_fixture(const std::filesystem::path& dir, const std::string& query,
                          const std::vector<SearchResult>& results);
void write_page_fixture(const std::filesystem::path& dir, const std::string& url, const std::string& page);

}  // namespace fanout::tools
