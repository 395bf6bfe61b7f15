#include "fanout/tools.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include "fanout/prompts.hpp"
#include "fanout/text.hpp"

namespace fanout::tools {

using nlohmann::ordered_json;

namespace {

constexpr std::string_view kSearchFailed = "Search failed: ";
constexpr std::string_view kReadFailed = "Error reading page: ";

std::string require(const Arguments& args, std::string_view name, std::string_view tool) {
    const std::string* v = find_argument(args, name);
    if (!v || text::trim(*v).empty()) {
        throw PreconditionError(std::string(tool) + " requires a non-empty '" + std::string(name) + "' argument");
    }
    return *v;
}

std::string reader_url(const std::string& reader_base, const std::string& url) {
    std::string base = reader_base;
    while (!base.empty() && base.back() == '/') base.pop_back();
    return base + "/" + net::encode_spaces(url);
}

[[noreturn]] void throw_not_found(const std::string& reader_base, const std::string& url) {
    throw FetchError(std::string(kReadFailed) + net::describe_status(404, reader_url(reader_base, url)));
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class SemaphoreGuard {
public:
    explicit SemaphoreGuard(std::counting_semaphore<>* s) : s_(s) {
        if (s_) s_->acquire();
    }
    ~SemaphoreGuard() {
        if (s_) s_->release();
    }
    SemaphoreGuard(const SemaphoreGuard&) = delete;
    SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

private:
    std::counting_semaphore<>* s_;
};

}  // namespace

// ---- registry -----------------------------------------------------------------

ToolSpec web_search_spec() {
    return {"web_search",
            "Perform a web search query and return the search results.",
            {{"query", "string", "The web search query to perform."}},
            "string"};
}

ToolSpec crawl_page_spec() {
    return {"crawl_page",
            "Access webpage using the provided URL and extract relevant content. Please make full use of this tool "
            "to verify the accuracy of the searched content.",
            {{"url", "string", "The URL of the webpage to visit."},
             {"query", "string", "The specific information to extract from the webpage."}},
            "string"};
}

ToolSpec final_answer_spec() {
    return {"final_answer",
            "Gives a clear, accurate final answer to the given task.",
            {{"answer", "string", "The clear, accurate final answer to the task"}},
            "string"};
}

ToolRegistry::ToolRegistry() {
    entries_.push_back({final_answer_spec(),
                        [](const Arguments& args) { return require(args, "answer", kFinalAnswer); },
                        nullptr});
}

void ToolRegistry::add(ToolSpec spec, Executor executor, int max_concurrency) {
    if (spec.name.empty()) throw std::invalid_argument("tool name must not be empty");
    if (!executor) throw std::invalid_argument("tool " + spec.name + " has no executor");
    std::shared_ptr<std::counting_semaphore<>> limit;
    if (max_concurrency > 0) limit = std::make_shared<std::counting_semaphore<>>(max_concurrency);
    Entry entry{std::move(spec), std::move(executor), std::move(limit)};
    for (auto& e : entries_) {
        if (e.spec.name == entry.spec.name) {
            e = std::move(entry);
            return;
        }
    }
    entries_.insert(entries_.end() - 1, std::move(entry));
}

const ToolRegistry::Entry* ToolRegistry::find(std::string_view name) const {
    for (const auto& e : entries_) {
        if (e.spec.name == name) return &e;
    }
    return nullptr;
}

bool ToolRegistry::contains(std::string_view name) const { return find(name) != nullptr; }

const ToolSpec& ToolRegistry::spec(std::string_view name) const {
    const Entry* e = find(name);
    if (!e) throw std::out_of_range("no tool named '" + std::string(name) + "'");
    return e->spec;
}

std::vector<ToolSpec> ToolRegistry::specs() const {
    std::vector<ToolSpec> out;
    for (const auto& e : entries_) out.push_back(e.spec);
    return out;
}

Observation ToolRegistry::invoke(const ToolCall& call, std::size_t call_index, const Clock& clock) const {
    const auto start = clock.now();
    Observation obs;
    obs.call_index = call_index;
    auto finish = [&](ObservationStatus status, std::string content) {
        obs.status = status;
        obs.content = std::move(content);
        obs.latency = to_ms(clock.now() - start);
        return obs;
    };

    const Entry* entry = find(call.name);
    if (!entry) {
        std::string names;
        for (const auto& e : entries_) names += (names.empty() ? "" : ", ") + e.spec.name;
        return finish(ObservationStatus::error, "Unknown tool '" + call.name + "'. Available tools: " + names);
    }
    for (const auto& [k, v] : call.arguments) {
        const auto& inputs = entry->spec.inputs;
        if (std::none_of(inputs.begin(), inputs.end(), [&](const ToolInput& in) { return in.name == k; })) {
            return finish(ObservationStatus::error, "Tool " + call.name + " got an unexpected argument '" + k + "'");
        }
    }
    for (const auto& in : entry->spec.inputs) {
        if (!find_argument(call.arguments, in.name)) {
            return finish(ObservationStatus::error, "Tool " + call.name + " is missing argument '" + in.name + "'");
        }
    }

    try {
        SemaphoreGuard guard(entry->limit.get());
        return finish(ObservationStatus::ok, entry->executor(call.arguments));
    } catch (const ToolError& e) {
        return finish(ObservationStatus::error, e.what());
    } catch (const std::exception& e) {
        return finish(ObservationStatus::error, "Error executing tool " + call.name + ": " + e.what());
    }
}

std::string ToolRegistry::render_tool_list() const {
    std::string out;
    for (const auto& e : entries_) {
        if (!out.empty()) out += "\n";
        std::string inputs = "{";
        for (std::size_t i = 0; i < e.spec.inputs.size(); ++i) {
            const auto& in = e.spec.inputs[i];
            if (i) inputs += ", ";
            inputs += text::python_repr(in.name) + ": {'type': " + text::python_repr(in.type) +
                      ", 'description': " + text::python_repr(in.description) + "}";
        }
        inputs += "}";
        out += "- " + e.spec.name + ": " + e.spec.description + "\n";
        out += "    Takes inputs: " + inputs + "\n";
        out += "    Returns an output of type: " + e.spec.output_type;
    }
    return out;
}

ordered_json ToolRegistry::function_schemas() const {
    ordered_json arr = ordered_json::array();
    for (const auto& e : entries_) {
        ordered_json props = ordered_json::object();
        ordered_json required = ordered_json::array();
        for (const auto& in : e.spec.inputs) {
            props[in.name] = {{"type", in.type}, {"description", in.description}};
            required.push_back(in.name);
        }
        arr.push_back({{"type", "function"},
                       {"function",
                        {{"name", e.spec.name},
                         {"description", e.spec.description},
                         {"parameters", {{"type", "object"}, {"properties", props}, {"required", required}}}}}});
    }
    return arr;
}

// ---- search -----------------------------------------------------------------

ordered_json to_json(const SearchResult& r) {
    ordered_json j{{"title", r.title}, {"url", r.url}, {"snippet", r.snippet}};
    if (r.date) j["date"] = *r.date;
    if (r.source) j["source"] = *r.source;
    return j;
}

SearchResult search_result_from_json(const ordered_json& j) {
    SearchResult r;
    r.title = j.value("title", "");
    r.url = j.value("url", j.value("link", ""));
    r.snippet = j.value("snippet", "");
    if (j.contains("date") && j["date"].is_string()) r.date = j["date"].get<std::string>();
    if (j.contains("source") && j["source"].is_string()) r.source = j["source"].get<std::string>();
    return r;
}

std::string render_search_results(const std::vector<SearchResult>& results, std::size_t limit) {
    std::string out;
    const std::size_t n = std::min(results.size(), limit);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = results[i];
        if (i) out += "\n\n";
        out += std::to_string(i + 1) + ". [" + r.title + "](" + r.url + ")\n";
        if (r.date && !r.date->empty()) out += "Date published: " + *r.date + "\n";
        out += "Source: " + (r.source && !r.source->empty() ? *r.source : std::string("Unknown source")) + "\n";
        out += "   " + r.snippet;
    }
    return out;
}

SerperSearch::SerperSearch(std::shared_ptr<net::HttpTransport> transport, std::string api_key, std::string endpoint,
                           HttpOptions http)
    : transport_(std::move(transport)), api_key_(std::move(api_key)), endpoint_(std::move(endpoint)),
      http_(std::move(http)) {}

std::vector<SearchResult> SerperSearch::search(const std::string& query) {
    if (api_key_.empty()) throw ToolError(std::string(kSearchFailed) + "no search API key configured");
    net::HttpRequest req;
    req.method = "POST";
    req.url = endpoint_;
    req.headers = {{"X-API-KEY", api_key_}, {"Content-Type", "application/json"}};
    req.body = ordered_json{{"q", query}, {"num", kMaxSearchResults}}.dump();
    req.timeout = http_.timeout;
    net::HttpResponse resp;
    try {
        resp = net::send_with_retry(*transport_, req, http_.retry, http_.sleeper);
    } catch (const std::exception& e) {
        throw ToolError(std::string(kSearchFailed) + e.what());
    }
    auto j = ordered_json::parse(resp.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ToolError(std::string(kSearchFailed) + "malformed response body");
    std::vector<SearchResult> out;
    if (auto it = j.find("organic"); it != j.end() && it->is_array()) {
        for (const auto& item : *it) {
            if (item.is_object()) out.push_back(search_result_from_json(item));
        }
    }
    return out;
}

void InMemorySearch::put(const std::string& query, std::vector<SearchResult> results) {
    results_[normalize_query(query)] = std::move(results);
}

std::vector<SearchResult> InMemorySearch::search(const std::string& query) {
    auto it = results_.find(normalize_query(query));
    if (it == results_.end()) throw ToolError(std::string(kSearchFailed) + "no results stored for '" + query + "'");
    return it->second;
}

FixtureSearch::FixtureSearch(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::vector<SearchResult> FixtureSearch::search(const std::string& query) {
    const auto key = search_fixture_key(query);
    const auto file = dir_ / "search" / (key + ".json");
    if (!std::filesystem::exists(file)) {
        throw ToolError(std::string(kSearchFailed) + "no fixture for query '" + query + "' (key " + key + ")");
    }
    auto j = ordered_json::parse(read_file(file), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("results") || !j["results"].is_array()) {
        throw ToolError(std::string(kSearchFailed) + "malformed fixture " + file.string());
    }
    std::vector<SearchResult> out;
    for (const auto& item : j["results"]) out.push_back(search_result_from_json(item));
    return out;
}

// ---- crawl ------------------------------------------------------------------

std::string truncate_page(std::string_view page, std::size_t limit) {
    return std::string(page.substr(0, text::utf8_prefix_bytes(page, limit)));
}

ReaderFetcher::ReaderFetcher(std::shared_ptr<net::HttpTransport> transport, std::string reader_base,
                             std::string api_key, HttpOptions http)
    : transport_(std::move(transport)), reader_base_(std::move(reader_base)), api_key_(std::move(api_key)),
      http_(std::move(http)) {}

std::string ReaderFetcher::fetch(const std::string& url) {
    net::HttpRequest req;
    req.url = reader_url(reader_base_, url);
    req.timeout = http_.timeout;
    if (!api_key_.empty()) req.headers["Authorization"] = "Bearer " + api_key_;
    try {
        return net::send_with_retry(*transport_, req, http_.retry, http_.sleeper).body;
    } catch (const std::exception& e) {
        throw FetchError(std::string(kReadFailed) + e.what());
    }
}

InMemoryFetcher::InMemoryFetcher(std::string reader_base) : reader_base_(std::move(reader_base)) {}

void InMemoryFetcher::put(const std::string& url, std::string page) { pages_[text::trim(url)] = std::move(page); }

std::string InMemoryFetcher::fetch(const std::string& url) {
    auto it = pages_.find(text::trim(url));
    if (it == pages_.end()) throw_not_found(reader_base_, url);
    return it->second;
}

FixtureFetcher::FixtureFetcher(std::filesystem::path dir, std::string reader_base)
    : dir_(std::move(dir)), reader_base_(std::move(reader_base)) {}

std::string FixtureFetcher::fetch(const std::string& url) {
    const auto file = dir_ / "pages" / (page_fixture_key(url) + ".txt");
    if (!std::filesystem::exists(file)) throw_not_found(reader_base_, url);
    return read_file(file);
}

BackendSummarizer::BackendSummarizer(std::shared_ptr<backend::ModelBackend> backend) : backend_(std::move(backend)) {}

std::string BackendSummarizer::summarize(const std::string& url, const std::string& query, const std::string& page) {
    const auto prompt = backend::render_prompt(backend::prompts::get(backend::prompts::kCrawlSummary),
                                               {{"query", query}, {"url", url}, {"page", page}});
    try {
        return backend_->generate({{backend::Role::user, prompt}}, backend::Purpose::summarize_page);
    } catch (const std::exception& e) {
        throw SummarizerUnavailable(std::string("Page summarizer unavailable: ") + e.what());
    }
}

Executor make_web_search(std::shared_ptr<SearchProvider> provider) {
    return [provider = std::move(provider)](const Arguments& args) {
        const auto query = require(args, "query", "web_search");
        auto results = provider->search(query);
        if (results.empty()) throw ToolError("No results found for query: " + text::python_repr(query));
        return render_search_results(results);
    };
}

Executor make_crawl_page(std::shared_ptr<PageFetcher> fetcher, std::shared_ptr<Summarizer> summarizer,
                         CrawlOptions options) {
    return [fetcher = std::move(fetcher), summarizer = std::move(summarizer),
            options = std::move(options)](const Arguments& args) {
        const auto url = require(args, "url", "crawl_page");
        const auto query = require(args, "query", "crawl_page");
        static const std::regex absolute(R"(^https?://[^/?#]+.*$)", std::regex::icase);
        const auto trimmed = text::trim(url);
        if (!std::regex_match(trimmed, absolute)) {
            throw PreconditionError("crawl_page requires an absolute http(s) URL, got " + text::python_repr(url));
        }
        // the reader proxy rejects URLs with embedded whitespace; mirror it
        // locally so mock and live runs fail the same way
        if (std::any_of(trimmed.begin(), trimmed.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
            throw FetchError(std::string(kReadFailed) + net::describe_status(400, reader_url(options.reader_base, trimmed)));
        }
        const auto page = truncate_page(fetcher->fetch(trimmed), options.char_limit);
        return summarizer->summarize(trimmed, query, page);
    };
}

std::shared_ptr<ToolRegistry> make_registry(std::shared_ptr<SearchProvider> provider,
                                            std::shared_ptr<PageFetcher> fetcher,
                                            std::shared_ptr<Summarizer> summarizer, CrawlOptions crawl,
                                            ToolLimits limits) {
    auto registry = std::make_shared<ToolRegistry>();
    registry->add(web_search_spec(), make_web_search(std::move(provider)), limits.web_search);
    registry->add(crawl_page_spec(), make_crawl_page(std::move(fetcher), std::move(summarizer), std::move(crawl)),
                  limits.crawl_page);
    return registry;
}

// ---- fixtures -----------------------------------------------------------------

std::string normalize_query(std::string_view query) { return text::to_lower(text::collapse_whitespace(query)); }

std::string search_fixture_key(std::string_view query) { return text::fnv1a_hex(normalize_query(query)); }

std::string page_fixture_key(std::string_view url) { return text::fnv1a_hex(text::trim(url)); }

void write_search_fixture(const std::filesystem::path& dir, const std::string& query,
                          const std::vector<SearchResult>& results) {
    std::filesystem::create_directories(dir / "search");
    ordered_json j{{"query", query}, {"results", ordered_json::array()}};
    for (const auto& r : results) j["results"].push_back(to_json(r));
    std::ofstream(dir / "search" / (search_fixture_key(query) + ".json"), std::ios::binary) << j.dump(2) << "\n";
}

void write_page_fixture(const std::filesystem::path& dir, const std::string& url, const std::string& page) {
    std::filesystem::create_directories(dir / "pages");
    std::ofstream(dir / "pages" / (page_fixture_key(url) + ".txt"), std::ios::binary) << page;
}

}  // namespace fanout::tools
