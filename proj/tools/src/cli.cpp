#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fanout/backend.hpp"
#include "fanout/clock.hpp"
#include "fanout/net.hpp"
#include "fanout/plan.hpp"
#include "fanout/text.hpp"

namespace fanout::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
}

engine::EngineConfig Settings::engine_config() const {
    engine::EngineConfig c;
    c.max_steps = max_steps;
    c.summary_interval = summary_interval;
    c.policy.mode = scheduler::mode_from_string(mode);
    c.policy.max_parallel_goals = max_parallel;
    c.policy.max_tool_calls_per_step = max_tool_calls;
    c.per_call_timeout = std::chrono::milliseconds{timeout_ms};
    c.max_concurrent_dispatch = dispatch_concurrency;
    return c;
}

// ---- settings -----------------------------------------------------------------

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

void check_keys(const ordered_json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown config key " + where + "." + key);
        }
    }
}

template <typename T>
void take(const ordered_json& obj, const char* key, T& target, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        target = it->get<T>();
    } catch (const ordered_json::exception&) {
        throw ConfigError("config key " + where + "." + key + " has the wrong type");
    }
}

void apply_endpoint(const ordered_json& obj, EndpointSettings& e, const std::string& where) {
    check_keys(obj, where, {"base_url", "model", "api_key_env", "temperature", "reasoning_effort"});
    take(obj, "base_url", e.base_url, where);
    take(obj, "model", e.model, where);
    take(obj, "api_key_env", e.api_key_env, where);
    take(obj, "temperature", e.temperature, where);
    if (auto it = obj.find("reasoning_effort"); it != obj.end() && !it->is_null()) {
        std::string v;
        take(obj, "reasoning_effort", v, where);
        e.reasoning_effort = v;
    }
}

void apply_config(const fs::path& path, Settings& s) {
    const auto j = ordered_json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
    check_keys(j, "config", {"backend", "judge", "summarizer", "run", "search", "reader"});
    if (auto it = j.find("backend"); it != j.end()) apply_endpoint(*it, s.backend, "backend");
    if (auto it = j.find("judge"); it != j.end()) apply_endpoint(*it, s.judge, "judge");
    if (auto it = j.find("summarizer"); it != j.end()) apply_endpoint(*it, s.summarizer, "summarizer");
    if (auto it = j.find("run"); it != j.end()) {
        check_keys(*it, "run",
                   {"max_steps", "summary_interval", "max_parallel", "max_tool_calls", "mode", "timeout_ms",
                    "dispatch_concurrency", "jobs"});
        take(*it, "max_steps", s.max_steps, "run");
        take(*it, "summary_interval", s.summary_interval, "run");
        take(*it, "max_parallel", s.max_parallel, "run");
        take(*it, "max_tool_calls", s.max_tool_calls, "run");
        take(*it, "mode", s.mode, "run");
        take(*it, "timeout_ms", s.timeout_ms, "run");
        take(*it, "dispatch_concurrency", s.dispatch_concurrency, "run");
        take(*it, "jobs", s.jobs, "run");
    }
    if (auto it = j.find("search"); it != j.end()) {
        check_keys(*it, "search", {"api_key_env"});
        take(*it, "api_key_env", s.search_api_key_env, "search");
    }
    if (auto it = j.find("reader"); it != j.end()) {
        check_keys(*it, "reader", {"api_key_env", "base_url"});
        take(*it, "api_key_env", s.reader_api_key_env, "reader");
        take(*it, "base_url", s.reader_base, "reader");
    }
}

template <typename T>
void env_number(const EnvLookup& env, const std::string& name, T& target) {
    auto v = env(name);
    if (!v) return;
    try {
        std::size_t used = 0;
        const long long parsed = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument(name);
        target = static_cast<T>(parsed);
    } catch (const std::exception&) {
        throw ConfigError(name + " must be an integer, got '" + *v + "'");
    }
}

void apply_env(const EnvLookup& env, Settings& s) {
    env_number(env, "FANOUT_MAX_STEPS", s.max_steps);
    env_number(env, "FANOUT_SUMMARY_INTERVAL", s.summary_interval);
    env_number(env, "FANOUT_MAX_PARALLEL", s.max_parallel);
    env_number(env, "FANOUT_MAX_TOOL_CALLS", s.max_tool_calls);
    env_number(env, "FANOUT_TIMEOUT_MS", s.timeout_ms);
    env_number(env, "FANOUT_DISPATCH_CONCURRENCY", s.dispatch_concurrency);
    env_number(env, "FANOUT_JOBS", s.jobs);
    if (auto v = env("FANOUT_MODE")) s.mode = *v;
    if (auto v = env("FANOUT_MODEL")) s.backend.model = *v;
    if (auto v = env("FANOUT_BASE_URL")) s.backend.base_url = *v;
}

template <typename T>
void apply_flag(const std::optional<T>& flag, T& target) {
    if (flag) target = *flag;
}

EndpointSettings with_fallback(EndpointSettings e, const EndpointSettings& base) {
    if (e.base_url.empty()) e.base_url = base.base_url;
    if (e.model.empty()) e.model = base.model;
    if (e.api_key_env.empty()) e.api_key_env = base.api_key_env;
    return e;
}

}  // namespace

Settings resolve_settings(const Overrides& flags, const EnvLookup& env, const std::optional<fs::path>& config_file) {
    Settings s;
    if (config_file) apply_config(*config_file, s);
    apply_env(env, s);
    apply_flag(flags.max_steps, s.max_steps);
    apply_flag(flags.summary_interval, s.summary_interval);
    apply_flag(flags.max_parallel, s.max_parallel);
    apply_flag(flags.max_tool_calls, s.max_tool_calls);
    apply_flag(flags.mode, s.mode);
    apply_flag(flags.timeout_ms, s.timeout_ms);
    apply_flag(flags.dispatch_concurrency, s.dispatch_concurrency);
    apply_flag(flags.jobs, s.jobs);
    apply_flag(flags.model, s.backend.model);
    apply_flag(flags.base_url, s.backend.base_url);
    if (flags.mock_dir) s.mock_dir = flags.mock_dir;

    if (s.jobs < 1) throw ConfigError("jobs must be >= 1");
    try {
        s.engine_config().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return s;
}

// ---- tasks ------------------------------------------------------------------

std::vector<TaskSpec> parse_task_lines(const std::string& text) {
    std::vector<TaskSpec> tasks;
    std::set<std::string> seen;
    const auto lines = text::split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        const std::string where = "task line " + std::to_string(i + 1);
        const auto j = ordered_json::parse(lines[i], nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ConfigError(where + " is not a JSON object");
        TaskSpec t;
        try {
            const auto& id = j.at("id");
            t.id = id.is_string() ? id.get<std::string>() : id.dump();
            t.question = j.at("question").get<std::string>();
            if (auto a = j.find("answer"); a != j.end() && !a->is_null()) {
                t.answer = a->is_string() ? a->get<std::string>() : a->dump();
            }
        } catch (const ordered_json::exception&) {
            throw ConfigError(where + " needs a string \"question\" and an \"id\"");
        }
        if (text::trim(t.question).empty()) throw ConfigError(where + " has an empty question");
        if (t.id.empty()) throw ConfigError(where + " has an empty id");
        if (!seen.insert(t.id).second) throw ConfigError(where + " repeats id '" + t.id + "'");
        tasks.push_back(std::move(t));
    }
    return tasks;
}

std::vector<TaskSpec> load_task_file(const fs::path& path) { return parse_task_lines(read_file(path)); }

// ---- environments -------------------------------------------------------------

EnvironmentFactory make_environment_factory(const Settings& settings, const EnvLookup& env) {
    if (settings.mock_dir) {
        const fs::path dir = *settings.mock_dir;
        const std::string reader = settings.reader_base;
        return [dir, reader](const TaskSpec&) {
            auto model = std::make_shared<backend::HeuristicBackend>();
            auto registry = tools::make_registry(std::make_shared<tools::FixtureSearch>(dir),
                                                 std::make_shared<tools::FixtureFetcher>(dir, reader),
                                                 std::make_shared<tools::BackendSummarizer>(model),
                                                 tools::CrawlOptions{reader, tools::kPageCharLimit});
            return Environment{model, std::make_shared<backend::HeuristicBackend>(), registry,
                               std::make_shared<FrozenClock>()};
        };
    }

    const auto require = [&env](const std::string& var, const std::string& what) {
        if (var.empty()) return std::string();
        auto v = env(var);
        if (!v || v->empty()) throw ConfigError(what + " needs the " + var + " environment variable");
        return *v;
    };
    const auto endpoint = [&](const EndpointSettings& e, const std::string& what) {
        if (e.model.empty()) throw ConfigError(what + " model is not configured (backend.model or --model)");
        backend::OpenAiConfig c;
        c.base_url = e.base_url;
        c.model = e.model;
        c.api_key = require(e.api_key_env, what);
        c.temperature = e.temperature;
        c.reasoning_effort = e.reasoning_effort;
        return c;
    };
    const auto model_cfg = endpoint(settings.backend, "backend");
    const auto judge_cfg = endpoint(with_fallback(settings.judge, settings.backend), "judge");
    const auto summarizer_cfg = endpoint(with_fallback(settings.summarizer, settings.backend), "summarizer");
    const auto search_key = require(settings.search_api_key_env, "web_search");
    const auto reader_key = env(settings.reader_api_key_env).value_or("");
    const std::string reader = settings.reader_base;

    return [=](const TaskSpec&) {
        auto transport = std::make_shared<net::CurlTransport>();
        auto model = std::make_shared<backend::OpenAiCompatibleBackend>(model_cfg, transport);
        auto summarizer = std::make_shared<backend::OpenAiCompatibleBackend>(summarizer_cfg, transport);
        auto registry = tools::make_registry(std::make_shared<tools::SerperSearch>(transport, search_key),
                                             std::make_shared<tools::ReaderFetcher>(transport, reader, reader_key),
                                             std::make_shared<tools::BackendSummarizer>(summarizer),
                                             tools::CrawlOptions{reader, tools::kPageCharLimit});
        return Environment{model, std::make_shared<backend::OpenAiCompatibleBackend>(judge_cfg, transport), registry,
                           std::make_shared<SteadyClock>()};
    };
}

// ---- run --------------------------------------------------------------------

std::size_t RunReport::judged() const {
    return static_cast<std::size_t>(std::count_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.correct.has_value(); }));
}

std::size_t RunReport::judged_correct() const {
    return static_cast<std::size_t>(
        std::count_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.correct.value_or(false); }));
}

std::optional<double> RunReport::pass_at_1() const {
    const auto n = judged();
    if (n == 0) return std::nullopt;
    return static_cast<double>(judged_correct()) / static_cast<double>(n);
}

std::size_t RunReport::errors() const {
    return static_cast<std::size_t>(std::count_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.error.has_value(); }));
}

ordered_json RunReport::to_json() const {
    ordered_json rows = ordered_json::array();
    std::vector<trajectory::Metrics> metrics;
    for (const auto& t : tasks) {
        ordered_json row{{"id", t.id}};
        if (t.record) {
            const auto m = trajectory::compute_metrics(*t.record);
            metrics.push_back(m);
            row["termination"] = trajectory::to_string(t.record->termination);
            row["steps"] = m.total_steps;
            row["tool_calls"] = m.total_tool_calls;
            row["final_answer"] = t.record->final_answer ? ordered_json(*t.record->final_answer) : ordered_json(nullptr);
        } else {
            row["termination"] = nullptr;
        }
        row["judged"] = t.correct ? ordered_json(*t.correct ? "correct" : "incorrect") : ordered_json(nullptr);
        if (t.judge_error) row["judge_error"] = *t.judge_error;
        if (t.error) row["error"] = *t.error;
        rows.push_back(std::move(row));
    }
    const auto corpus = trajectory::aggregate_metrics(metrics);
    const auto p = pass_at_1();
    ordered_json aggregate{{"tasks", tasks.size()},
                           {"completed", metrics.size()},
                           {"errors", errors()},
                           {"judged", judged()},
                           {"judged_correct", judged_correct()},
                           {"pass_at_1", p ? ordered_json(*p) : ordered_json(nullptr)},
                           {"mean_steps", corpus.mean_steps.to_double()},
                           {"mean_tool_calls_per_step", corpus.tool_calls_per_step.to_double()}};
    return {{"tasks", rows}, {"aggregate", aggregate}};
}

namespace {

TaskResult run_one(const TaskSpec& task, const Settings& settings, const EnvironmentFactory& factory) {
    TaskResult r;
    r.id = task.id;
    Environment env;
    try {
        env = factory(task);
        engine::Engine eng(settings.engine_config(), env.model, env.tools, env.clock);
        r.record = eng.run(task.question, {task.id, task.answer});
    } catch (const std::exception& e) {
        r.error = e.what();
        return r;
    }
    if (!task.answer) return r;
    if (!r.record->final_answer) {
        r.correct = false;
        return r;
    }
    try {
        r.correct = backend::judge(task.question, *task.answer, *r.record->final_answer, *env.judge).correct();
    } catch (const std::exception& e) {
        // an unjudgeable answer is reported but not counted
        r.judge_error = e.what();
    }
    return r;
}

std::string safe_name(const std::string& id) {
    std::string out;
    for (char c : id) {
        const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        out.push_back(keep ? c : '_');
    }
    if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
    return out;
}

}  // namespace

RunReport run_tasks(const std::vector<TaskSpec>& tasks, const Settings& settings, const EnvironmentFactory& factory) {
    RunReport report;
    report.tasks.resize(tasks.size());
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, settings.jobs)), tasks.size());
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) report.tasks[i] = run_one(tasks[i], settings, factory);
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return report;
}

void write_run_outputs(const RunReport& report, const fs::path& out) {
    std::set<std::string> used;
    for (const auto& t : report.tasks) {
        if (!t.record) continue;
        std::string name = safe_name(t.id);
        for (int n = 2; !used.insert(name).second; ++n) name = safe_name(t.id) + "_" + std::to_string(n);
        write_file(out / "trajectories" / (name + ".json"), trajectory::dump_record(*t.record));
    }
    write_file(out / "report.json", report.to_json().dump(2) + "\n");
}

// ---- export / report ------------------------------------------------------------

std::vector<LoadedRecord> load_records(const fs::path& dir, std::vector<std::string>* skipped) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<LoadedRecord> out;
    for (const auto& f : files) {
        try {
            out.push_back({f, trajectory::load_record(read_file(f))});
        } catch (const trajectory::RecordFormatError& e) {
            if (skipped) skipped->push_back(f.string() + ": " + e.what());
        }
    }
    return out;
}

ordered_json ExportSummary::to_json() const {
    ordered_json r = ordered_json::object();
    for (const auto& [k, n] : reasons) r[k] = n;
    return {{"records", records},
            {"export_attempts", export_attempts},
            {"judged_correct", judged_correct},
            {"kept", kept},
            {"rejected", export_attempts - kept},
            {"reasons", r}};
}

ExportSummary export_corpus(const std::vector<LoadedRecord>& records, backend::ModelBackend& judge, const fs::path& out,
                            int jobs) {
    ExportSummary summary;
    summary.records = records.size();

    std::vector<const LoadedRecord*> judged;
    std::vector<const LoadedRecord*> unjudged;
    for (const auto& r : records) {
        if (r.record.termination != trajectory::Termination::final_answer || !r.record.final_answer) continue;
        ++summary.export_attempts;
        (r.record.gold_answer ? judged : unjudged).push_back(&r);
    }

    struct Row {
        const LoadedRecord* source;
        std::optional<trajectory::SftDialogue> kept;
        std::string reason;
        std::string detail;
    };
    std::vector<Row> rows;

    std::vector<trajectory::TrajectoryRecord> batch;
    for (const auto* r : judged) batch.push_back(r->record);
    trajectory::FilterOptions options;
    options.concurrency = jobs;
    const auto filtered = trajectory::filter_corpus(batch, judge, options);
    summary.judged_correct += filtered.judged_correct;
    for (const auto& k : filtered.kept) rows.push_back({judged[k.index], k.dialogue, {}, {}});
    for (const auto& rej : filtered.rejected) {
        rows.push_back({judged[rej.index], std::nullopt, std::string(trajectory::to_string(rej.reason)), rej.detail});
    }

    for (const auto* r : unjudged) {
        auto dialogue = trajectory::export_sft(r->record);
        const auto flaws = trajectory::validate_sft(dialogue);
        if (flaws.empty()) {
            rows.push_back({r, std::move(dialogue), {}, {}});
        } else {
            rows.push_back({r, std::nullopt, std::string(trajectory::to_string(flaws.front().kind)), flaws.front().detail});
        }
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.source->file < b.source->file; });

    std::string kept_lines;
    std::string rejected_lines;
    for (const auto& row : rows) {
        if (row.kept) {
            ++summary.kept;
            kept_lines += trajectory::to_json(*row.kept).dump() + "\n";
        } else {
            ++summary.reasons[row.reason];
            rejected_lines += ordered_json{{"task_id", row.source->record.task_id},
                                           {"file", row.source->file.generic_string()},
                                           {"reason", row.reason},
                                           {"detail", row.detail}}
                                  .dump() +
                              "\n";
        }
    }
    write_file(out / "kept.jsonl", kept_lines);
    write_file(out / "rejected.jsonl", rejected_lines);
    write_file(out / "summary.json", summary.to_json().dump(2) + "\n");
    return summary;
}

namespace {

std::string distribution_csv(const char* key, const char* value, const std::map<std::int64_t, std::int64_t>& d) {
    std::string out = std::string(key) + "," + value + "\n";
    for (const auto& [k, n] : d) out += std::to_string(k) + "," + std::to_string(n) + "\n";
    return out;
}

}  // namespace

trajectory::CorpusMetrics report_corpus(const fs::path& dir, const fs::path& out) {
    const auto records = load_records(dir);
    if (records.empty()) throw ConfigError("no trajectory records under " + dir.string());

    std::string top = dir.filename().string();
    if (top.empty()) top = dir.parent_path().filename().string();
    if (top.empty()) top = "corpus";

    std::vector<trajectory::Metrics> all;
    std::map<std::string, std::vector<trajectory::Metrics>> by_benchmark;
    ordered_json per_record = ordered_json::array();
    for (const auto& r : records) {
        const auto m = trajectory::compute_metrics(r.record);
        const auto rel = fs::relative(r.file, dir);
        const std::string bench = std::distance(rel.begin(), rel.end()) > 1 ? rel.begin()->string() : top;
        all.push_back(m);
        by_benchmark[bench].push_back(m);
        per_record.push_back(
            {{"file", rel.generic_string()}, {"benchmark", bench}, {"task_id", r.record.task_id}, {"metrics", trajectory::to_json(m)}});
    }
    const auto corpus = trajectory::aggregate_metrics(all);
    ordered_json benches = ordered_json::object();
    for (const auto& [name, ms] : by_benchmark) {
        const auto c = trajectory::aggregate_metrics(ms);
        benches[name] = trajectory::to_json(c);
        write_file(out / (safe_name(name) + "_tool_calls_per_step.csv"),
                   distribution_csv("tool_calls_per_step", "steps", c.calls_distribution));
        write_file(out / (safe_name(name) + "_steps_per_run.csv"),
                   distribution_csv("steps_per_run", "runs", c.steps_distribution));
    }
    write_file(out / "metrics.json",
               ordered_json{{"corpus", trajectory::to_json(corpus)}, {"benchmarks", benches}, {"trajectories", per_record}}
                       .dump(2) +
                   "\n");
    return corpus;
}

// ---- command line -----------------------------------------------------------------

namespace {

struct CommonFlags {
    std::string config;
    std::string mock;
    int jobs = 1;
};

void add_common(CLI::App& cmd, CommonFlags& f) {
    cmd.add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    cmd.add_option("--mock", f.mock, "Run offline against fixture directory DIR");
    cmd.add_option("--jobs", f.jobs, "Tasks or records processed concurrently (default 1)");
}

template <typename T>
std::optional<T> if_given(const CLI::Option* opt, const T& value) {
    return opt->count() ? std::optional<T>(value) : std::nullopt;
}

std::shared_ptr<backend::ModelBackend> make_judge(const Settings& s, const EnvLookup& env) {
    if (s.mock_dir) return std::make_shared<backend::HeuristicBackend>();
    const auto e = with_fallback(s.judge, s.backend);
    if (e.model.empty()) throw ConfigError("judge model is not configured");
    backend::OpenAiConfig c;
    c.base_url = e.base_url;
    c.model = e.model;
    c.temperature = e.temperature;
    c.reasoning_effort = e.reasoning_effort;
    if (!e.api_key_env.empty()) {
        auto key = env(e.api_key_env);
        if (!key || key->empty()) throw ConfigError("judge needs the " + e.api_key_env + " environment variable");
        c.api_key = *key;
    }
    return std::make_shared<backend::OpenAiCompatibleBackend>(c, std::make_shared<net::CurlTransport>());
}

std::string format_fraction(std::optional<double> v) {
    if (!v) return "n/a";
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(2);
    ss << *v;
    return ss.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    CLI::App app{"DAG-planned parallel web research agent"};
    app.name("fanout");
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Run the agent on one task or a JSONL task file");
    CommonFlags run_common;
    add_common(*run, run_common);
    std::string task, task_file, answer, out_dir = "runs", mode, model, base_url;
    int max_steps = 40, summary_interval = 8, max_parallel = 5, max_tool_calls = 5, dispatch = 5;
    std::int64_t timeout_ms = 60000;
    auto* task_opt = run->add_option("--task", task, "Task text");
    auto* file_opt = run->add_option("--task-file", task_file, "JSONL rows {id, question, answer?}")->check(CLI::ExistingFile);
    task_opt->excludes(file_opt);
    run->add_option("--answer", answer, "Gold answer for --task; enables judging");
    run->add_option("--out", out_dir, "Output directory (default runs)");
    auto* steps_opt = run->add_option("--max-steps", max_steps, "Tool-executing step budget (default 40)");
    auto* interval_opt = run->add_option("--summary-interval", summary_interval, "Steps between plan refinements (default 8)");
    auto* parallel_opt = run->add_option("--max-parallel", max_parallel, "Goals advanced per step (default 5)");
    auto* calls_opt = run->add_option("--max-tool-calls", max_tool_calls, "Tool calls per step (default 5)");
    auto* mode_opt = run->add_option("--mode", mode, "Readiness mode: strict or aggressive (default strict)");
    auto* timeout_opt = run->add_option("--timeout-ms", timeout_ms, "Per tool call timeout (default 60000)");
    auto* dispatch_opt = run->add_option("--dispatch-concurrency", dispatch, "Tool calls in flight per step (default 5)");
    auto* model_opt = run->add_option("--model", model, "Model name for the chat completions backend");
    auto* base_opt = run->add_option("--base-url", base_url, "Chat completions base URL");

    // export
    auto* exp = app.add_subcommand("export", "Export trajectories as filtered SFT dialogues");
    CommonFlags exp_common;
    add_common(*exp, exp_common);
    std::string exp_dir, exp_out = "sft";
    exp->add_option("trajectory-dir", exp_dir, "Directory of trajectory JSON files")->required();
    exp->add_option("--out", exp_out, "Output directory (default sft)");

    // report
    auto* rep = app.add_subcommand("report", "Aggregate step and tool-call metrics");
    std::string rep_dir, rep_out = "report";
    rep->add_option("trajectory-dir", rep_dir, "Directory of trajectory JSON files")->required();
    rep->add_option("--out", rep_out, "Output directory (default report)");

    // validate-plan
    auto* vp = app.add_subcommand("validate-plan", "Parse a plan and check it is a DAG");
    std::string plan_file;
    vp->add_option("plan-file", plan_file, "Plan text file, or - for stdin")->required();

    std::vector<std::string> argv_store{"fanout"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (run->parsed()) {
            if (!task_opt->count() && !file_opt->count()) throw ConfigError("run needs --task or --task-file");
            Overrides o;
            o.max_steps = if_given(steps_opt, max_steps);
            o.summary_interval = if_given(interval_opt, summary_interval);
            o.max_parallel = if_given(parallel_opt, max_parallel);
            o.max_tool_calls = if_given(calls_opt, max_tool_calls);
            o.mode = if_given(mode_opt, mode);
            o.timeout_ms = if_given(timeout_opt, timeout_ms);
            o.dispatch_concurrency = if_given(dispatch_opt, dispatch);
            o.model = if_given(model_opt, model);
            o.base_url = if_given(base_opt, base_url);
            if (!run_common.mock.empty()) o.mock_dir = fs::path(run_common.mock);
            if (run->get_option("--jobs")->count()) o.jobs = run_common.jobs;
            const auto settings =
                resolve_settings(o, env, run_common.config.empty() ? std::nullopt : std::optional<fs::path>(run_common.config));

            std::vector<TaskSpec> tasks;
            if (task_opt->count()) {
                if (text::trim(task).empty()) throw ConfigError("--task is empty");
                tasks.push_back({"task", task, answer.empty() ? std::nullopt : std::optional<std::string>(answer)});
            } else {
                tasks = load_task_file(task_file);
            }
            const auto report = run_tasks(tasks, settings, make_environment_factory(settings, env));
            write_run_outputs(report, out_dir);
            for (const auto& t : report.tasks) {
                if (t.error) err << "task " << t.id << " failed: " << *t.error << "\n";
            }
            const auto agg = report.to_json()["aggregate"];
            out << "tasks: " << report.tasks.size() << ", errors: " << report.errors()
                << ", pass@1: " << format_fraction(report.pass_at_1()) << " (" << report.judged_correct() << "/"
                << report.judged() << "), mean steps: " << format_fraction(agg["mean_steps"].get<double>())
                << ", tool calls per step: " << format_fraction(agg["mean_tool_calls_per_step"].get<double>()) << "\n"
                << "wrote " << (fs::path(out_dir) / "report.json").string() << "\n";
            return report.errors() == 0 ? 0 : 1;
        }
        if (exp->parsed()) {
            Overrides o;
            if (!exp_common.mock.empty()) o.mock_dir = fs::path(exp_common.mock);
            if (exp->get_option("--jobs")->count()) o.jobs = exp_common.jobs;
            const auto settings =
                resolve_settings(o, env, exp_common.config.empty() ? std::nullopt : std::optional<fs::path>(exp_common.config));
            std::vector<std::string> skipped;
            const auto records = load_records(exp_dir, &skipped);
            for (const auto& s : skipped) err << "skipped " << s << "\n";
            const bool needs_judge = std::any_of(records.begin(), records.end(), [](const LoadedRecord& r) {
                return r.record.gold_answer && r.record.termination == trajectory::Termination::final_answer;
            });
            std::shared_ptr<backend::ModelBackend> judge =
                needs_judge ? make_judge(settings, env) : std::make_shared<backend::HeuristicBackend>();
            const auto summary = export_corpus(records, *judge, exp_out, settings.jobs);
            out << summary.to_json().dump(2) << "\n";
            return 0;
        }
        if (rep->parsed()) {
            const auto corpus = report_corpus(rep_dir, rep_out);
            out << "trajectories: " << corpus.trajectories << ", steps: " << corpus.total_steps
                << ", tool calls: " << corpus.total_tool_calls
                << ", tool calls per step: " << corpus.tool_calls_per_step.to_fixed(2)
                << ", mean steps: " << corpus.mean_steps.to_fixed(2) << "\n";
            return 0;
        }
        if (vp->parsed()) {
            std::string text;
            if (plan_file == "-") {
                std::ostringstream ss;
                ss << std::cin.rdbuf();
                text = ss.str();
            } else {
                text = read_file(plan_file);
            }
            try {
                const auto graph = plan::parse_plan(text);
                if (auto cycle = plan::validate_dag(graph)) {
                    err << "plan has a cycle: " << cycle->to_string() << "\n";
                    return 1;
                }
                out << plan::serialize_plan(graph) << "\nplan ok: " << graph.goals().size() << " goals, "
                    << graph.path_count() << " paths\n";
                return 0;
            } catch (const plan::MalformedPlan& e) {
                err << "malformed plan: " << e.what() << "\n";
                return 1;
            }
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace fanout::cli
