#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fanout/engine.hpp"
#include "fanout/model.hpp"
#include "fanout/tools.hpp"
#include "fanout/trajectory.hpp"

namespace fanout::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Returns the value of an environment variable, if set.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

struct EndpointSettings {
    std::string base_url;
    std::string model;
    std::string api_key_env;
    double temperature = 1.0;
    std::optional<std::string> reasoning_effort;
};

struct Settings {
    int max_steps = 40;
    int summary_interval = 8;
    int max_parallel = 5;
    int max_tool_calls = 5;
    std::string mode = "strict";
    std::int64_t timeout_ms = 60000;
    int dispatch_concurrency = 5;
    int jobs = 1;

    EndpointSettings backend{"https://api.openai.com/v1", "", "OPENAI_API_KEY", 1.0, std::nullopt};
    /// Empty fields fall back to the backend endpoint.
    EndpointSettings judge{"", "", "", 1.0, std::nullopt};
    EndpointSettings summarizer{"", "", "", 1.0, std::nullopt};

    std::string search_api_key_env = "SERPER_API_KEY";
    std::string reader_api_key_env = "JINA_API_KEY";
    std::string reader_base = std::string(tools::kDefaultReaderBase);

    /// Offline mode: heuristic model, fixture tools, frozen clock.
    std::optional<std::filesystem::path> mock_dir;

    engine::EngineConfig engine_config() const;
};

/// Values given on the command line; unset fields defer to lower layers.
struct Overrides {
    std::optional<int> max_steps;
    std::optional<int> summary_interval;
    std::optional<int> max_parallel;
    std::optional<int> max_tool_calls;
    std::optional<std::string> mode;
    std::optional<std::int64_t> timeout_ms;
    std::optional<int> dispatch_concurrency;
    std::optional<int> jobs;
    std::optional<std::string> model;
    std::optional<std::string> base_url;
    std::optional<std::filesystem::path> mock_dir;
};

/// Defaults, then the JSON config file, then FANOUT_* variables, then flags.
/// Throws ConfigError on unreadable files, bad values or unknown keys.
Settings resolve_settings(const Overrides& flags, const EnvLookup& env,
                          const std::optional<std::filesystem::path>& config_file);

struct TaskSpec {
    std::string id;
    std::string question;
    std::optional<std::string> answer;
};

/// JSONL rows {"id", "question", "answer"?}. Throws ConfigError on duplicate
/// ids, empty questions or malformed lines.
std::vector<TaskSpec> load_task_file(const std::filesystem::path& path);
std::vector<TaskSpec> parse_task_lines(const std::string& text);

/// Everything one task run needs. Each task gets its own instance.
struct Environment {
    std::shared_ptr<backend::ModelBackend> model;
    std::shared_ptr<backend::ModelBackend> judge;
    std::shared_ptr<const tools::ToolRegistry> tools;
    std::shared_ptr<const Clock> clock;
};

using EnvironmentFactory = std::function<Environment(const TaskSpec&)>;

/// Mock or live environments per the settings. Live mode checks that every
/// required API key variable is set and throws ConfigError otherwise.
EnvironmentFactory make_environment_factory(const Settings& settings, const EnvLookup& env);

struct TaskResult {
    std::string id;
    std::optional<trajectory::TrajectoryRecord> record;
    std::optional<bool> correct;  // absent when not judged
    std::optional<std::string> judge_error;
    std::optional<std::string> error;  // engine hard error
};

struct RunReport {
    std::vector<TaskResult> tasks;

    std::size_t judged() const;
    std::size_t judged_correct() const;
    /// Correct over judged; absent when nothing was judged.
    std::optional<double> pass_at_1() const;
    std::size_t errors() const;
    nlohmann::ordered_json to_json() const;
};

/// Runs every task with at most settings.jobs in flight. Engine failures are
/// recorded per task; the batch always completes. Tasks with a gold answer
/// are judged; a run without an answer counts as incorrect.
RunReport run_tasks(const std::vector<TaskSpec>& tasks, const Settings& settings, const EnvironmentFactory& factory);

/// Writes <out>/trajectories/<id>.json and <out>/report.json.
void write_run_outputs(const RunReport& report, const std::filesystem::path& out);

struct LoadedRecord {
    std::filesystem::path file;
    trajectory::TrajectoryRecord record;
};

/// Every *.json under `dir` (recursively, sorted) that parses as a trajectory.
/// Other JSON files are reported through `skipped`.
std::vector<LoadedRecord> load_records(const std::filesystem::path& dir, std::vector<std::string>* skipped = nullptr);

struct ExportSummary {
    std::size_t records = 0;
    std::size_t export_attempts = 0;  // answer-terminated records
    std::size_t judged_correct = 0;
    std::size_t kept = 0;
    std::map<std::string, std::size_t> reasons;

    nlohmann::ordered_json to_json() const;
};

/// Exports answer-terminated records. Records with gold answers go through
/// filter_corpus; the rest are only format-checked. Writes kept.jsonl,
/// rejected.jsonl and summary.json under `out`.
ExportSummary export_corpus(const std::vector<LoadedRecord>& records, backend::ModelBackend& judge,
                            const std::filesystem::path& out, int jobs = 1);

/// Writes metrics.json plus, per benchmark (the first directory level below
/// `dir`, or the directory name itself for top-level files),
/// <benchmark>_tool_calls_per_step.csv and <benchmark>_steps_per_run.csv.
trajectory::CorpusMetrics report_corpus(const std::filesystem::path& dir, const std::filesystem::path& out);

/// Full command line entry point; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env = process_env());

}  // namespace fanout::cli
