#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "fanout/net.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace fanout;
using namespace fanout::cli;
using fanout::testing::read_file;
using fanout::testing::synthetic_record;

namespace {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(fs::temp_directory_path() / ("fanout_cli_" + std::to_string(getpid()) + "_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

EnvLookup env_of(std::map<std::string, std::string> vars) {
    return [vars = std::move(vars)](const std::string& name) -> std::optional<std::string> {
        auto it = vars.find(name);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

void write(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << content;
}

struct Cli {
    int code;
    std::string out;
    std::string err;
};

Cli invoke(const std::vector<std::string>& args, const EnvLookup& env = env_of({})) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err, env);
    return {code, out.str(), err.str()};
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

std::vector<nlohmann::json> load_jsonl(const fs::path& p) {
    std::vector<nlohmann::json> rows;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
    }
    return rows;
}

void write_record(const fs::path& path, const trajectory::TrajectoryRecord& r) {
    write(path, trajectory::dump_record(r));
}

}  // namespace

// ---- settings -------------------------------------------------------------------

TEST(Settings, DefaultsMirrorParameterTable) {
    const auto s = resolve_settings({}, env_of({}), std::nullopt);
    EXPECT_EQ(s.max_steps, 40);
    EXPECT_EQ(s.summary_interval, 8);
    EXPECT_EQ(s.max_parallel, 5);
    EXPECT_EQ(s.max_tool_calls, 5);
    EXPECT_EQ(s.mode, "strict");
    EXPECT_EQ(s.jobs, 1);
    EXPECT_DOUBLE_EQ(s.backend.temperature, 1.0);
    const auto cfg = s.engine_config();
    EXPECT_EQ(cfg.max_steps, 40);
    EXPECT_EQ(cfg.summary_interval, 8);
}

TEST(Settings, FlagsBeatEnvBeatConfigFile) {
    TempDir dir("precedence");
    write(dir / "c.json", R"({"run": {"max_steps": 30, "summary_interval": 7, "max_parallel": 3, "jobs": 2},
                              "backend": {"model": "from-file", "temperature": 0.3}})");
    const auto env = env_of({{"FANOUT_MAX_STEPS", "20"}, {"FANOUT_SUMMARY_INTERVAL", "9"}, {"FANOUT_MODEL", "from-env"}});
    Overrides flags;
    flags.max_steps = 10;

    const auto s = resolve_settings(flags, env, dir / "c.json");
    EXPECT_EQ(s.max_steps, 10);         // flag
    EXPECT_EQ(s.summary_interval, 9);   // env
    EXPECT_EQ(s.max_parallel, 3);       // file
    EXPECT_EQ(s.jobs, 2);               // file
    EXPECT_EQ(s.max_tool_calls, 5);     // default
    EXPECT_EQ(s.backend.model, "from-env");
    EXPECT_DOUBLE_EQ(s.backend.temperature, 0.3);

    const auto file_only = resolve_settings({}, env_of({}), dir / "c.json");
    EXPECT_EQ(file_only.max_steps, 30);
    EXPECT_EQ(file_only.backend.model, "from-file");
}

TEST(Settings, BadInputsAreConfigErrors) {
    TempDir dir("bad_settings");
    write(dir / "unknown.json", R"({"run": {"max_stepz": 3}})");
    write(dir / "type.json", R"({"run": {"max_steps": "many"}})");
    write(dir / "broken.json", "{");
    for (const char* f : {"unknown.json", "type.json", "broken.json"}) {
        EXPECT_THROW(resolve_settings({}, env_of({}), dir / f), ConfigError) << f;
    }
    EXPECT_THROW(resolve_settings({}, env_of({{"FANOUT_MAX_STEPS", "12x"}}), std::nullopt), ConfigError);
    Overrides zero_interval;
    zero_interval.summary_interval = 0;
    EXPECT_THROW(resolve_settings(zero_interval, env_of({}), std::nullopt), ConfigError);
    Overrides no_jobs;
    no_jobs.jobs = 0;
    EXPECT_THROW(resolve_settings(no_jobs, env_of({}), std::nullopt), ConfigError);
}

TEST(Settings, LiveModeNeedsKeys) {
    Overrides o;
    o.model = "m";
    const auto s = resolve_settings(o, env_of({}), std::nullopt);
    EXPECT_THROW(make_environment_factory(s, env_of({})), ConfigError);
    EXPECT_THROW(make_environment_factory(s, env_of({{"OPENAI_API_KEY", "k"}})), ConfigError);  // search key missing
    EXPECT_NO_THROW(make_environment_factory(s, env_of({{"OPENAI_API_KEY", "k"}, {"SERPER_API_KEY", "s"}})));

    const auto r = invoke({"run", "--task", "q", "--model", "m", "--out", "/nonexistent/never"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("OPENAI_API_KEY"), std::string::npos);
}

// ---- task files ------------------------------------------------------------------

TEST(TaskFile, ParsesRowsAndRejectsBadOnes) {
    const auto tasks = parse_task_lines("{\"id\": \"a\", \"question\": \"q1\", \"answer\": \"x\"}\n\n"
                                        "{\"id\": \"b\", \"question\": \"q2\"}\n");
    ASSERT_EQ(tasks.size(), 2u);
    EXPECT_EQ(tasks[0].answer, "x");
    EXPECT_FALSE(tasks[1].answer.has_value());

    for (const char* bad : {"{\"id\": \"a\", \"question\": \"q\"}\n{\"id\": \"a\", \"question\": \"r\"}",
                            "{\"id\": \"a\", \"question\": \"  \"}", "{\"id\": \"a\"}", "not json",
                            "{\"question\": \"q\"}"}) {
        EXPECT_THROW(parse_task_lines(bad), ConfigError) << bad;
    }
    EXPECT_THROW(load_task_file("/nonexistent/tasks.jsonl"), std::exception);
}

// ---- run ------------------------------------------------------------------------

TEST(RunCommand, SingleMockTask) {
    TempDir dir("single");
    tools::write_search_fixture(dir / "fx", "2+2?", {{"Four", "https://example.org/4", "2+2 is 4", {}, {}}});
    const auto r = invoke({"run", "--task", "2+2?", "--mock", (dir / "fx").string(), "--out", (dir / "out").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_TRUE(fs::exists(dir / "out/trajectories/task.json"));
    const auto rec = trajectory::load_record(read_file(dir / "out/trajectories/task.json"));
    EXPECT_GE(rec.steps.size(), 1u);
    EXPECT_EQ(rec.final_answer, "Four");
    const auto report = load_json(dir / "out/report.json");
    EXPECT_GE(report["tasks"][0]["steps"].get<int>(), 1);
    EXPECT_TRUE(report["aggregate"]["pass_at_1"].is_null());  // no gold answer
}

TEST(RunCommand, MockRunNeverTouchesTheNetwork) {
    TempDir dir("no_net");
    const auto before = net::CurlTransport::requests_attempted();
    const auto r = invoke({"run", "--task", "anything at all", "--mock", (dir / "fx").string(), "--out",
                        (dir / "out").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(net::CurlTransport::requests_attempted(), before);
}

// Ten tasks whose fixtures lead the mock model to the gold answer for exactly
// seven of them; the expected pass rate is that scripted count over ten.
TEST(RunCommand, TenTaskBenchmarkPassAtOne) {
    TempDir dir("bench10");
    std::string lines;
    int scripted_correct = 0;
    for (int i = 0; i < 10; ++i) {
        const std::string q = "Which entity is number " + std::to_string(i) + "?";
        const bool right = i % 3 != 2;  // 0,1,3,4,6,7,9
        scripted_correct += right;
        const std::string title = right ? "Entity " + std::to_string(i) : "Decoy " + std::to_string(i);
        tools::write_search_fixture(dir / "fx", q, {{title, "https://example.org/" + std::to_string(i), "s", {}, {}}});
        lines += nlohmann::json{{"id", "t" + std::to_string(i)}, {"question", q}, {"answer", "Entity " + std::to_string(i)}}
                     .dump() +
                 "\n";
    }
    ASSERT_EQ(scripted_correct, 7);
    write(dir / "tasks.jsonl", lines);

    const auto r = invoke({"run", "--task-file", (dir / "tasks.jsonl").string(), "--mock", (dir / "fx").string(), "--out",
                        (dir / "out").string(), "--jobs", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = load_json(dir / "out/report.json");
    EXPECT_EQ(report["aggregate"]["judged"], 10);
    EXPECT_EQ(report["aggregate"]["judged_correct"], scripted_correct);
    EXPECT_EQ(report["aggregate"]["pass_at_1"].get<double>(), scripted_correct / 10.0);
    EXPECT_NE(r.out.find("pass@1: 0.70 (7/10)"), std::string::npos) << r.out;
    for (int i = 0; i < 10; ++i) {
        EXPECT_TRUE(fs::exists(dir / ("out/trajectories/t" + std::to_string(i) + ".json")));
        EXPECT_EQ(report["tasks"][i]["judged"], i % 3 != 2 ? "correct" : "incorrect");
    }
}

TEST(RunCommand, EngineErrorsAreRecordedPerTask) {
    std::vector<TaskSpec> tasks = {{"a", "q1", std::nullopt}, {"b", "q2", std::nullopt}};
    Settings s;
    const auto factory = [](const TaskSpec& t) -> Environment {
        if (t.id == "a") throw std::runtime_error("backend down");
        auto model = std::make_shared<backend::HeuristicBackend>();
        return {model, model, fanout::testing::echo_registry(), std::make_shared<FrozenClock>()};
    };
    const auto report = run_tasks(tasks, s, factory);
    ASSERT_EQ(report.tasks.size(), 2u);
    EXPECT_EQ(report.tasks[0].error, "backend down");
    EXPECT_TRUE(report.tasks[1].record.has_value());
    EXPECT_EQ(report.errors(), 1u);
    EXPECT_EQ(report.to_json()["aggregate"]["completed"], 1);
}

TEST(RunCommand, RequiresATask) {
    EXPECT_EQ(invoke({"run", "--mock", "x"}).code, 2);
    EXPECT_NE(invoke({}).code, 0);
    EXPECT_NE(invoke({"run", "--task", "a", "--task-file", "b"}).code, 0);
}

// ---- export ---------------------------------------------------------------------

TEST(ExportCommand, OnlyAnswerTerminatedRecordsAreAttempted) {
    TempDir dir("export3");
    write_record(dir / "traj/a.json", synthetic_record("a", {2}, "Claus", "Claus"));
    write_record(dir / "traj/b.json", synthetic_record("b", {1, 2}, "Claus", std::nullopt));
    write_record(dir / "traj/c.json", synthetic_record("c", {3}, std::nullopt, "Claus"));
    const auto r = invoke({"export", (dir / "traj").string(), "--mock", (dir / "fx").string(), "--out", (dir / "sft").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = load_json(dir / "sft/summary.json");
    EXPECT_EQ(summary["records"], 3);
    EXPECT_EQ(summary["export_attempts"], 2);
    EXPECT_EQ(summary["kept"], 2);
    EXPECT_EQ(load_jsonl(dir / "sft/kept.jsonl").size(), 2u);

    const auto rows = load_jsonl(dir / "sft/kept.jsonl");
    const auto& messages = rows.at(0)["messages"];
    ASSERT_GE(messages.size(), 4u);
    for (const auto& m : messages) {
        EXPECT_EQ(m.size(), 2u);
        EXPECT_TRUE(m.contains("role") && m.contains("content"));
    }
    EXPECT_EQ(messages[0]["role"], "system");
    EXPECT_EQ(messages[1]["role"], "user");
    EXPECT_EQ(messages[2]["role"], "assistant");
}

// Counts in the export summary must match what the validator and the judge
// say about each record taken on its own.
TEST(ExportCommand, MixedCorpusCountsMatchPerRecordChecks) {
    TempDir dir("export_mixed");
    std::vector<trajectory::TrajectoryRecord> recs;
    for (int i = 0; i < 12; ++i) {
        const std::string id = "r" + std::to_string(i);
        auto r = synthetic_record(id, {1 + i % 3, 2}, i % 4 == 3 ? "Peter" : "Claus", "Claus");
        if (i % 5 == 1) r.steps[0].observations.clear();
        if (i == 10) r.steps[1].envelope.phase_text = "bad <plan> tag";
        recs.push_back(r);
        write_record(dir / ("traj/" + id + ".json"), r);
    }

    std::map<std::string, std::size_t> expected;
    std::size_t expected_kept = 0;
    backend::HeuristicBackend judge;
    for (const auto& r : recs) {
        const auto flaws = trajectory::validate_sft(trajectory::export_sft(r));
        const bool correct = backend::judge(r.task_text, *r.gold_answer, *r.final_answer, judge).correct();
        if (!correct) {
            ++expected["judged_incorrect"];
        } else if (!flaws.empty()) {
            ++expected[std::string(trajectory::to_string(flaws.front().kind))];
        } else {
            ++expected_kept;
        }
    }

    const auto r = invoke({"export", (dir / "traj").string(), "--mock", (dir / "fx").string(), "--out", (dir / "sft").string(),
                        "--jobs", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = load_json(dir / "sft/summary.json");
    EXPECT_EQ(summary["kept"], expected_kept);
    std::map<std::string, std::size_t> got;
    for (const auto& [k, v] : summary["reasons"].items()) got[k] = v.get<std::size_t>();
    EXPECT_EQ(got, expected);
    EXPECT_EQ(load_jsonl(dir / "sft/kept.jsonl").size() + load_jsonl(dir / "sft/rejected.jsonl").size(), recs.size());
    EXPECT_GT(expected_kept, 0u);
    EXPECT_GE(expected.size(), 2u);
}

// ---- report ---------------------------------------------------------------------

TEST(ReportCommand, TwoStepsOfThree) {
    TempDir dir("report_33");
    write_record(dir / "traj/a.json", synthetic_record("a", {3, 3}, std::nullopt, std::nullopt));
    const auto r = invoke({"report", (dir / "traj").string(), "--out", (dir / "rep").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("tool calls per step: 3.00"), std::string::npos) << r.out;
    const auto m = load_json(dir / "rep/metrics.json");
    EXPECT_EQ(m["corpus"]["tool_calls_per_step"]["display"], "3.00");
    EXPECT_EQ(read_file(dir / "rep/traj_tool_calls_per_step.csv"), "tool_calls_per_step,steps\n3,2\n");
}

// Histogram sums recounted from the records themselves; output is
// byte-identical across reruns.
TEST(ReportCommand, HistogramIdentityAndStableOutput) {
    TempDir dir("report_many");
    std::mt19937 rng(5);
    std::int64_t calls = 0, steps = 0;
    std::map<std::string, std::int64_t> calls_by_bench;
    for (int i = 0; i < 30; ++i) {
        std::vector<int> per_step(1 + rng() % 6);
        for (auto& n : per_step) n = 1 + static_cast<int>(rng() % 5);
        const std::string bench = i % 2 ? "gaia" : "hle";
        auto rec = synthetic_record("r" + std::to_string(i), per_step, std::nullopt, std::nullopt);
        for (int n : per_step) calls += n;
        for (int n : per_step) calls_by_bench[bench] += n;
        steps += static_cast<std::int64_t>(per_step.size());
        write_record(dir / ("traj/" + bench + "/r" + std::to_string(i) + ".json"), rec);
    }
    ASSERT_EQ(invoke({"report", (dir / "traj").string(), "--out", (dir / "rep1").string()}).code, 0);
    ASSERT_EQ(invoke({"report", (dir / "traj").string(), "--out", (dir / "rep2").string()}).code, 0);

    const auto m = load_json(dir / "rep1/metrics.json");
    EXPECT_EQ(m["corpus"]["total_tool_calls"], calls);
    EXPECT_EQ(m["corpus"]["total_steps"], steps);
    for (const std::string bench : {"gaia", "hle"}) {
        std::istringstream csv(read_file(dir / ("rep1/" + bench + "_tool_calls_per_step.csv")));
        std::string line;
        std::getline(csv, line);
        std::int64_t recount = 0;
        while (std::getline(csv, line)) {
            const auto comma = line.find(',');
            recount += std::stoll(line.substr(0, comma)) * std::stoll(line.substr(comma + 1));
        }
        EXPECT_EQ(recount, calls_by_bench[bench]) << bench;
    }
    for (const auto& entry : fs::directory_iterator(dir / "rep1")) {
        EXPECT_EQ(read_file(entry.path()), read_file(dir / "rep2" / entry.path().filename())) << entry.path();
    }
}

TEST(ReportCommand, EmptyDirectoryFails) {
    TempDir dir("report_empty");
    EXPECT_NE(invoke({"report", dir.path().string(), "--out", (dir / "rep").string()}).code, 0);
}

// ---- validate-plan ----------------------------------------------------------------

TEST(ValidatePlanCommand, AcceptsAndRejects) {
    TempDir dir("plans");
    write(dir / "ok.txt", fanout::testing::make_plan_text(2, 3));
    write(dir / "bad.txt", "## Goal 1: nothing here\n");
    const auto ok = invoke({"validate-plan", (dir / "ok.txt").string()});
    EXPECT_EQ(ok.code, 0) << ok.err;
    EXPECT_NE(ok.out.find("plan ok: 2 goals, 6 paths"), std::string::npos);
    const auto bad = invoke({"validate-plan", (dir / "bad.txt").string()});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("malformed plan"), std::string::npos);
}
