// Micro benchmarks for the hot paths of one agent step.

#include <benchmark/benchmark.h>

#include "fanout/engine.hpp"
#include "fanout/envelope.hpp"
#include "fanout/plan.hpp"
#include "fanout/scheduler.hpp"
#include "fanout/tools.hpp"
#include "fanout/trajectory.hpp"
#include "test_support.hpp"

using namespace fanout;

namespace {

void BM_ReadySet(benchmark::State& state) {
    const int goals = static_cast<int>(state.range(0));
    auto g = plan::parse_plan(testing::make_plan_text(goals, 5));
    for (int i = 1; i < goals; ++i) g.add_edge(plan::NodeId::goal_node(i), plan::NodeId::path_node(i + 1, 2));
    const auto pending = engine::pending_from_graph(g);
    scheduler::SchedulingPolicy policy;
    for (auto _ : state) {
        benchmark::DoNotOptimize(scheduler::ready_set(g, pending, {}, policy));
    }
}
BENCHMARK(BM_ReadySet)->Arg(1)->Arg(3)->Arg(5);

void BM_ParsePlan(benchmark::State& state) {
    const auto text = testing::make_plan_text(5, 5);
    for (auto _ : state) benchmark::DoNotOptimize(plan::parse_plan(text));
}
BENCHMARK(BM_ParsePlan);

void BM_ParseEnvelopeCaseStudy(benchmark::State& state) {
    const auto reply = testing::read_data("case_study/step_02.txt");
    for (auto _ : state) benchmark::DoNotOptimize(backend::parse_envelope(reply));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * reply.size()));
}
BENCHMARK(BM_ParseEnvelopeCaseStudy);

void BM_SerializeEnvelope(benchmark::State& state) {
    const auto env = backend::parse_envelope(testing::read_data("case_study/step_02.txt"));
    for (auto _ : state) benchmark::DoNotOptimize(backend::serialize_envelope(env));
}
BENCHMARK(BM_SerializeEnvelope);

// Integrating one more step into a dialogue that already holds `range` steps.
void BM_Integrate(benchmark::State& state) {
    auto tools = testing::echo_registry();
    auto s = engine::initial_state("task", *tools);
    backend::ActionEnvelope env;
    env.phase_text = "search in parallel";
    std::vector<tools::Observation> obs;
    for (std::size_t i = 0; i < 5; ++i) {
        env.tool_calls.push_back({"web_search", {{"query", "q" + std::to_string(i)}}, std::nullopt});
        obs.push_back({i, std::string(2000, 'x'), tools::ObservationStatus::ok, {}});
    }
    for (int i = 0; i < state.range(0); ++i) s = engine::integrate(s, env, obs);
    for (auto _ : state) benchmark::DoNotOptimize(engine::integrate(s, env, obs));
}
BENCHMARK(BM_Integrate)->Arg(1)->Arg(20)->Arg(40);

void BM_CompactView(benchmark::State& state) {
    auto tools = testing::echo_registry();
    auto s = engine::initial_state("task", *tools);
    backend::ActionEnvelope env;
    env.phase_text = "t";
    env.tool_calls.push_back({"web_search", {{"query", "q"}}, std::nullopt});
    for (int i = 0; i < 40; ++i) s = engine::integrate(s, env, {{0, std::string(20000, 'y'), tools::ObservationStatus::ok, {}}});
    for (auto _ : state) benchmark::DoNotOptimize(engine::compact_view(s.turns, 200000));
}
BENCHMARK(BM_CompactView);

void BM_TruncatePage(benchmark::State& state) {
    std::string page;
    for (int i = 0; i < 100000; ++i) page += i % 3 ? "a" : "\xC3\xA9";
    for (auto _ : state) benchmark::DoNotOptimize(tools::truncate_page(page));
}
BENCHMARK(BM_TruncatePage);

// Whole engine run on the goal-by-path workload, scripted backend, echo tools.
void BM_EngineWorkload(benchmark::State& state) {
    const int parallel = static_cast<int>(state.range(0));
    engine::EngineConfig cfg;
    cfg.policy.max_parallel_goals = parallel;
    auto tools = testing::echo_registry();
    for (auto _ : state) {
        engine::Engine e(cfg, testing::workload_backend(5, 5, 5), tools, std::make_shared<FrozenClock>());
        benchmark::DoNotOptimize(e.run("five by five"));
    }
}
BENCHMARK(BM_EngineWorkload)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_DumpRecord(benchmark::State& state) {
    engine::EngineConfig cfg;
    engine::Engine e(cfg, testing::workload_backend(5, 5, 5), testing::echo_registry(), std::make_shared<FrozenClock>());
    const auto rec = e.run("five by five");
    for (auto _ : state) benchmark::DoNotOptimize(trajectory::dump_record(rec));
}
BENCHMARK(BM_DumpRecord);

}  // namespace
BENCHMARK_MAIN();
