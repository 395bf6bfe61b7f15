#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fanout/clock.hpp"
#include "fanout/envelope.hpp"
#include "fanout/model.hpp"
#include "fanout/plan.hpp"
#include "fanout/record.hpp"
#include "fanout/scheduler.hpp"
#include "fanout/tools.hpp"

namespace fanout::engine {

using backend::ActionEnvelope;
using backend::DialogueTurn;
using backend::ModelBackend;
using plan::NodeSet;
using plan::PlanGraph;
using scheduler::Frontier;
using tools::Observation;
using tools::ToolRegistry;

struct EngineConfig {
    int max_steps = 40;
    int summary_interval = 8;
    scheduler::SchedulingPolicy policy;
    std::chrono::milliseconds per_call_timeout{60000};
    int max_concurrent_dispatch = 5;
    /// Characters of dialogue sent per request before old tool turns are elided.
    std::size_t context_char_budget = 400000;

    /// Throws std::invalid_argument.
    void validate() const;
    trajectory::RecordConfig to_record() const;
};

struct AgentState {
    std::vector<DialogueTurn> turns;
    int step_index = 0;
    NodeSet pending;
    NodeSet completed;

    friend bool operator==(const AgentState&, const AgentState&) = default;
};

class CountMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SummaryParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// System prompt (with the tool list) followed by the task message.
AgentState initial_state(const std::string& task, const ToolRegistry& tools);

/// Tool turn text: one "Results for tool call ..." block per call, in call order.
std::string render_observations(const ActionEnvelope& envelope, const std::vector<Observation>& observations);

/// Appends the assistant action and the tool turn and advances step_index.
/// Throws CountMismatch when the observation count differs from the call count.
AgentState integrate(const AgentState& state, const ActionEnvelope& envelope,
                     const std::vector<Observation>& observations);

/// Dialogue to send when the full text exceeds `char_budget`: the oldest tool
/// turns shrink to their first 500 characters plus an elision marker until the
/// total fits. Other turns are never touched.
std::vector<DialogueTurn> compact_view(const std::vector<DialogueTurn>& turns, std::size_t char_budget);

inline constexpr std::size_t kElidedPrefixChars = 500;

/// "- Path g.p (Goal g: title): approach | Success: criteria" per frontier node.
std::string render_frontier(const PlanGraph& graph, const Frontier& frontier);

struct ActContext {
    const ToolRegistry* tools = nullptr;
    std::string task;
    int max_tool_calls = backend::kDefaultMaxToolCalls;
    std::size_t context_char_budget = 400000;
};

std::string render_execution_prompt(const ActContext& ctx, const PlanGraph& graph, const Frontier& frontier);

/// Asks the backend for the next action. One retry with a format reminder,
/// then EnvelopeParseError propagates.
ActionEnvelope select_actions(const AgentState& state, const PlanGraph& graph, const Frontier& frontier,
                              ModelBackend& backend, const ActContext& ctx);

/// Runs every call concurrently (at most max_concurrent_dispatch at once).
/// Results keep call order; a call that outlives per_call_timeout becomes an
/// error observation.
std::vector<Observation> dispatch(const std::vector<tools::ToolCall>& calls,
                                  const std::shared_ptr<const ToolRegistry>& tools,
                                  const std::shared_ptr<const Clock>& clock, const EngineConfig& config);

/// Path outcomes from calls tagged with a frontier node: any ok observation
/// means succeeded, all errors mean failed. Untagged calls yield nothing.
scheduler::Outcomes attribute_outcomes(const Frontier& frontier, const ActionEnvelope& envelope,
                                       const std::vector<Observation>& observations);

enum class SummaryStatus { completed, in_progress, blocked };

struct GoalReport {
    std::optional<SummaryStatus> status;
    std::optional<std::string> result;
    std::optional<int> completed_up_to;
};

struct SummaryReport {
    std::map<int, GoalReport> goals;
    std::vector<std::pair<int, std::string>> next_paths;
};

/// Reads "### Goal N:" status sections, "Goal N: resolved, result is ..."
/// and "completed up to path n" lines, and the "Next Parallel Sub-Paths"
/// list. Throws SummaryParseError when none of these are present.
SummaryReport parse_summary(std::string_view summary);

/// The refined plan, version + 1. Succeeded paths are never revived and each
/// goal keeps at most five paths; surplus proposals are dropped.
PlanGraph apply_summary(const PlanGraph& graph, const SummaryReport& report);

/// Text inside <summary> tags if present, else the trimmed reply.
std::string extract_summary(std::string_view reply);

struct Refinement {
    PlanGraph graph;
    std::string summary;
    std::optional<std::string> error;
};

/// Summarizes the trajectory and refines the plan. A summary that still fails
/// to parse after one retry leaves the graph unchanged and reports the error.
Refinement refine(const PlanGraph& graph, const AgentState& state, ModelBackend& backend, const std::string& task,
                  std::size_t context_char_budget = 400000);

/// Nodes still to run: goals neither resolved nor blocked, with their
/// non-terminal paths.
NodeSet pending_from_graph(const PlanGraph& graph);
/// Resolved goals and succeeded paths.
NodeSet completed_from_graph(const PlanGraph& graph);

struct RunOptions {
    std::string task_id = "task";
    std::optional<std::string> gold_answer;
};

/// One run of the plan / act / integrate / refine loop.
class Engine {
public:
    Engine(EngineConfig config, std::shared_ptr<ModelBackend> backend, std::shared_ptr<const ToolRegistry> tools,
           std::shared_ptr<const Clock> clock = std::make_shared<SteadyClock>());

    /// Throws MalformedPlan (after one re-prompt), EnvelopeParseError (after
    /// one retry) and BackendUnavailable. Running out of steps is a normal
    /// termination.
    trajectory::TrajectoryRecord run(const std::string& task, const RunOptions& options = {}) const;

    const EngineConfig& config() const { return config_; }

private:
    PlanGraph make_plan(AgentState& state, const std::string& task) const;

    EngineConfig config_;
    std::shared_ptr<ModelBackend> backend_;
    std::shared_ptr<const ToolRegistry> tools_;
    std::shared_ptr<const Clock> clock_;
};

}  // namespace fanout::engine
