#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fanout/envelope.hpp"
#include "fanout/model.hpp"
#include "fanout/scheduler.hpp"
#include "fanout/tool_call.hpp"

namespace fanout::trajectory {

enum class Termination { final_answer, plan_resolved, budget_exhausted };

std::string_view to_string(Termination t);
Termination termination_from_string(std::string_view s);

struct PlanVersion {
    std::uint64_t version = 0;
    std::string text;
    std::vector<plan::Edge> edges;

    friend bool operator==(const PlanVersion&, const PlanVersion&) = default;
};

/// One tool-executing step. observations[k] answers envelope.tool_calls[k].
struct StepRecord {
    int index = 0;  // 1-based
    backend::ActionEnvelope envelope;
    std::vector<tools::Observation> observations;
    scheduler::Frontier frontier;
    scheduler::Outcomes outcomes;
    std::chrono::milliseconds duration{0};
    /// Progress summary produced right after this step, if any.
    std::optional<std::string> summary;
    std::optional<std::string> refinement_error;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct RecordConfig {
    int max_steps = 40;
    int summary_interval = 8;
    std::string mode = "strict";
    int max_parallel_goals = 5;
    int max_tool_calls_per_step = 5;
    std::int64_t per_call_timeout_ms = 60000;
    int max_concurrent_dispatch = 5;

    friend bool operator==(const RecordConfig&, const RecordConfig&) = default;
};

struct TrajectoryRecord {
    std::string task_id;
    std::string task_text;
    std::optional<std::string> gold_answer;
    RecordConfig config;
    std::vector<PlanVersion> plan_versions;
    std::vector<StepRecord> steps;
    Termination termination = Termination::budget_exhausted;
    std::optional<std::string> final_answer;
    std::chrono::milliseconds wall_time{0};
    /// Full dialogue state at termination.
    std::vector<backend::DialogueTurn> dialogue;

    friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

}  // namespace fanout::trajectory
