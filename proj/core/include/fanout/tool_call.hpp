#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fanout/plan.hpp"

namespace fanout::tools {

/// Argument name/value pairs in the order the model wrote them.
using Arguments = std::vector<std::pair<std::string, std::string>>;

const std::string* find_argument(const Arguments& args, std::string_view name);

inline constexpr std::string_view kFinalAnswer = "final_answer";

struct ToolCall {
    std::string name;
    Arguments arguments;
    /// Plan path this call works on, when the model says so.
    std::optional<plan::NodeId> path;

    friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

enum class ObservationStatus { ok, error };

std::string_view to_string(ObservationStatus s);
ObservationStatus observation_status_from_string(std::string_view s);

struct Observation {
    std::size_t call_index = 0;
    std::string content;
    ObservationStatus status = ObservationStatus::ok;
    std::chrono::milliseconds latency{0};

    bool ok() const { return status == ObservationStatus::ok; }
    friend bool operator==(const Observation&, const Observation&) = default;
};

/// {'query': 'x', 'url': "it's"} as Python prints a dict of strings.
std::string python_dict_repr(const Arguments& args);

}  // namespace fanout::tools
