#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fanout/tool_call.hpp"

namespace fanout::backend {

enum class Phase { plan, think, summary };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

/// One assistant action: a phase marker with its text and 1..N tool calls.
struct ActionEnvelope {
    Phase phase = Phase::think;
    std::string phase_text;
    std::vector<tools::ToolCall> tool_calls;

    bool is_final_answer() const;
    friend bool operator==(const ActionEnvelope&, const ActionEnvelope&) = default;
};

class EnvelopeParseError : public std::runtime_error {
public:
    EnvelopeParseError(const std::string& message, std::string span);
    const std::string& span() const { return span_; }

private:
    std::string span_;
};

inline constexpr int kDefaultMaxToolCalls = 5;

/// Accepts the JSON object form {"think": ..., "tools": [...]} (code fences and
/// trailing commas tolerated) and the tagged form
/// <think|plan|summary>...</...><tools>[...]</tools>. Enforces 1..max_calls
/// calls and final_answer exclusivity. A plain-string argument to
/// final_answer becomes {"answer": ...}; non-string argument values are kept
/// as their JSON text.
ActionEnvelope parse_envelope(std::string_view reply, int max_calls = kDefaultMaxToolCalls);

/// Canonical tagged form. parse_envelope(serialize_envelope(e)) == e.
std::string serialize_envelope(const ActionEnvelope& envelope);

/// The JSON array inside <tools>...</tools>, with ", " and ": " separators.
std::string serialize_tool_calls(const std::vector<tools::ToolCall>& calls);

nlohmann::ordered_json tool_call_to_json(const tools::ToolCall& call);
tools::ToolCall tool_call_from_json(const nlohmann::ordered_json& j);

/// JSON text with ", " and ": " separators and no line breaks.
std::string dump_spaced(const nlohmann::ordered_json& j);

}  // namespace fanout::backend
