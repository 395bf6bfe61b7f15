#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fanout/model.hpp"
#include "fanout/record.hpp"

namespace fanout::trajectory {

// ---- JSON -------------------------------------------------------------------

class RecordFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::ordered_json to_json(const TrajectoryRecord& record);
/// Throws RecordFormatError on missing or mistyped fields.
TrajectoryRecord record_from_json(const nlohmann::ordered_json& j);

/// Two-space indented JSON with a trailing newline. Byte-stable for equal records.
std::string dump_record(const TrajectoryRecord& record);
TrajectoryRecord load_record(std::string_view text);

// ---- metrics ------------------------------------------------------------------

/// Non-negative fraction kept in lowest terms; a zero denominator is rejected.
class Rational {
public:
    Rational(std::int64_t num = 0, std::int64_t den = 1);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
    /// "7/3", or "3" for integers.
    std::string to_string() const;
    /// Decimal rounded half up to `places` digits, computed exactly.
    std::string to_fixed(int places) const;

    friend Rational operator*(const Rational& a, const Rational& b);
    friend bool operator==(const Rational&, const Rational&) = default;

private:
    std::int64_t num_;
    std::int64_t den_;
};

/// Published per-step tool usage of two sequential baselines, kept for
/// comparison in reports. They are reference values, not measurements.
inline constexpr double kOAgentsToolCallsPerStep = 0.83;
inline constexpr double kOwlRoleplayingToolCallsPerStep = 0.85;

struct Metrics {
    /// Tool-executing steps; the planning turn is not a step.
    std::int64_t total_steps = 0;
    /// Every call in every envelope, final_answer included.
    std::int64_t total_tool_calls = 0;
    /// total_tool_calls / total_steps; 0 when there are no steps.
    Rational tool_calls_per_step;
    /// Calls made at each step, in step order.
    std::vector<std::int64_t> per_step;
    /// Number of steps that made exactly k calls.
    std::map<std::int64_t, std::int64_t> distribution;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

Metrics compute_metrics(const TrajectoryRecord& record);

struct CorpusMetrics {
    std::int64_t trajectories = 0;
    std::int64_t total_steps = 0;
    std::int64_t total_tool_calls = 0;
    Rational tool_calls_per_step;
    Rational mean_steps;
    std::map<std::int64_t, std::int64_t> calls_distribution;  // calls per step -> steps
    std::map<std::int64_t, std::int64_t> steps_distribution;  // steps per run -> runs

    friend bool operator==(const CorpusMetrics&, const CorpusMetrics&) = default;
};

CorpusMetrics aggregate_metrics(const std::vector<Metrics>& metrics);

nlohmann::ordered_json to_json(const Metrics& m);
nlohmann::ordered_json to_json(const CorpusMetrics& m);

// ---- SFT export -----------------------------------------------------------------

struct SftMessage {
    std::string role;  // "system", "user" or "assistant"
    std::string content;

    friend bool operator==(const SftMessage&, const SftMessage&) = default;
};

struct SftDialogue {
    std::vector<SftMessage> messages;

    friend bool operator==(const SftDialogue&, const SftDialogue&) = default;
};

nlohmann::ordered_json to_json(const SftDialogue& d);
SftDialogue dialogue_from_json(const nlohmann::ordered_json& j);

class ExportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SftExportOptions {
    /// Tool list rendered into the training system prompt; empty means the
    /// standard web_search / crawl_page / final_answer set.
    std::string tool_list;
    int max_tool_calls = 5;
};

/// System prompt, task message, then one (assistant, user) pair per step.
/// The first step's action carries the initial plan as its <plan> phase, and
/// a step that follows a refinement carries that summary as its <summary>
/// phase. Throws ExportError unless the record ended with a final answer.
SftDialogue export_sft(const TrajectoryRecord& record, const SftExportOptions& options = {});

enum class FlawKind { invalid_dialogue_hierarchy, missing_action_label, incomplete_turn_segmentation };

std::string_view to_string(FlawKind k);

struct Flaw {
    FlawKind kind;
    std::size_t message_index;
    std::string detail;
};

/// Structural checks on an exported dialogue:
///  - hierarchy: system, user, then strict assistant/user alternation, known roles only;
///  - action label: each assistant message opens with exactly one of <plan>,
///    <think>, <summary>, closes it, and has no other phase tag;
///  - turn segmentation: each assistant message holds exactly one trailing
///    <tools> block that parses as an action, and is answered by a user turn.
std::vector<Flaw> validate_sft(const SftDialogue& dialogue, int max_tool_calls = 5);

// ---- filtering ------------------------------------------------------------------

enum class RejectReason {
    missing_gold_answer,
    not_answer_terminated,
    judged_incorrect,
    judge_error,
    invalid_dialogue_hierarchy,
    missing_action_label,
    incomplete_turn_segmentation,
};

std::string_view to_string(RejectReason r);

struct Rejection {
    std::size_t index;  // position in the input batch
    RejectReason reason;
    std::string detail;
};

struct KeptRecord {
    std::size_t index;
    SftDialogue dialogue;
};

struct FilterResult {
    std::vector<KeptRecord> kept;
    std::vector<Rejection> rejected;  // ascending index
    std::size_t input_count = 0;
    std::size_t judged_correct = 0;  // records that passed the correctness stage

    std::map<std::string, std::size_t> reason_counts() const;
};

struct FilterOptions {
    /// Records judged at once; the judge backend must be thread-safe above 1.
    int concurrency = 1;
    SftExportOptions export_options;
};

/// Stage one keeps records the judge marks correct; stage two keeps those
/// whose export passes validate_sft. Judge failures reject only their record.
FilterResult filter_corpus(const std::vector<TrajectoryRecord>& records, backend::ModelBackend& judge,
                           const FilterOptions& options = {});

}  // namespace fanout::trajectory
