#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string_view>
#include <vector>

#include "fanout/plan.hpp"

namespace fanout::scheduler {

using plan::NodeId;
using plan::NodeSet;
using plan::PlanGraph;

enum class Mode { strict, aggressive };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct SchedulingPolicy {
    Mode mode = Mode::strict;
    int max_parallel_goals = 5;
    int max_tool_calls_per_step = 5;

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

struct Frontier {
    std::vector<NodeId> nodes;

    bool empty() const { return nodes.empty(); }
    std::size_t size() const { return nodes.size(); }
    bool contains(const NodeId& id) const;
    friend bool operator==(const Frontier&, const Frontier&) = default;
};

enum class Outcome { succeeded, failed };
std::string_view to_string(Outcome o);

using Outcomes = std::map<NodeId, Outcome>;

/// Selects this step's frontier: per goal, the lowest-index pending path whose
/// prerequisites are met, ordered by (goal, path) and cut to
/// policy.max_parallel_goals. Aggressive mode also accepts a path whose unmet
/// prerequisites are all in progress according to the graph statuses.
/// Throws UnknownNode for ids absent from the graph and std::invalid_argument
/// when pending and completed overlap.
Frontier ready_set(const PlanGraph& graph, const NodeSet& pending, const NodeSet& completed,
                   const SchedulingPolicy& policy);

struct Transition {
    NodeSet pending;
    NodeSet completed;
    std::vector<NodeId> resolved_goals;  // goals that gained a succeeded path
    std::vector<NodeId> blocked_goals;   // goals left without pending paths
};

/// Applies path outcomes. A succeeded path completes itself and its goal and
/// retires the goal's remaining paths; a failed path becomes terminal. A goal
/// that is not completed and has no pending path left is blocked and leaves
/// pending. Throws UnknownNode for outcome ids that are not pending paths.
Transition mark_complete(const NodeSet& pending, const NodeSet& completed, const Outcomes& outcomes);

namespace detail {

inline constexpr std::size_t kKernelCapacity = 32;

/// Bitmask form of the readiness predicate. Each node carries a prerequisite
/// mask, an "earlier siblings" mask (the node waits while any of those is
/// pending) and a blocker mask (the node is skipped once any of those is
/// completed). Only candidate nodes are ever selected.
class ReadinessKernel {
public:
    using Mask = std::uint64_t;

    explicit ReadinessKernel(std::size_t node_count);
    explicit ReadinessKernel(const PlanGraph& graph);

    std::size_t size() const { return size_; }
    Mask candidates() const { return candidates_; }

    void set_candidate(std::size_t i, bool on);
    void set_prerequisites(std::size_t i, Mask m) { prereq_[i] = m; }
    void set_earlier(std::size_t i, Mask m) { earlier_[i] = m; }
    void set_blockers(std::size_t i, Mask m) { blockers_[i] = m; }
    Mask prerequisites(std::size_t i) const { return prereq_[i]; }

    /// Every eligible candidate, unbounded.
    Mask ready(Mask pending, Mask completed, Mask in_progress, Mode mode) const;

    // Graph-backed kernels only.
    std::size_t index_of(const NodeId& id) const;
    const NodeId& node(std::size_t i) const { return ids_[i]; }
    Mask mask_of(const NodeSet& nodes) const;
    Mask in_progress_mask() const { return in_progress_; }

private:
    std::size_t size_ = 0;
    Mask candidates_ = 0;
    Mask in_progress_ = 0;
    std::array<Mask, kKernelCapacity> prereq_{};
    std::array<Mask, kKernelCapacity> earlier_{};
    std::array<Mask, kKernelCapacity> blockers_{};
    std::vector<NodeId> ids_;
};

/// Keeps the lowest `limit` set bits.
ReadinessKernel::Mask keep_lowest(ReadinessKernel::Mask m, int limit);

}  // namespace detail

}  // namespace fanout::scheduler
