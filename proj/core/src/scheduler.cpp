#include "fanout/scheduler.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>
#include <string>

namespace fanout::scheduler {

std::string_view to_string(Mode m) { return m == Mode::strict ? "strict" : "aggressive"; }

Mode mode_from_string(std::string_view s) {
    if (s == "strict") return Mode::strict;
    if (s == "aggressive") return Mode::aggressive;
    throw std::invalid_argument("unknown scheduling mode '" + std::string(s) + "'");
}

std::string_view to_string(Outcome o) { return o == Outcome::succeeded ? "succeeded" : "failed"; }

void SchedulingPolicy::validate() const {
    if (max_parallel_goals < 1 || max_parallel_goals > plan::kMaxGoals) {
        throw std::invalid_argument("max_parallel_goals must be in 1..5, got " + std::to_string(max_parallel_goals));
    }
    if (max_tool_calls_per_step < 1) {
        throw std::invalid_argument("max_tool_calls_per_step must be >= 1, got " +
                                    std::to_string(max_tool_calls_per_step));
    }
}

bool Frontier::contains(const NodeId& id) const {
    return std::find(nodes.begin(), nodes.end(), id) != nodes.end();
}

namespace detail {

ReadinessKernel::ReadinessKernel(std::size_t node_count) : size_(node_count) {
    if (node_count > kKernelCapacity) throw std::invalid_argument("readiness kernel supports at most 32 nodes");
}

ReadinessKernel::ReadinessKernel(const PlanGraph& graph) : ReadinessKernel(graph.nodes().size()) {
    ids_ = graph.nodes();
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const NodeId& id = ids_[i];
        if (id.is_goal()) {
            const auto& g = graph.goal(id.goal);
            bool active = g.status == plan::GoalStatus::in_progress;
            for (const auto& p : g.paths) active = active || p.status == plan::PathStatus::in_progress;
            if (active) in_progress_ |= Mask{1} << i;
            continue;
        }
        candidates_ |= Mask{1} << i;
        if (graph.path(id).status == plan::PathStatus::in_progress) in_progress_ |= Mask{1} << i;
        const std::size_t goal_index = index_of(id.parent());
        blockers_[i] = Mask{1} << goal_index;
        for (std::size_t j = goal_index + 1; j < i; ++j) earlier_[i] |= Mask{1} << j;
    }
    for (const auto& [from, to] : graph.edges()) {
        const std::size_t f = index_of(from);
        if (to.is_path()) {
            prereq_[index_of(to)] |= Mask{1} << f;
            continue;
        }
        for (const auto& p : graph.goal(to.goal).paths) prereq_[index_of(p.id)] |= Mask{1} << f;
    }
}

void ReadinessKernel::set_candidate(std::size_t i, bool on) {
    if (on) {
        candidates_ |= Mask{1} << i;
    } else {
        candidates_ &= ~(Mask{1} << i);
    }
}

ReadinessKernel::Mask ReadinessKernel::ready(Mask pending, Mask completed, Mask in_progress, Mode mode) const {
    Mask result = 0;
    Mask todo = candidates_ & pending;
    while (todo) {
        const int i = std::countr_zero(todo);
        todo &= todo - 1;
        if (pending & earlier_[i]) continue;
        if (completed & blockers_[i]) continue;
        Mask unmet = prereq_[i] & ~completed;
        if (mode == Mode::aggressive) unmet &= ~in_progress;
        if (unmet == 0) result |= Mask{1} << i;
    }
    return result;
}

std::size_t ReadinessKernel::index_of(const NodeId& id) const {
    // ids_ is sorted because PlanGraph::nodes() yields (goal, path) order
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw plan::UnknownNode(id);
    return static_cast<std::size_t>(it - ids_.begin());
}

ReadinessKernel::Mask ReadinessKernel::mask_of(const NodeSet& nodes) const {
    Mask m = 0;
    for (const auto& id : nodes) m |= Mask{1} << index_of(id);
    return m;
}

ReadinessKernel::Mask keep_lowest(ReadinessKernel::Mask m, int limit) {
    ReadinessKernel::Mask out = 0;
    for (int k = 0; k < limit && m; ++k) {
        out |= m & (~m + 1);
        m &= m - 1;
    }
    return out;
}

}  // namespace detail

Frontier ready_set(const PlanGraph& graph, const NodeSet& pending, const NodeSet& completed,
                   const SchedulingPolicy& policy) {
    policy.validate();
    for (const auto& id : pending) {
        if (completed.count(id)) {
            throw std::invalid_argument("node " + id.to_string() + " is both pending and completed");
        }
    }
    detail::ReadinessKernel kernel(graph);
    const auto p = kernel.mask_of(pending);
    const auto c = kernel.mask_of(completed);
    auto selected = detail::keep_lowest(kernel.ready(p, c, kernel.in_progress_mask(), policy.mode),
                                        policy.max_parallel_goals);
    Frontier f;
    while (selected) {
        f.nodes.push_back(kernel.node(static_cast<std::size_t>(std::countr_zero(selected))));
        selected &= selected - 1;
    }
    return f;
}

Transition mark_complete(const NodeSet& pending, const NodeSet& completed, const Outcomes& outcomes) {
    Transition t{pending, completed, {}, {}};
    for (const auto& [id, outcome] : outcomes) {
        if (!id.is_path() || !pending.count(id)) throw plan::UnknownNode(id);
    }
    for (const auto& [id, outcome] : outcomes) {
        t.pending.erase(id);
        if (outcome != Outcome::succeeded) continue;
        t.completed.insert(id);
        const NodeId goal = id.parent();
        if (t.completed.insert(goal).second) t.resolved_goals.push_back(goal);
        t.pending.erase(goal);
        for (auto it = t.pending.lower_bound(goal); it != t.pending.end() && it->goal == goal.goal;) {
            it = t.pending.erase(it);
        }
    }
    // a failure that exhausts its goal's pending paths blocks the goal
    NodeSet goals;
    for (const auto& [id, outcome] : outcomes) {
        if (outcome == Outcome::failed && t.pending.count(id.parent())) goals.insert(id.parent());
    }
    for (const auto& goal : goals) {
        auto next = t.pending.upper_bound(goal);
        const bool has_path = next != t.pending.end() && next->goal == goal.goal;
        if (!has_path && !t.completed.count(goal)) {
            t.pending.erase(goal);
            t.blocked_goals.push_back(goal);
        }
    }
    return t;
}

}  // namespace fanout::scheduler
