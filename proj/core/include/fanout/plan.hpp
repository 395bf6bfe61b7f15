#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fanout::plan {

inline constexpr int kMaxGoals = 5;
inline constexpr int kMaxPathsPerGoal = 5;

/// Identifies a goal ("2") or one of its paths ("2.3"). Indices are 1-based.
struct NodeId {
    int goal = 1;
    std::optional<int> path;

    static NodeId goal_node(int goal) { return NodeId{goal, std::nullopt}; }
    static NodeId path_node(int goal, int path) { return NodeId{goal, path}; }

    bool is_goal() const { return !path.has_value(); }
    bool is_path() const { return path.has_value(); }
    NodeId parent() const { return goal_node(goal); }

    std::string to_string() const;
    /// Accepts "2" or "2.3"; throws std::invalid_argument otherwise.
    static NodeId parse(std::string_view text);

    // goal nodes order before their own paths
    friend auto operator<=>(const NodeId& a, const NodeId& b) {
        if (auto c = a.goal <=> b.goal; c != 0) return c;
        return a.path.value_or(0) <=> b.path.value_or(0);
    }
    friend bool operator==(const NodeId& a, const NodeId& b) = default;
};

using NodeSet = std::set<NodeId>;
using Edge = std::pair<NodeId, NodeId>;  // first must complete before second

enum class GoalStatus { pending, in_progress, resolved, blocked };
enum class PathStatus { pending, in_progress, succeeded, failed };

std::string_view to_string(GoalStatus s);
std::string_view to_string(PathStatus s);
GoalStatus goal_status_from_string(std::string_view s);
PathStatus path_status_from_string(std::string_view s);

inline bool is_terminal(PathStatus s) {
    return s == PathStatus::succeeded || s == PathStatus::failed;
}

struct Path {
    NodeId id;
    std::string approach;
    std::string success_criteria;
    PathStatus status = PathStatus::pending;

    friend bool operator==(const Path&, const Path&) = default;
};

struct Goal {
    NodeId id;
    std::string title;
    std::vector<Path> paths;
    GoalStatus status = GoalStatus::pending;
    std::optional<std::string> result_summary;  // present iff status == resolved

    friend bool operator==(const Goal&, const Goal&) = default;
};

class MalformedPlan : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnknownNode : public std::out_of_range {
public:
    explicit UnknownNode(const NodeId& id)
        : std::out_of_range("unknown plan node " + id.to_string()), id_(id) {}
    const NodeId& id() const { return id_; }

private:
    NodeId id_;
};

/// Goal/path DAG. Within a goal, path i implicitly precedes path i+1; explicit
/// edges add prerequisites between nodes. A value type: the engine mutates its
/// own copy and bumps the version on refinement.
class PlanGraph {
public:
    PlanGraph() = default;

    /// Appends a goal with the given paths; ids are assigned from position.
    /// Throws MalformedPlan when the goal or path bounds would be exceeded.
    Goal& add_goal(std::string title);
    Path& add_path(int goal_index, std::string approach, std::string success_criteria);

    /// Throws UnknownNode for missing endpoints and std::invalid_argument for
    /// edges between a goal and its own paths.
    void add_edge(const NodeId& from, const NodeId& to);
    void remove_edge(const NodeId& from, const NodeId& to);

    const std::vector<Goal>& goals() const { return goals_; }
    std::vector<Goal>& goals() { return goals_; }
    const std::set<Edge>& edges() const { return edges_; }

    std::uint64_t version() const { return version_; }
    void set_version(std::uint64_t v) { version_ = v; }

    bool contains(const NodeId& id) const;
    const Goal& goal(int goal_index) const;
    Goal& goal(int goal_index);
    const Path& path(const NodeId& id) const;
    Path& path(const NodeId& id);

    /// Every goal node followed by its paths, in (goal, path) order.
    std::vector<NodeId> nodes() const;
    std::size_t path_count() const;

    /// Explicit prerequisites of a node. For a path this includes the
    /// prerequisites of its goal; implicit within-goal chains are excluded.
    std::vector<NodeId> prerequisites(const NodeId& id) const;

    /// Structural invariants: goal/path bounds, id consistency, status/result
    /// agreement, at most one in-progress path per goal. Throws MalformedPlan.
    void check_invariants() const;

    friend bool operator==(const PlanGraph&, const PlanGraph&) = default;

private:
    std::vector<Goal> goals_;
    std::set<Edge> edges_;
    std::uint64_t version_ = 0;
};

/// Parses planner output in the "## Goal N:" / "- Path N.M:" / "- Success:"
/// grammar. Statuses start pending, version 0, and no cross-goal edges.
PlanGraph parse_plan(std::string_view text);

/// Inverse of parse_plan on structure. Statuses, edges, and version are not
/// emitted.
std::string serialize_plan(const PlanGraph& graph);

struct CycleReport {
    std::vector<NodeId> cycle;  // first node repeated at the end
    std::string to_string() const;
};

/// Cycle check over explicit edges, within-goal path chains, and goal-to-path
/// gating (an edge into a goal gates all its paths). nullopt means acyclic.
std::optional<CycleReport> validate_dag(const PlanGraph& graph);

/// A topological order of every node, or nullopt when validate_dag fails.
std::optional<std::vector<NodeId>> topological_order(const PlanGraph& graph);

}  // namespace fanout::plan
