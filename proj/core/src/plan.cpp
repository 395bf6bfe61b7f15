#include "fanout/plan.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <regex>
#include <sstream>

#include "fanout/text.hpp"

namespace fanout::plan {

namespace {

int parse_index(std::string_view text) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || value < 1) {
        throw std::invalid_argument("bad node index '" + std::string(text) + "'");
    }
    return value;
}

std::string single_line(std::string text) {
    std::replace(text.begin(), text.end(), '\n', ' ');
    std::replace(text.begin(), text.end(), '\r', ' ');
    return text::trim(text);
}

}  // namespace

std::string NodeId::to_string() const {
    if (!path) return std::to_string(goal);
    return std::to_string(goal) + "." + std::to_string(*path);
}

NodeId NodeId::parse(std::string_view text) {
    auto dot = text.find('.');
    if (dot == std::string_view::npos) return goal_node(parse_index(text));
    return path_node(parse_index(text.substr(0, dot)), parse_index(text.substr(dot + 1)));
}

std::string_view to_string(GoalStatus s) {
    switch (s) {
        case GoalStatus::pending: return "pending";
        case GoalStatus::in_progress: return "in_progress";
        case GoalStatus::resolved: return "resolved";
        case GoalStatus::blocked: return "blocked";
    }
    return "pending";
}

std::string_view to_string(PathStatus s) {
    switch (s) {
        case PathStatus::pending: return "pending";
        case PathStatus::in_progress: return "in_progress";
        case PathStatus::succeeded: return "succeeded";
        case PathStatus::failed: return "failed";
    }
    return "pending";
}

GoalStatus goal_status_from_string(std::string_view s) {
    if (s == "pending") return GoalStatus::pending;
    if (s == "in_progress") return GoalStatus::in_progress;
    if (s == "resolved") return GoalStatus::resolved;
    if (s == "blocked") return GoalStatus::blocked;
    throw std::invalid_argument("unknown goal status '" + std::string(s) + "'");
}

PathStatus path_status_from_string(std::string_view s) {
    if (s == "pending") return PathStatus::pending;
    if (s == "in_progress") return PathStatus::in_progress;
    if (s == "succeeded") return PathStatus::succeeded;
    if (s == "failed") return PathStatus::failed;
    throw std::invalid_argument("unknown path status '" + std::string(s) + "'");
}

Goal& PlanGraph::add_goal(std::string title) {
    if (goals_.size() >= static_cast<std::size_t>(kMaxGoals)) {
        throw MalformedPlan("plan has more than " + std::to_string(kMaxGoals) + " goals");
    }
    Goal g;
    g.id = NodeId::goal_node(static_cast<int>(goals_.size()) + 1);
    g.title = single_line(std::move(title));
    goals_.push_back(std::move(g));
    return goals_.back();
}

Path& PlanGraph::add_path(int goal_index, std::string approach, std::string success_criteria) {
    Goal& g = goal(goal_index);
    if (g.paths.size() >= static_cast<std::size_t>(kMaxPathsPerGoal)) {
        throw MalformedPlan("goal " + std::to_string(goal_index) + " has more than " +
                            std::to_string(kMaxPathsPerGoal) + " paths");
    }
    Path p;
    p.id = NodeId::path_node(goal_index, static_cast<int>(g.paths.size()) + 1);
    p.approach = single_line(std::move(approach));
    p.success_criteria = single_line(std::move(success_criteria));
    g.paths.push_back(std::move(p));
    return g.paths.back();
}

void PlanGraph::add_edge(const NodeId& from, const NodeId& to) {
    if (!contains(from)) throw UnknownNode(from);
    if (!contains(to)) throw UnknownNode(to);
    if (from.goal == to.goal && (from.is_goal() || to.is_goal())) {
        throw std::invalid_argument("edge " + from.to_string() + " -> " + to.to_string() +
                                    " relates a goal to its own paths");
    }
    edges_.emplace(from, to);
}

void PlanGraph::remove_edge(const NodeId& from, const NodeId& to) { edges_.erase({from, to}); }

bool PlanGraph::contains(const NodeId& id) const {
    if (id.goal < 1 || id.goal > static_cast<int>(goals_.size())) return false;
    if (!id.path) return true;
    const auto& paths = goals_[static_cast<std::size_t>(id.goal - 1)].paths;
    return *id.path >= 1 && *id.path <= static_cast<int>(paths.size());
}

const Goal& PlanGraph::goal(int goal_index) const {
    if (goal_index < 1 || goal_index > static_cast<int>(goals_.size())) {
        throw UnknownNode(NodeId::goal_node(goal_index));
    }
    return goals_[static_cast<std::size_t>(goal_index - 1)];
}

Goal& PlanGraph::goal(int goal_index) {
    return const_cast<Goal&>(std::as_const(*this).goal(goal_index));
}

const Path& PlanGraph::path(const NodeId& id) const {
    if (!id.path || !contains(id)) throw UnknownNode(id);
    return goals_[static_cast<std::size_t>(id.goal - 1)].paths[static_cast<std::size_t>(*id.path - 1)];
}

Path& PlanGraph::path(const NodeId& id) { return const_cast<Path&>(std::as_const(*this).path(id)); }

std::vector<NodeId> PlanGraph::nodes() const {
    std::vector<NodeId> out;
    for (const auto& g : goals_) {
        out.push_back(g.id);
        for (const auto& p : g.paths) out.push_back(p.id);
    }
    return out;
}

std::size_t PlanGraph::path_count() const {
    std::size_t n = 0;
    for (const auto& g : goals_) n += g.paths.size();
    return n;
}

std::vector<NodeId> PlanGraph::prerequisites(const NodeId& id) const {
    if (!contains(id)) throw UnknownNode(id);
    std::vector<NodeId> out;
    for (const auto& [from, to] : edges_) {
        if (to == id || (id.is_path() && to == id.parent())) out.push_back(from);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

void PlanGraph::check_invariants() const {
    if (goals_.empty() || goals_.size() > static_cast<std::size_t>(kMaxGoals)) {
        throw MalformedPlan("plan must contain 1-5 goals, found " + std::to_string(goals_.size()));
    }
    for (std::size_t gi = 0; gi < goals_.size(); ++gi) {
        const Goal& g = goals_[gi];
        if (g.id != NodeId::goal_node(static_cast<int>(gi) + 1)) {
            throw MalformedPlan("goal id mismatch at position " + std::to_string(gi + 1));
        }
        if (g.paths.empty() || g.paths.size() > static_cast<std::size_t>(kMaxPathsPerGoal)) {
            throw MalformedPlan("goal " + g.id.to_string() + " must contain 1-5 paths, found " +
                                std::to_string(g.paths.size()));
        }
        if ((g.status == GoalStatus::resolved) != g.result_summary.has_value()) {
            throw MalformedPlan("goal " + g.id.to_string() + " result summary disagrees with status");
        }
        int in_progress = 0;
        for (std::size_t pi = 0; pi < g.paths.size(); ++pi) {
            if (g.paths[pi].id != NodeId::path_node(g.id.goal, static_cast<int>(pi) + 1)) {
                throw MalformedPlan("path id mismatch in goal " + g.id.to_string());
            }
            if (g.paths[pi].status == PathStatus::in_progress) ++in_progress;
        }
        if (in_progress > 1) {
            throw MalformedPlan("goal " + g.id.to_string() + " has more than one path in progress");
        }
    }
    for (const auto& [from, to] : edges_) {
        if (!contains(from) || !contains(to)) {
            throw MalformedPlan("edge references missing node " + from.to_string() + " -> " + to.to_string());
        }
    }
}

PlanGraph parse_plan(std::string_view text) {
    static const std::regex goal_re(R"(^\s*#{2,}\s*Goal\s+\d+\s*:\s*(.*?)\s*$)", std::regex::icase);
    static const std::regex path_re(R"(^\s*[-*]\s*(?:\*\*)?Path\s+\d+(?:\.\d+)?\s*:\s*(?:\*\*)?\s*(.*?)\s*$)",
                                    std::regex::icase);
    static const std::regex approach_re(R"(^\s*[-*]\s*Approach\s*:\s*(.*?)\s*$)", std::regex::icase);
    static const std::regex success_re(R"(^\s*[-*]\s*Success\s*:\s*(.*?)\s*$)", std::regex::icase);

    struct PendingPath {
        std::string approach;
        std::optional<std::string> success;
    };
    struct PendingGoal {
        std::string title;
        std::vector<PendingPath> paths;
    };
    std::vector<PendingGoal> goals;

    for (const auto& raw_line : text::split_lines(text)) {
        std::string line = text::strip_tags(raw_line, {"plan", "think"});
        std::smatch m;
        if (std::regex_match(line, m, goal_re)) {
            goals.push_back(PendingGoal{m[1].str(), {}});
            continue;
        }
        if (goals.empty()) continue;
        auto& goal = goals.back();
        if (std::regex_match(line, m, path_re)) {
            goal.paths.push_back(PendingPath{m[1].str(), std::nullopt});
        } else if (goal.paths.empty()) {
            continue;
        } else if (std::regex_match(line, m, success_re)) {
            if (!goal.paths.back().success) goal.paths.back().success = m[1].str();
        } else if (std::regex_match(line, m, approach_re) && !goal.paths.back().success) {
            auto& approach = goal.paths.back().approach;
            approach = approach.empty() ? m[1].str() : approach + ": " + m[1].str();
        }
    }

    if (goals.empty()) throw MalformedPlan("plan contains no '## Goal' headings");
    if (goals.size() > static_cast<std::size_t>(kMaxGoals)) {
        throw MalformedPlan("plan has " + std::to_string(goals.size()) + " goals; at most " +
                            std::to_string(kMaxGoals) + " allowed");
    }

    PlanGraph graph;
    for (std::size_t gi = 0; gi < goals.size(); ++gi) {
        const auto& pg = goals[gi];
        const int goal_index = static_cast<int>(gi) + 1;
        if (pg.paths.empty() || pg.paths.size() > static_cast<std::size_t>(kMaxPathsPerGoal)) {
            throw MalformedPlan("goal " + std::to_string(goal_index) + " has " + std::to_string(pg.paths.size()) +
                                " paths; expected 1-" + std::to_string(kMaxPathsPerGoal));
        }
        graph.add_goal(pg.title);
        for (std::size_t pi = 0; pi < pg.paths.size(); ++pi) {
            if (!pg.paths[pi].success) {
                throw MalformedPlan("path " + std::to_string(goal_index) + "." + std::to_string(pi + 1) +
                                    " has no '- Success:' line");
            }
            graph.add_path(goal_index, pg.paths[pi].approach, *pg.paths[pi].success);
        }
    }
    return graph;
}

std::string serialize_plan(const PlanGraph& graph) {
    std::ostringstream out;
    bool first = true;
    for (const auto& g : graph.goals()) {
        if (!first) out << "\n";
        first = false;
        out << "## Goal " << g.id.goal << ": " << g.title << "\n";
        for (const auto& p : g.paths) {
            out << "- Path " << p.id.to_string() << ": " << p.approach << "\n";
            out << "- Success: " << p.success_criteria << "\n";
        }
    }
    return out.str();
}

std::string CycleReport::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < cycle.size(); ++i) {
        if (i) out += " -> ";
        out += cycle[i].to_string();
    }
    return out;
}

namespace {

std::map<NodeId, std::vector<NodeId>> successor_map(const PlanGraph& graph) {
    std::map<NodeId, std::vector<NodeId>> succ;
    for (const auto& id : graph.nodes()) succ[id];
    for (const auto& [from, to] : graph.edges()) succ[from].push_back(to);
    for (const auto& g : graph.goals()) {
        for (std::size_t i = 0; i < g.paths.size(); ++i) {
            succ[g.id].push_back(g.paths[i].id);
            if (i + 1 < g.paths.size()) succ[g.paths[i].id].push_back(g.paths[i + 1].id);
        }
    }
    for (auto& [id, next] : succ) {
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end()), next.end());
    }
    return succ;
}

}  // namespace

std::optional<CycleReport> validate_dag(const PlanGraph& graph) {
    const auto succ = successor_map(graph);
    enum class Mark { white, grey, black };
    std::map<NodeId, Mark> mark;
    for (const auto& [id, _] : succ) mark[id] = Mark::white;

    std::vector<NodeId> stack;
    std::optional<CycleReport> found;

    std::function<bool(const NodeId&)> visit = [&](const NodeId& v) {
        mark[v] = Mark::grey;
        stack.push_back(v);
        for (const auto& w : succ.at(v)) {
            if (mark[w] == Mark::grey) {
                auto it = std::find(stack.begin(), stack.end(), w);
                CycleReport report;
                report.cycle.assign(it, stack.end());
                report.cycle.push_back(w);
                found = std::move(report);
                return true;
            }
            if (mark[w] == Mark::white && visit(w)) return true;
        }
        stack.pop_back();
        mark[v] = Mark::black;
        return false;
    };

    for (const auto& [id, _] : succ) {
        if (mark[id] == Mark::white && visit(id)) return found;
    }
    return std::nullopt;
}

std::optional<std::vector<NodeId>> topological_order(const PlanGraph& graph) {
    const auto succ = successor_map(graph);
    std::map<NodeId, int> indegree;
    for (const auto& [id, _] : succ) indegree[id];
    for (const auto& [id, next] : succ) {
        for (const auto& w : next) ++indegree[w];
    }
    std::set<NodeId> ready;
    for (const auto& [id, d] : indegree) {
        if (d == 0) ready.insert(id);
    }
    std::vector<NodeId> order;
    while (!ready.empty()) {
        NodeId v = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(v);
        for (const auto& w : succ.at(v)) {
            if (--indegree[w] == 0) ready.insert(w);
        }
    }
    if (order.size() != succ.size()) return std::nullopt;
    return order;
}

}  // namespace fanout::plan
