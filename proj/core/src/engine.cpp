#include "fanout/engine.hpp"

#include <future>
#include <regex>
#include <semaphore>
#include <thread>

#include "fanout/prompts.hpp"
#include "fanout/text.hpp"

namespace fanout::engine {

using backend::Purpose;
using backend::Role;
namespace prompts = backend::prompts;

namespace {

constexpr std::size_t kResultExcerptChars = 500;

std::string clip(std::string_view s, std::size_t chars) {
    return std::string(s.substr(0, text::utf8_prefix_bytes(s, chars)));
}

std::string continue_message() { return prompts::get(prompts::kContinue).body; }

}  // namespace

void EngineConfig::validate() const {
    if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
    if (summary_interval < 1) throw std::invalid_argument("summary_interval must be >= 1");
    if (max_concurrent_dispatch < 1) throw std::invalid_argument("max_concurrent_dispatch must be >= 1");
    if (per_call_timeout.count() < 1) throw std::invalid_argument("per_call_timeout must be positive");
    policy.validate();
}

trajectory::RecordConfig EngineConfig::to_record() const {
    trajectory::RecordConfig rc;
    rc.max_steps = max_steps;
    rc.summary_interval = summary_interval;
    rc.mode = std::string(scheduler::to_string(policy.mode));
    rc.max_parallel_goals = policy.max_parallel_goals;
    rc.max_tool_calls_per_step = policy.max_tool_calls_per_step;
    rc.per_call_timeout_ms = per_call_timeout.count();
    rc.max_concurrent_dispatch = max_concurrent_dispatch;
    return rc;
}

// ---- state ------------------------------------------------------------------

AgentState initial_state(const std::string& task, const ToolRegistry& tools) {
    AgentState s;
    s.turns.push_back(
        {Role::system, backend::render_prompt(prompts::get(prompts::kSystem), {{"tools", tools.render_tool_list()}})});
    s.turns.push_back({Role::user, backend::render_prompt(prompts::get(prompts::kTask), {{"task", task}})});
    return s;
}

std::string render_observations(const ActionEnvelope& envelope, const std::vector<Observation>& observations) {
    if (observations.size() != envelope.tool_calls.size()) {
        throw CountMismatch(std::to_string(envelope.tool_calls.size()) + " tool calls but " +
                            std::to_string(observations.size()) + " observations");
    }
    std::string out;
    for (std::size_t k = 0; k < observations.size(); ++k) {
        const auto& call = envelope.tool_calls[k];
        if (k) out += "\n\n";
        out += "Results for tool call " + call.name + " with arguments " + tools::python_dict_repr(call.arguments) +
               ": " + observations[k].content;
    }
    return out;
}

AgentState integrate(const AgentState& state, const ActionEnvelope& envelope,
                     const std::vector<Observation>& observations) {
    const std::string tool_text = render_observations(envelope, observations);
    AgentState next = state;
    next.turns.push_back({Role::assistant, backend::serialize_envelope(envelope)});
    next.turns.push_back({Role::tool, tool_text});
    ++next.step_index;
    return next;
}

std::vector<DialogueTurn> compact_view(const std::vector<DialogueTurn>& turns, std::size_t char_budget) {
    std::vector<DialogueTurn> view = turns;
    std::size_t total = 0;
    for (const auto& t : view) total += text::utf8_length(t.content);
    for (auto& t : view) {
        if (total <= char_budget) break;
        if (t.role != Role::tool) continue;
        const std::size_t len = text::utf8_length(t.content);
        if (len <= kElidedPrefixChars) continue;
        std::string shorter = clip(t.content, kElidedPrefixChars) + "\n[... " +
                              std::to_string(len - kElidedPrefixChars) + " characters elided ...]";
        const std::size_t new_len = text::utf8_length(shorter);
        if (new_len >= len) continue;
        total -= len - new_len;
        t.content = std::move(shorter);
    }
    return view;
}

// ---- acting -----------------------------------------------------------------

std::string render_frontier(const PlanGraph& graph, const Frontier& frontier) {
    if (frontier.empty()) return "- none";
    std::string out;
    for (const auto& id : frontier.nodes) {
        const auto& goal = graph.goal(id.goal);
        if (!out.empty()) out += "\n";
        if (id.is_goal()) {
            out += "- Goal " + id.to_string() + ": " + goal.title;
            continue;
        }
        const auto& path = graph.path(id);
        out += "- Path " + id.to_string() + " (Goal " + std::to_string(id.goal) + ": " + goal.title +
               "): " + path.approach + " | Success: " + path.success_criteria;
    }
    return out;
}

std::string render_execution_prompt(const ActContext& ctx, const PlanGraph& graph, const Frontier& frontier) {
    const auto exec = backend::render_prompt(prompts::get(prompts::kExecution),
                                             {{"tool_functions_json", ctx.tools->function_schemas().dump(2)},
                                              {"task", ctx.task},
                                              {"max_tool_calls", std::to_string(ctx.max_tool_calls)}});
    const auto ready = backend::render_prompt(prompts::get(prompts::kReadyPaths),
                                              {{"ready_paths", render_frontier(graph, frontier)}});
    return exec + ready;
}

ActionEnvelope select_actions(const AgentState& state, const PlanGraph& graph, const Frontier& frontier,
                              ModelBackend& backend, const ActContext& ctx) {
    auto view = compact_view(state.turns, ctx.context_char_budget);
    view.push_back({Role::user, render_execution_prompt(ctx, graph, frontier)});
    const auto reply = backend.generate(view, Purpose::act);
    try {
        return backend::parse_envelope(reply, ctx.max_tool_calls);
    } catch (const backend::EnvelopeParseError& e) {
        view.push_back({Role::assistant, reply});
        view.push_back({Role::user, "Your previous reply could not be parsed: " + std::string(e.what()) +
                                        "\nReply with one <think>...</think> block followed by <tools>[...]</tools> "
                                        "holding 1 to " + std::to_string(ctx.max_tool_calls) +
                                        " tool calls, or the equivalent JSON object."});
    }
    return backend::parse_envelope(backend.generate(view, Purpose::act), ctx.max_tool_calls);
}

std::vector<Observation> dispatch(const std::vector<tools::ToolCall>& calls,
                                  const std::shared_ptr<const ToolRegistry>& tools,
                                  const std::shared_ptr<const Clock>& clock, const EngineConfig& config) {
    auto gate = std::make_shared<std::counting_semaphore<>>(config.max_concurrent_dispatch);
    std::vector<std::future<Observation>> futures;
    futures.reserve(calls.size());
    for (std::size_t k = 0; k < calls.size(); ++k) {
        auto promise = std::make_shared<std::promise<Observation>>();
        futures.push_back(promise->get_future());
        // detached so a hung tool cannot stall the step; the worker owns
        // everything it touches
        std::thread([gate, tools, clock, call = calls[k], k, promise] {
            gate->acquire();
            Observation obs;
            try {
                obs = tools->invoke(call, k, *clock);
            } catch (const std::exception& e) {
                obs = {k, std::string("Error executing tool ") + call.name + ": " + e.what(),
                       tools::ObservationStatus::error, std::chrono::milliseconds{0}};
            }
            gate->release();
            promise->set_value(std::move(obs));
        }).detach();
    }
    std::vector<Observation> out;
    out.reserve(calls.size());
    for (std::size_t k = 0; k < calls.size(); ++k) {
        if (futures[k].wait_for(config.per_call_timeout) == std::future_status::ready) {
            out.push_back(futures[k].get());
        } else {
            out.push_back({k,
                           "Tool call " + calls[k].name + " timed out after " +
                               std::to_string(config.per_call_timeout.count()) + " ms",
                           tools::ObservationStatus::error, config.per_call_timeout});
        }
    }
    return out;
}

scheduler::Outcomes attribute_outcomes(const Frontier& frontier, const ActionEnvelope& envelope,
                                       const std::vector<Observation>& observations) {
    scheduler::Outcomes out;
    for (const auto& node : frontier.nodes) {
        bool any = false;
        bool ok = false;
        for (std::size_t k = 0; k < envelope.tool_calls.size() && k < observations.size(); ++k) {
            if (envelope.tool_calls[k].path != node) continue;
            any = true;
            ok = ok || observations[k].ok();
        }
        if (any) out[node] = ok ? scheduler::Outcome::succeeded : scheduler::Outcome::failed;
    }
    return out;
}

// ---- refinement -----------------------------------------------------------------

namespace {

std::optional<SummaryStatus> parse_status(std::string_view value) {
    auto v = text::to_lower(text::trim(value));
    v.erase(0, v.find_first_not_of("*[ "));
    if (text::istarts_with(v, "completed") || text::istarts_with(v, "resolved") || text::istarts_with(v, "complete")) {
        return SummaryStatus::completed;
    }
    if (text::istarts_with(v, "in progress") || text::istarts_with(v, "in_progress") ||
        text::istarts_with(v, "partial")) {
        return SummaryStatus::in_progress;
    }
    if (text::istarts_with(v, "blocked")) return SummaryStatus::blocked;
    return std::nullopt;
}

std::string strip_bullet(std::string_view line) {
    std::string s = text::trim(line);
    while (!s.empty() && (s.front() == '-' || s.front() == '*')) s = text::trim(std::string_view(s).substr(1));
    return s;
}

int to_int(const std::ssub_match& m) { return std::stoi(m.str()); }

std::optional<std::size_t> first_open_path(const plan::Goal& g) {
    for (std::size_t i = 0; i < g.paths.size(); ++i) {
        if (!plan::is_terminal(g.paths[i].status)) return i;
    }
    return std::nullopt;
}

constexpr std::string_view kNewPathSuccess = "The sub-path yields a verified result for the goal";

}  // namespace

SummaryReport parse_summary(std::string_view summary) {
    static const std::regex heading_re(R"(^\s*#{1,6}\s*(.*)$)");
    static const std::regex goal_heading_re(R"(^Goal\s+(\d+)\b.*$)", std::regex::icase);
    static const std::regex status_re(R"(^\s*[-*]?\s*\**\s*Status\s*\**\s*:\s*\**(.*)$)", std::regex::icase);
    static const std::regex resolved_re(R"(Goal\s+(\d+)\s*:\s*resolved\s*,?\s*(?:the\s+)?result\s+is\s*:?\s*(.*)$)",
                                        std::regex::icase);
    static const std::regex up_to_re(R"(Goal\s+(\d+)\s*:\s*completed\s+up\s+to\s+path\s+(\d+)(?:\.(\d+))?)",
                                     std::regex::icase);
    static const std::regex next_goal_re(R"(^\s*[-*]\s*\**\s*Goal\s+(\d+)[^:\n]*:\s*\**\s*(.*)$)", std::regex::icase);
    static const std::regex subpath_prefix_re(R"(^\**\s*Sub-?path\s*\**\s*:\s*\**\s*)", std::regex::icase);

    enum class Section { none, goal, next };
    SummaryReport report;
    Section section = Section::none;
    int current_goal = 0;
    const auto lines = text::split_lines(summary);

    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        std::smatch m;
        if (std::regex_match(line, m, heading_re)) {
            const std::string heading = text::trim(m[1].str());
            std::smatch g;
            if (std::regex_match(heading, g, goal_heading_re)) {
                section = Section::goal;
                current_goal = to_int(g[1]);
                report.goals[current_goal];
            } else if (text::istarts_with(heading, "Next Parallel Sub-Paths") ||
                       text::istarts_with(heading, "Next Parallel Sub Paths")) {
                section = Section::next;
            } else {
                section = Section::none;
            }
            continue;
        }
        if (std::regex_search(line, m, resolved_re)) {
            auto& g = report.goals[to_int(m[1])];
            g.result = text::trim(m[2].str());
            if (!g.status) g.status = SummaryStatus::completed;
        }
        if (std::regex_search(line, m, up_to_re)) {
            report.goals[to_int(m[1])].completed_up_to = m[3].matched ? to_int(m[3]) : to_int(m[2]);
        }
        if (section == Section::goal && std::regex_match(line, m, status_re)) {
            auto& g = report.goals[current_goal];
            if (auto st = parse_status(m[1].str())) {
                if (!g.status || *g.status != SummaryStatus::completed || !g.result) g.status = st;
            }
            continue;
        }
        if (section == Section::next && std::regex_match(line, m, next_goal_re)) {
            std::string proposal = text::trim(m[2].str());
            if (proposal.empty()) {
                for (std::size_t j = i + 1; j < lines.size(); ++j) {
                    if (text::trim(lines[j]).empty()) continue;
                    if (std::regex_match(lines[j], next_goal_re) || std::regex_match(lines[j], heading_re)) break;
                    proposal = std::regex_replace(strip_bullet(lines[j]), subpath_prefix_re, "");
                    break;
                }
            }
            proposal = text::trim(proposal);
            if (!proposal.empty()) report.next_paths.emplace_back(to_int(m[1]), proposal);
        }
    }
    if (report.goals.empty() && report.next_paths.empty()) {
        throw SummaryParseError("summary has no goal status sections and no next sub-paths");
    }
    return report;
}

PlanGraph apply_summary(const PlanGraph& graph, const SummaryReport& report) {
    PlanGraph g = graph;
    const int goal_count = static_cast<int>(g.goals().size());
    for (const auto& [index, r] : report.goals) {
        if (index < 1 || index > goal_count) continue;
        auto& goal = g.goal(index);
        if (goal.status == plan::GoalStatus::resolved) continue;
        if (r.completed_up_to) {
            for (auto& p : goal.paths) {
                if (*p.id.path <= *r.completed_up_to && !plan::is_terminal(p.status)) p.status = plan::PathStatus::failed;
            }
        }
        if (r.status == SummaryStatus::blocked) {
            if (auto open = first_open_path(goal)) goal.paths[*open].status = plan::PathStatus::failed;
        }
        if (r.status == SummaryStatus::completed) {
            goal.status = plan::GoalStatus::resolved;
            goal.result_summary = r.result && !r.result->empty() ? *r.result : std::string("Reported completed");
        }
    }
    for (const auto& [index, proposal] : report.next_paths) {
        if (index < 1 || index > goal_count) continue;
        auto& goal = g.goal(index);
        if (goal.status == plan::GoalStatus::resolved) continue;
        if (auto open = first_open_path(goal); open && goal.paths[*open].approach == proposal) continue;
        if (goal.paths.size() >= static_cast<std::size_t>(plan::kMaxPathsPerGoal)) continue;
        g.add_path(index, proposal, std::string(kNewPathSuccess));
    }
    for (auto& goal : g.goals()) {
        if (goal.status == plan::GoalStatus::resolved) continue;
        const bool open = first_open_path(goal).has_value();
        if (!open) {
            goal.status = plan::GoalStatus::blocked;
        } else if (goal.status == plan::GoalStatus::blocked) {
            goal.status = plan::GoalStatus::pending;
        }
    }
    g.set_version(graph.version() + 1);
    return g;
}

std::string extract_summary(std::string_view reply) {
    auto b = reply.find("<summary>");
    if (b == std::string_view::npos) return text::trim(reply);
    b += 9;
    auto e = reply.find("</summary>", b);
    return text::trim(reply.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
}

namespace {

std::string render_trajectory(const std::vector<DialogueTurn>& turns, std::size_t budget) {
    std::vector<DialogueTurn> body(turns.begin() + (turns.empty() ? 0 : 1), turns.end());
    std::string out;
    for (const auto& t : compact_view(body, budget)) {
        if (!out.empty()) out += "\n\n";
        out += "[" + std::string(backend::to_string(t.role)) + "]\n" + t.content;
    }
    return out;
}

}  // namespace

Refinement refine(const PlanGraph& graph, const AgentState& state, ModelBackend& backend, const std::string& task,
                  std::size_t context_char_budget) {
    std::vector<DialogueTurn> request{
        {Role::system, prompts::get(prompts::kSummarySystem).body},
        {Role::user, backend::render_prompt(prompts::get(prompts::kSummaryInstruction),
                                            {{"task", task},
                                             {"plan", plan::serialize_plan(graph)},
                                             {"trajectory", render_trajectory(state.turns, context_char_budget)}})}};
    std::string summary;
    std::string error;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = backend.generate(request, Purpose::summarize);
        summary = extract_summary(reply);
        try {
            return {apply_summary(graph, parse_summary(summary)), summary, std::nullopt};
        } catch (const SummaryParseError& e) {
            error = e.what();
            request.push_back({Role::assistant, reply});
            request.push_back({Role::user, "Your analysis could not be parsed: " + error +
                                               "\nUse one '### Goal N: name' section per goal with a "
                                               "'- Status: Completed|In Progress|Blocked' line, then the "
                                               "'## Next Parallel Sub-Paths' list."});
        }
    }
    return {graph, summary, error};
}

NodeSet pending_from_graph(const PlanGraph& graph) {
    NodeSet out;
    for (const auto& g : graph.goals()) {
        if (g.status == plan::GoalStatus::resolved || g.status == plan::GoalStatus::blocked) continue;
        out.insert(g.id);
        for (const auto& p : g.paths) {
            if (!plan::is_terminal(p.status)) out.insert(p.id);
        }
    }
    return out;
}

NodeSet completed_from_graph(const PlanGraph& graph) {
    NodeSet out;
    for (const auto& g : graph.goals()) {
        if (g.status == plan::GoalStatus::resolved) out.insert(g.id);
        for (const auto& p : g.paths) {
            if (p.status == plan::PathStatus::succeeded) out.insert(p.id);
        }
    }
    return out;
}

// ---- run --------------------------------------------------------------------

Engine::Engine(EngineConfig config, std::shared_ptr<ModelBackend> backend, std::shared_ptr<const ToolRegistry> tools,
               std::shared_ptr<const Clock> clock)
    : config_(std::move(config)), backend_(std::move(backend)), tools_(std::move(tools)), clock_(std::move(clock)) {
    config_.validate();
    if (!backend_ || !tools_ || !clock_) throw std::invalid_argument("engine needs a backend, tools and a clock");
}

PlanGraph Engine::make_plan(AgentState& state, const std::string& task) const {
    (void)state;
    std::vector<DialogueTurn> request{
        {Role::user, backend::render_prompt(prompts::get(prompts::kPlan),
                                            {{"tools", tools_->render_tool_list()}, {"task", task}})}};
    auto reply = backend_->generate(request, Purpose::plan);
    PlanGraph graph;
    try {
        graph = plan::parse_plan(reply);
    } catch (const plan::MalformedPlan& e) {
        request.push_back({Role::assistant, reply});
        request.push_back({Role::user, "The plan could not be parsed: " + std::string(e.what()) +
                                           "\nReply again with 1-5 '## Goal N: name' headings, each followed by "
                                           "1-5 '- Path N.M: approach' lines and a '- Success: criteria' line "
                                           "after every path."});
        graph = plan::parse_plan(backend_->generate(request, Purpose::plan));
    }
    if (auto cycle = plan::validate_dag(graph)) throw plan::MalformedPlan("plan has a cycle: " + cycle->to_string());
    return graph;
}

trajectory::TrajectoryRecord Engine::run(const std::string& task, const RunOptions& options) const {
    const auto run_start = clock_->now();
    trajectory::TrajectoryRecord rec;
    rec.task_id = options.task_id;
    rec.task_text = task;
    rec.gold_answer = options.gold_answer;
    rec.config = config_.to_record();

    AgentState state = initial_state(task, *tools_);
    PlanGraph graph = make_plan(state, task);
    const auto snapshot = [&rec](const PlanGraph& g) {
        rec.plan_versions.push_back(
            {g.version(), plan::serialize_plan(g), std::vector<plan::Edge>(g.edges().begin(), g.edges().end())});
    };
    snapshot(graph);
    state.turns.push_back({Role::assistant, "<plan>\n" + plan::serialize_plan(graph) + "</plan>"});
    state.turns.push_back({Role::user, continue_message()});
    state.pending = pending_from_graph(graph);
    state.completed = completed_from_graph(graph);

    const ActContext ctx{tools_.get(), task, config_.policy.max_tool_calls_per_step, config_.context_char_budget};

    for (;;) {
        if (state.step_index >= config_.max_steps) {
            rec.termination = trajectory::Termination::budget_exhausted;
            break;
        }
        const auto step_start = clock_->now();
        const Frontier frontier = scheduler::ready_set(graph, state.pending, state.completed, config_.policy);
        for (const auto& id : frontier.nodes) {
            auto& goal = graph.goal(id.goal);
            if (goal.status == plan::GoalStatus::pending) goal.status = plan::GoalStatus::in_progress;
            if (id.is_path() && graph.path(id).status == plan::PathStatus::pending) {
                graph.path(id).status = plan::PathStatus::in_progress;
            }
        }

        const ActionEnvelope envelope = select_actions(state, graph, frontier, *backend_, ctx);
        const auto observations = dispatch(envelope.tool_calls, tools_, clock_, config_);
        state = integrate(state, envelope, observations);

        const auto outcomes = attribute_outcomes(frontier, envelope, observations);
        const auto transition = scheduler::mark_complete(state.pending, state.completed, outcomes);
        for (const auto& [id, outcome] : outcomes) {
            graph.path(id).status =
                outcome == scheduler::Outcome::succeeded ? plan::PathStatus::succeeded : plan::PathStatus::failed;
        }
        for (const auto& goal_id : transition.resolved_goals) {
            auto& goal = graph.goal(goal_id.goal);
            goal.status = plan::GoalStatus::resolved;
            goal.result_summary = std::string();
            for (std::size_t k = 0; k < envelope.tool_calls.size(); ++k) {
                const auto& tag = envelope.tool_calls[k].path;
                if (tag && tag->goal == goal_id.goal && observations[k].ok()) {
                    goal.result_summary = clip(observations[k].content, kResultExcerptChars);
                    break;
                }
            }
        }
        for (const auto& goal_id : transition.blocked_goals) graph.goal(goal_id.goal).status = plan::GoalStatus::blocked;
        state.pending = transition.pending;
        state.completed = transition.completed;

        trajectory::StepRecord step;
        step.index = state.step_index;
        step.envelope = envelope;
        step.observations = observations;
        step.frontier = frontier;
        step.outcomes = outcomes;

        if (envelope.is_final_answer() && observations.front().ok()) {
            const std::string* answer = tools::find_argument(envelope.tool_calls.front().arguments, "answer");
            rec.final_answer = answer ? *answer : observations.front().content;
            rec.termination = trajectory::Termination::final_answer;
            step.duration = to_ms(clock_->now() - step_start);
            rec.steps.push_back(std::move(step));
            break;
        }
        if (state.pending.empty()) {
            rec.termination = trajectory::Termination::plan_resolved;
            step.duration = to_ms(clock_->now() - step_start);
            rec.steps.push_back(std::move(step));
            break;
        }
        if (state.step_index % config_.summary_interval == 0 && state.step_index < config_.max_steps) {
            auto refinement = refine(graph, state, *backend_, task, config_.context_char_budget);
            step.summary = refinement.summary;
            step.refinement_error = refinement.error;
            if (!refinement.error) {
                graph = std::move(refinement.graph);
                snapshot(graph);
                state.pending = pending_from_graph(graph);
                state.completed = completed_from_graph(graph);
            }
            state.turns.push_back({Role::assistant, "<summary>" + refinement.summary + "</summary>"});
            state.turns.push_back({Role::user, continue_message()});
        }
        step.duration = to_ms(clock_->now() - step_start);
        rec.steps.push_back(std::move(step));
        if (state.pending.empty()) {
            rec.termination = trajectory::Termination::plan_resolved;
            break;
        }
    }
    rec.dialogue = state.turns;
    rec.wall_time = to_ms(clock_->now() - run_start);
    return rec;
}

}  // namespace fanout::engine
