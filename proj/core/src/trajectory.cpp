#include "fanout/trajectory.hpp"

#include <atomic>
#include <numeric>
#include <thread>

#include "fanout/backend.hpp"
#include "fanout/engine.hpp"
#include "fanout/envelope.hpp"
#include "fanout/prompts.hpp"
#include "fanout/text.hpp"
#include "fanout/tools.hpp"

namespace fanout::trajectory {

using nlohmann::ordered_json;

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::final_answer: return "final_answer";
        case Termination::plan_resolved: return "plan_resolved";
        case Termination::budget_exhausted: return "budget_exhausted";
    }
    return "budget_exhausted";
}

Termination termination_from_string(std::string_view s) {
    if (s == "final_answer") return Termination::final_answer;
    if (s == "plan_resolved") return Termination::plan_resolved;
    if (s == "budget_exhausted") return Termination::budget_exhausted;
    throw std::invalid_argument("unknown termination '" + std::string(s) + "'");
}

// ---- JSON -------------------------------------------------------------------

namespace {

ordered_json optional_text(const std::optional<std::string>& s) { return s ? ordered_json(*s) : ordered_json(nullptr); }

std::optional<std::string> read_optional_text(const ordered_json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

ordered_json envelope_json(const backend::ActionEnvelope& e) {
    ordered_json calls = ordered_json::array();
    for (const auto& c : e.tool_calls) calls.push_back(backend::tool_call_to_json(c));
    return {{"phase", backend::to_string(e.phase)}, {"phase_text", e.phase_text}, {"tool_calls", calls}};
}

backend::ActionEnvelope envelope_from(const ordered_json& j) {
    backend::ActionEnvelope e;
    e.phase = backend::phase_from_string(j.at("phase").get<std::string>());
    e.phase_text = j.at("phase_text").get<std::string>();
    for (const auto& c : j.at("tool_calls")) e.tool_calls.push_back(backend::tool_call_from_json(c));
    return e;
}

ordered_json turns_json(const std::vector<backend::DialogueTurn>& turns) {
    ordered_json out = ordered_json::array();
    for (const auto& t : turns) out.push_back({{"role", backend::to_string(t.role)}, {"content", t.content}});
    return out;
}

}  // namespace

ordered_json to_json(const TrajectoryRecord& r) {
    ordered_json config{{"max_steps", r.config.max_steps},
                        {"summary_interval", r.config.summary_interval},
                        {"mode", r.config.mode},
                        {"max_parallel_goals", r.config.max_parallel_goals},
                        {"max_tool_calls_per_step", r.config.max_tool_calls_per_step},
                        {"per_call_timeout_ms", r.config.per_call_timeout_ms},
                        {"max_concurrent_dispatch", r.config.max_concurrent_dispatch},
                        {"steps_counted", "tool_execution"}};

    ordered_json plans = ordered_json::array();
    for (const auto& p : r.plan_versions) {
        ordered_json edges = ordered_json::array();
        for (const auto& [from, to] : p.edges) edges.push_back({from.to_string(), to.to_string()});
        plans.push_back({{"version", p.version}, {"text", p.text}, {"edges", edges}});
    }

    ordered_json steps = ordered_json::array();
    for (const auto& s : r.steps) {
        ordered_json obs = ordered_json::array();
        for (const auto& o : s.observations) {
            obs.push_back({{"call_index", o.call_index},
                           {"status", tools::to_string(o.status)},
                           {"latency_ms", o.latency.count()},
                           {"content", o.content}});
        }
        ordered_json frontier = ordered_json::array();
        for (const auto& n : s.frontier.nodes) frontier.push_back(n.to_string());
        ordered_json outcomes = ordered_json::object();
        for (const auto& [id, o] : s.outcomes) outcomes[id.to_string()] = scheduler::to_string(o);
        steps.push_back({{"index", s.index},
                         {"frontier", frontier},
                         {"envelope", envelope_json(s.envelope)},
                         {"observations", obs},
                         {"outcomes", outcomes},
                         {"duration_ms", s.duration.count()},
                         {"summary", optional_text(s.summary)},
                         {"refinement_error", optional_text(s.refinement_error)}});
    }

    return {{"task_id", r.task_id},
            {"task_text", r.task_text},
            {"gold_answer", optional_text(r.gold_answer)},
            {"config", config},
            {"plan_versions", plans},
            {"steps", steps},
            {"termination", to_string(r.termination)},
            {"final_answer", optional_text(r.final_answer)},
            {"wall_time_ms", r.wall_time.count()},
            {"dialogue", turns_json(r.dialogue)}};
}

TrajectoryRecord record_from_json(const ordered_json& j) {
    try {
        TrajectoryRecord r;
        r.task_id = j.at("task_id").get<std::string>();
        r.task_text = j.at("task_text").get<std::string>();
        r.gold_answer = read_optional_text(j, "gold_answer");
        if (auto it = j.find("config"); it != j.end()) {
            const auto& c = *it;
            r.config.max_steps = c.value("max_steps", r.config.max_steps);
            r.config.summary_interval = c.value("summary_interval", r.config.summary_interval);
            r.config.mode = c.value("mode", r.config.mode);
            r.config.max_parallel_goals = c.value("max_parallel_goals", r.config.max_parallel_goals);
            r.config.max_tool_calls_per_step = c.value("max_tool_calls_per_step", r.config.max_tool_calls_per_step);
            r.config.per_call_timeout_ms = c.value("per_call_timeout_ms", r.config.per_call_timeout_ms);
            r.config.max_concurrent_dispatch = c.value("max_concurrent_dispatch", r.config.max_concurrent_dispatch);
        }
        for (const auto& p : j.value("plan_versions", ordered_json::array())) {
            PlanVersion v;
            v.version = p.at("version").get<std::uint64_t>();
            v.text = p.at("text").get<std::string>();
            for (const auto& e : p.value("edges", ordered_json::array())) {
                v.edges.emplace_back(plan::NodeId::parse(e.at(0).get<std::string>()),
                                     plan::NodeId::parse(e.at(1).get<std::string>()));
            }
            r.plan_versions.push_back(std::move(v));
        }
        for (const auto& s : j.at("steps")) {
            StepRecord step;
            step.index = s.at("index").get<int>();
            for (const auto& n : s.value("frontier", ordered_json::array())) {
                step.frontier.nodes.push_back(plan::NodeId::parse(n.get<std::string>()));
            }
            step.envelope = envelope_from(s.at("envelope"));
            for (const auto& o : s.at("observations")) {
                tools::Observation obs;
                obs.call_index = o.at("call_index").get<std::size_t>();
                obs.status = tools::observation_status_from_string(o.at("status").get<std::string>());
                obs.latency = std::chrono::milliseconds{o.value("latency_ms", std::int64_t{0})};
                obs.content = o.at("content").get<std::string>();
                step.observations.push_back(std::move(obs));
            }
            // bind first: items() on a temporary would dangle
            const auto outcomes = s.value("outcomes", ordered_json::object());
            for (const auto& [k, v] : outcomes.items()) {
                const auto name = v.get<std::string>();
                step.outcomes[plan::NodeId::parse(k)] =
                    name == "succeeded" ? scheduler::Outcome::succeeded : scheduler::Outcome::failed;
            }
            step.duration = std::chrono::milliseconds{s.value("duration_ms", std::int64_t{0})};
            step.summary = read_optional_text(s, "summary");
            step.refinement_error = read_optional_text(s, "refinement_error");
            r.steps.push_back(std::move(step));
        }
        r.termination = termination_from_string(j.at("termination").get<std::string>());
        r.final_answer = read_optional_text(j, "final_answer");
        r.wall_time = std::chrono::milliseconds{j.value("wall_time_ms", std::int64_t{0})};
        for (const auto& t : j.value("dialogue", ordered_json::array())) {
            r.dialogue.push_back(
                {backend::role_from_string(t.at("role").get<std::string>()), t.at("content").get<std::string>()});
        }
        return r;
    } catch (const RecordFormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw RecordFormatError(std::string("malformed trajectory record: ") + e.what());
    }
}

std::string dump_record(const TrajectoryRecord& record) { return to_json(record).dump(2) + "\n"; }

TrajectoryRecord load_record(std::string_view text) {
    auto j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw RecordFormatError("trajectory record is not a JSON object");
    return record_from_json(j);
}

// ---- metrics ------------------------------------------------------------------

Rational::Rational(std::int64_t num, std::int64_t den) {
    if (den == 0) throw std::invalid_argument("rational with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const auto g = std::gcd(num, den);
    num_ = g ? num / g : 0;
    den_ = g ? den / g : 1;
}

std::string Rational::to_string() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

std::string Rational::to_fixed(int places) const {
    std::int64_t scale = 1;
    for (int i = 0; i < places; ++i) scale *= 10;
    const bool negative = num_ < 0;
    const std::int64_t n = negative ? -num_ : num_;
    const std::int64_t scaled = (2 * n * scale + den_) / (2 * den_);
    std::string digits = std::to_string(scaled / scale);
    if (places > 0) {
        std::string frac = std::to_string(scaled % scale);
        digits += "." + std::string(static_cast<std::size_t>(places) - frac.size(), '0') + frac;
    }
    return negative && scaled != 0 ? "-" + digits : digits;
}

Rational operator*(const Rational& a, const Rational& b) {
    // cross-reduce first to keep the products small
    const auto g1 = std::gcd(a.num_, b.den_);
    const auto g2 = std::gcd(b.num_, a.den_);
    const auto d1 = g1 ? g1 : 1;
    const auto d2 = g2 ? g2 : 1;
    return Rational((a.num_ / d1) * (b.num_ / d2), (a.den_ / d2) * (b.den_ / d1));
}

Metrics compute_metrics(const TrajectoryRecord& record) {
    Metrics m;
    for (const auto& step : record.steps) {
        const auto calls = static_cast<std::int64_t>(step.envelope.tool_calls.size());
        m.per_step.push_back(calls);
        m.total_tool_calls += calls;
        ++m.distribution[calls];
    }
    m.total_steps = static_cast<std::int64_t>(record.steps.size());
    m.tool_calls_per_step = m.total_steps ? Rational(m.total_tool_calls, m.total_steps) : Rational(0);
    return m;
}

CorpusMetrics aggregate_metrics(const std::vector<Metrics>& metrics) {
    CorpusMetrics c;
    for (const auto& m : metrics) {
        ++c.trajectories;
        c.total_steps += m.total_steps;
        c.total_tool_calls += m.total_tool_calls;
        for (const auto& [k, n] : m.distribution) c.calls_distribution[k] += n;
        ++c.steps_distribution[m.total_steps];
    }
    c.tool_calls_per_step = c.total_steps ? Rational(c.total_tool_calls, c.total_steps) : Rational(0);
    c.mean_steps = c.trajectories ? Rational(c.total_steps, c.trajectories) : Rational(0);
    return c;
}

namespace {

ordered_json distribution_json(const std::map<std::int64_t, std::int64_t>& d) {
    ordered_json out = ordered_json::object();
    for (const auto& [k, n] : d) out[std::to_string(k)] = n;
    return out;
}

ordered_json rational_json(const Rational& r) {
    return {{"value", r.to_double()}, {"exact", r.to_string()}, {"display", r.to_fixed(2)}};
}

}  // namespace

ordered_json to_json(const Metrics& m) {
    return {{"total_steps", m.total_steps},
            {"total_tool_calls", m.total_tool_calls},
            {"tool_calls_per_step", rational_json(m.tool_calls_per_step)},
            {"per_step", m.per_step},
            {"distribution", distribution_json(m.distribution)}};
}

ordered_json to_json(const CorpusMetrics& m) {
    return {{"trajectories", m.trajectories},
            {"total_steps", m.total_steps},
            {"total_tool_calls", m.total_tool_calls},
            {"tool_calls_per_step", rational_json(m.tool_calls_per_step)},
            {"mean_steps", rational_json(m.mean_steps)},
            {"calls_distribution", distribution_json(m.calls_distribution)},
            {"steps_distribution", distribution_json(m.steps_distribution)},
            {"baselines",
             {{"oagents_tool_calls_per_step", kOAgentsToolCallsPerStep},
              {"owl_roleplaying_tool_calls_per_step", kOwlRoleplayingToolCallsPerStep}}}};
}

// ---- SFT export -----------------------------------------------------------------

ordered_json to_json(const SftDialogue& d) {
    ordered_json msgs = ordered_json::array();
    for (const auto& m : d.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"messages", msgs}};
}

SftDialogue dialogue_from_json(const ordered_json& j) {
    SftDialogue d;
    try {
        for (const auto& m : j.at("messages")) {
            d.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
        }
    } catch (const ordered_json::exception& e) {
        throw RecordFormatError(std::string("malformed SFT dialogue: ") + e.what());
    }
    return d;
}

namespace {

std::string standard_tool_list() {
    tools::ToolRegistry registry;
    const auto unused = [](const tools::Arguments&) -> std::string { throw tools::ToolError("not executable"); };
    registry.add(tools::web_search_spec(), unused);
    registry.add(tools::crawl_page_spec(), unused);
    return registry.render_tool_list();
}

std::string observation_text(const backend::ActionEnvelope& env, const std::vector<tools::Observation>& obs) {
    backend::ActionEnvelope trimmed = env;
    trimmed.tool_calls.resize(std::min(env.tool_calls.size(), obs.size()));
    std::vector<tools::Observation> matched(obs.begin(), obs.begin() + static_cast<std::ptrdiff_t>(trimmed.tool_calls.size()));
    return engine::render_observations(trimmed, matched);
}

}  // namespace

SftDialogue export_sft(const TrajectoryRecord& record, const SftExportOptions& options) {
    if (record.termination != Termination::final_answer || !record.final_answer) {
        throw ExportError("record '" + record.task_id + "' did not end with a final answer (termination " +
                          std::string(to_string(record.termination)) + ")");
    }
    if (record.steps.empty()) throw ExportError("record '" + record.task_id + "' has no steps");

    namespace prompts = backend::prompts;
    SftDialogue d;
    const std::string tool_list = options.tool_list.empty() ? standard_tool_list() : options.tool_list;
    d.messages.push_back({"system", backend::render_prompt(prompts::get(prompts::kTrainingSystem),
                                                           {{"tools", tool_list},
                                                            {"max_tool_calls", std::to_string(options.max_tool_calls)}})});
    d.messages.push_back({"user", backend::render_prompt(prompts::get(prompts::kTask), {{"task", record.task_text}})});

    std::optional<backend::ActionEnvelope> lead;
    if (!record.plan_versions.empty()) {
        lead = backend::ActionEnvelope{backend::Phase::plan, "\n" + record.plan_versions.front().text, {}};
    }
    for (const auto& step : record.steps) {
        backend::ActionEnvelope action = step.envelope;
        if (lead) {
            action.phase = lead->phase;
            action.phase_text = lead->phase_text;
            lead.reset();
        }
        d.messages.push_back({"assistant", backend::serialize_envelope(action)});
        if (!step.observations.empty()) d.messages.push_back({"user", observation_text(step.envelope, step.observations)});
        if (step.summary && !step.refinement_error) {
            lead = backend::ActionEnvelope{backend::Phase::summary, *step.summary, {}};
        }
    }
    return d;
}

std::string_view to_string(FlawKind k) {
    switch (k) {
        case FlawKind::invalid_dialogue_hierarchy: return "invalid_dialogue_hierarchy";
        case FlawKind::missing_action_label: return "missing_action_label";
        case FlawKind::incomplete_turn_segmentation: return "incomplete_turn_segmentation";
    }
    return "invalid_dialogue_hierarchy";
}

namespace {

std::size_t count_of(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto at = hay.find(needle); at != std::string_view::npos; at = hay.find(needle, at + needle.size())) ++n;
    return n;
}

std::optional<std::string> label_problem(std::string_view content) {
    static constexpr std::string_view kTags[] = {"plan", "think", "summary"};
    const std::string body = text::trim(content);
    std::size_t opened = 0;
    std::string_view leading;
    for (auto tag : kTags) {
        const std::string open = "<" + std::string(tag) + ">";
        opened += count_of(body, open);
        if (body.rfind(open, 0) == 0) leading = tag;
    }
    if (leading.empty()) return "does not open with <plan>, <think> or <summary>";
    if (opened != 1) return "contains " + std::to_string(opened) + " phase tags";
    const std::string close = "</" + std::string(leading) + ">";
    if (count_of(body, close) != 1) return "phase <" + std::string(leading) + "> is not closed exactly once";
    return std::nullopt;
}

std::optional<std::string> segmentation_problem(std::string_view content, int max_tool_calls) {
    const std::string body = text::trim(content);
    if (count_of(body, "<tools>") != 1 || count_of(body, "</tools>") != 1) return "needs exactly one <tools> block";
    if (!body.ends_with("</tools>")) return "text follows the <tools> block";
    try {
        backend::parse_envelope(body, max_tool_calls);
    } catch (const backend::EnvelopeParseError& e) {
        return std::string("action does not parse: ") + e.what();
    }
    return std::nullopt;
}

}  // namespace

std::vector<Flaw> validate_sft(const SftDialogue& dialogue, int max_tool_calls) {
    std::vector<Flaw> flaws;
    const auto& m = dialogue.messages;
    if (m.size() < 3) {
        flaws.push_back({FlawKind::invalid_dialogue_hierarchy, 0, "fewer than three messages"});
        return flaws;
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        const char* expected = i == 0 ? "system" : (i % 2 == 1 ? "user" : "assistant");
        if (m[i].role != expected) {
            flaws.push_back({FlawKind::invalid_dialogue_hierarchy, i,
                             "expected role " + std::string(expected) + ", found '" + m[i].role + "'"});
        }
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].role != "assistant") continue;
        if (auto p = label_problem(m[i].content)) {
            flaws.push_back({FlawKind::missing_action_label, i, *p});
        } else if (auto s = segmentation_problem(m[i].content, max_tool_calls)) {
            flaws.push_back({FlawKind::incomplete_turn_segmentation, i, *s});
        }
        if (i + 1 == m.size()) {
            flaws.push_back({FlawKind::incomplete_turn_segmentation, i, "final action has no observation"});
        }
    }
    return flaws;
}

// ---- filtering ------------------------------------------------------------------

std::string_view to_string(RejectReason r) {
    switch (r) {
        case RejectReason::missing_gold_answer: return "missing_gold_answer";
        case RejectReason::not_answer_terminated: return "not_answer_terminated";
        case RejectReason::judged_incorrect: return "judged_incorrect";
        case RejectReason::judge_error: return "judge_error";
        case RejectReason::invalid_dialogue_hierarchy: return "invalid_dialogue_hierarchy";
        case RejectReason::missing_action_label: return "missing_action_label";
        case RejectReason::incomplete_turn_segmentation: return "incomplete_turn_segmentation";
    }
    return "judge_error";
}

std::map<std::string, std::size_t> FilterResult::reason_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& r : rejected) ++out[std::string(to_string(r.reason))];
    return out;
}

namespace {

RejectReason reason_for(FlawKind k) {
    switch (k) {
        case FlawKind::invalid_dialogue_hierarchy: return RejectReason::invalid_dialogue_hierarchy;
        case FlawKind::missing_action_label: return RejectReason::missing_action_label;
        case FlawKind::incomplete_turn_segmentation: return RejectReason::incomplete_turn_segmentation;
    }
    return RejectReason::invalid_dialogue_hierarchy;
}

struct Screened {
    std::optional<Rejection> rejection;
    SftDialogue dialogue;
};

Screened screen(std::size_t index, const TrajectoryRecord& r, backend::ModelBackend& judge,
                const SftExportOptions& export_options) {
    if (!r.gold_answer) return {Rejection{index, RejectReason::missing_gold_answer, "record has no gold answer"}, {}};
    if (r.termination != Termination::final_answer || !r.final_answer) {
        return {Rejection{index, RejectReason::not_answer_terminated, std::string(to_string(r.termination))}, {}};
    }
    try {
        const auto verdict = backend::judge(r.task_text, *r.gold_answer, *r.final_answer, judge);
        if (!verdict.correct()) return {Rejection{index, RejectReason::judged_incorrect, verdict.rationale}, {}};
    } catch (const std::exception& e) {
        return {Rejection{index, RejectReason::judge_error, e.what()}, {}};
    }
    Screened out;
    try {
        out.dialogue = export_sft(r, export_options);
    } catch (const std::exception& e) {
        return {Rejection{index, RejectReason::incomplete_turn_segmentation, e.what()}, {}};
    }
    const auto flaws = validate_sft(out.dialogue, export_options.max_tool_calls);
    if (!flaws.empty()) {
        const auto& f = flaws.front();
        out.rejection = Rejection{index, reason_for(f.kind), "message " + std::to_string(f.message_index) + ": " + f.detail};
    }
    return out;
}

}  // namespace

FilterResult filter_corpus(const std::vector<TrajectoryRecord>& records, backend::ModelBackend& judge,
                           const FilterOptions& options) {
    std::vector<Screened> screened(records.size());
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.concurrency)), records.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < records.size(); ++i) screened[i] = screen(i, records[i], judge, options.export_options);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < records.size(); i = next++) {
                    screened[i] = screen(i, records[i], judge, options.export_options);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    FilterResult result;
    result.input_count = records.size();
    for (std::size_t i = 0; i < screened.size(); ++i) {
        auto& s = screened[i];
        const bool passed_judge = !s.rejection || (s.rejection->reason != RejectReason::missing_gold_answer &&
                                                   s.rejection->reason != RejectReason::not_answer_terminated &&
                                                   s.rejection->reason != RejectReason::judged_incorrect &&
                                                   s.rejection->reason != RejectReason::judge_error);
        if (passed_judge) ++result.judged_correct;
        if (s.rejection) {
            result.rejected.push_back(std::move(*s.rejection));
        } else {
            result.kept.push_back({i, std::move(s.dialogue)});
        }
    }
    return result;
}

}  // namespace fanout::trajectory
