#include "fanout/backend.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "fanout/text.hpp"

namespace fanout::backend {

using nlohmann::ordered_json;

// ---- scripted -----------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<Entry> script) : script_(std::move(script)) {}

std::string ScriptedBackend::generate(const std::vector<DialogueTurn>& turns, Purpose purpose) {
    std::lock_guard lock(mu_);
    if (cursor_ >= script_.size()) {
        throw ScriptError("script exhausted after " + std::to_string(script_.size()) + " replies; got a " +
                          std::string(to_string(purpose)) + " request");
    }
    const auto& [expected, reply] = script_[cursor_];
    if (expected != purpose) {
        throw ScriptError("script entry " + std::to_string(cursor_) + " expects a " +
                          std::string(to_string(expected)) + " request, got " + std::string(to_string(purpose)));
    }
    requests_.push_back(turns);
    ++cursor_;
    return reply;
}

std::size_t ScriptedBackend::consumed() const {
    std::lock_guard lock(mu_);
    return cursor_;
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mu_);
    return script_.size() - cursor_;
}

std::vector<std::vector<DialogueTurn>> ScriptedBackend::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

// ---- heuristic ------------------------------------------------------------------

namespace {

std::string between(std::string_view s, std::string_view open, std::string_view close) {
    auto b = s.rfind(open);
    if (b == std::string_view::npos) return {};
    b += open.size();
    auto e = s.find(close, b);
    return text::trim(s.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
}

std::string normalize_answer(std::string_view s) {
    std::string out;
    for (char c : text::to_lower(s)) {
        if (std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80) {
            out.push_back(c);
        } else {
            out.push_back(' ');
        }
    }
    return text::collapse_whitespace(out);
}

std::set<std::string> words(std::string_view s) {
    std::set<std::string> out;
    std::string cur;
    for (char c : normalize_answer(s) + " ") {
        if (c == ' ') {
            if (cur.size() > 2) out.insert(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

std::string heuristic_plan() {
    return "## Goal 1: Find the answer to the task\n"
           "- Path 1.1: Search the web for the task text and read the top result\n"
           "- Success: A search result states the answer\n"
           "- Path 1.2: Search again with a reformulated query\n"
           "- Success: A search result states the answer\n";
}

std::string heuristic_act(const std::vector<DialogueTurn>& turns) {
    const std::string& prompt = turns.empty() ? std::string() : turns.back().content;
    const std::string task = between(prompt, "# Your original task:\n", "\n\n# Plan Execution Guidelines");

    const DialogueTurn* last_search = nullptr;
    for (const auto& t : turns) {
        if (t.role == Role::tool && t.content.rfind("Results for tool call web_search", 0) == 0) last_search = &t;
    }
    ActionEnvelope env;
    if (!last_search) {
        env.phase_text = "Search the web for the task.";
        env.tool_calls.push_back({"web_search", {{"query", task}}, std::nullopt});
        return serialize_envelope(env);
    }
    static const std::regex title_re(R"(: 1\. \[([^\]\n]*)\]\()");
    std::smatch m;
    std::string answer = "unknown";
    if (std::regex_search(last_search->content, m, title_re)) answer = m[1].str();
    env.phase_text = "The search results are sufficient to answer.";
    env.tool_calls.push_back({std::string(tools::kFinalAnswer), {{"answer", answer}}, std::nullopt});
    return serialize_envelope(env);
}

std::string heuristic_summary(const std::vector<DialogueTurn>& turns) {
    const std::string plan_text =
        between(turns.empty() ? std::string() : turns.back().content, "# Current plan:\n", "\n\n# Agent execution trajectory");
    static const std::regex goal_re(R"(## Goal (\d+): ([^\n]*))");
    std::string out = "## Plan Summary\nThe plan is being executed goal by goal.\n\n## Execution Status Analysis\n";
    for (auto it = std::sregex_iterator(plan_text.begin(), plan_text.end(), goal_re); it != std::sregex_iterator(); ++it) {
        out += "### Goal " + (*it)[1].str() + ": " + (*it)[2].str() + "\n- Status: In Progress\n";
        out += "- Path Analysis: Work continues on the current path.\n\n";
    }
    out += "## Next Parallel Sub-Paths\nContinue the current paths.\n";
    return out;
}

std::string heuristic_judge(const std::vector<DialogueTurn>& turns) {
    const std::string& prompt = turns.empty() ? std::string() : turns.back().content;
    const auto gold = between(prompt, "Labeled Answer:", "\n\nPredicted Answer:");
    const auto pred = between(prompt, "Predicted Answer:", "\n\nAre these answers equivalent?");
    const bool same = !gold.empty() && normalize_answer(gold) == normalize_answer(pred);
    return ordered_json{{"rationale", same ? "normalized answers match" : "normalized answers differ"},
                        {"judgement", same ? "correct" : "incorrect"}}
        .dump();
}

std::string heuristic_page(const std::vector<DialogueTurn>& turns) {
    const std::string& prompt = turns.empty() ? std::string() : turns.back().content;
    const auto query = words(between(prompt, "# Information need:\n", "\n\n# Page URL:"));
    auto page_at = prompt.find("# Page content:\n");
    std::string page = page_at == std::string::npos ? std::string() : prompt.substr(page_at + 16);
    std::string out;
    int kept = 0;
    for (const auto& line : text::split_lines(page)) {
        if (kept >= 20) break;
        const auto w = words(line);
        if (std::any_of(w.begin(), w.end(), [&](const std::string& x) { return query.count(x) > 0; })) {
            if (!out.empty()) out += "\n";
            out += text::trim(line);
            ++kept;
        }
    }
    return out.empty() ? "No relevant information" : out;
}

}  // namespace

std::string HeuristicBackend::generate(const std::vector<DialogueTurn>& turns, Purpose purpose) {
    switch (purpose) {
        case Purpose::plan: return heuristic_plan();
        case Purpose::act: return heuristic_act(turns);
        case Purpose::summarize: return heuristic_summary(turns);
        case Purpose::judge: return heuristic_judge(turns);
        case Purpose::summarize_page: return heuristic_page(turns);
    }
    return {};
}

// ---- chat completions -------------------------------------------------------------

OpenAiCompatibleBackend::OpenAiCompatibleBackend(OpenAiConfig config, std::shared_ptr<net::HttpTransport> transport,
                                                 net::Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {}

std::string OpenAiCompatibleBackend::request_body(const std::vector<DialogueTurn>& turns) const {
    ordered_json messages = ordered_json::array();
    for (const auto& t : turns) {
        const Role role = t.role == Role::tool ? Role::user : t.role;
        messages.push_back({{"role", to_string(role)}, {"content", t.content}});
    }
    ordered_json body{{"model", config_.model}, {"messages", messages}, {"temperature", config_.temperature}};
    if (config_.reasoning_effort) body["reasoning_effort"] = *config_.reasoning_effort;
    return body.dump();
}

std::string OpenAiCompatibleBackend::generate(const std::vector<DialogueTurn>& turns, Purpose) {
    std::string base = config_.base_url;
    while (!base.empty() && base.back() == '/') base.pop_back();
    net::HttpRequest req;
    req.method = "POST";
    req.url = base + "/chat/completions";
    req.headers["Content-Type"] = "application/json";
    if (!config_.api_key.empty()) req.headers["Authorization"] = "Bearer " + config_.api_key;
    req.body = request_body(turns);
    req.timeout = config_.timeout;

    net::HttpResponse resp;
    try {
        resp = net::send_with_retry(*transport_, req, config_.retry, sleeper_);
    } catch (const std::exception& e) {
        throw BackendUnavailable(std::string("model request failed: ") + e.what());
    }
    auto j = ordered_json::parse(resp.body, nullptr, false);
    try {
        if (!j.is_discarded()) {
            const auto& content = j.at("choices").at(0).at("message").at("content");
            if (content.is_string()) return content.get<std::string>();
        }
    } catch (const ordered_json::exception&) {
        // fall through to the error below
    }
    throw BackendUnavailable("model reply has no choices[0].message.content");
}

// ---- judge ------------------------------------------------------------------

std::string_view to_string(Judgement j) { return j == Judgement::correct ? "correct" : "incorrect"; }

Verdict parse_verdict(std::string_view reply) {
    const auto b = reply.find('{');
    const auto e = reply.rfind('}');
    if (b == std::string_view::npos || e == std::string_view::npos || e < b) {
        throw JudgeParseError("judge reply contains no JSON object");
    }
    auto j = ordered_json::parse(reply.substr(b, e - b + 1), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw JudgeParseError("judge reply is not a valid JSON object");
    auto it = j.find("judgement");
    if (it == j.end() || !it->is_string()) throw JudgeParseError("judge reply has no string \"judgement\"");
    const auto value = text::to_lower(text::trim(it->get<std::string>()));
    Verdict v;
    if (value == "correct") {
        v.judgement = Judgement::correct;
    } else if (value == "incorrect") {
        v.judgement = Judgement::incorrect;
    } else {
        throw JudgeParseError("judgement can only be 'correct' or 'incorrect', got '" + it->get<std::string>() + "'");
    }
    if (auto r = j.find("rationale"); r != j.end() && r->is_string()) v.rationale = r->get<std::string>();
    return v;
}

Verdict judge(const std::string& question, const std::string& gold, const std::string& predicted,
              ModelBackend& backend) {
    if (text::trim(question).empty() || text::trim(gold).empty() || text::trim(predicted).empty()) {
        throw std::invalid_argument("judge needs a non-empty question, gold answer and predicted answer");
    }
    const auto prompt = render_prompt(prompts::get(prompts::kJudge),
                                      {{"question", question}, {"gt_answer", gold}, {"pred_answer", predicted}});
    return parse_verdict(backend.generate({{Role::user, prompt}}, Purpose::judge));
}

double pass_at_1(const std::vector<Verdict>& verdicts) {
    if (verdicts.empty()) return 0.0;
    const auto correct = std::count_if(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.correct(); });
    return static_cast<double>(correct) / static_cast<double>(verdicts.size());
}

}  // namespace fanout::backend
