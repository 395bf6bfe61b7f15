#include "fanout/envelope.hpp"

#include <algorithm>
#include <cctype>

#include "fanout/text.hpp"

namespace fanout::backend {

using nlohmann::ordered_json;

namespace {

constexpr std::size_t kSpanLimit = 200;

std::string clip(std::string_view s) {
    if (s.size() <= kSpanLimit) return std::string(s);
    return std::string(s.substr(0, text::utf8_prefix_bytes(s, kSpanLimit))) + "...";
}

[[noreturn]] void fail(const std::string& message, std::string_view span) {
    throw EnvelopeParseError(message, clip(span));
}

std::string strip_code_fence(std::string_view s) {
    std::string t = text::trim(s);
    if (t.rfind("```", 0) != 0) return t;
    auto nl = t.find('\n');
    if (nl == std::string::npos) return t;
    t.erase(0, nl + 1);
    auto end = t.rfind("```");
    if (end != std::string::npos) t.erase(end);
    return text::trim(t);
}

// Drops commas that directly precede a closing bracket, outside strings.
std::string strip_trailing_commas(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            out.push_back(c);
            if (c == '\\' && i + 1 < s.size()) {
                out.push_back(s[++i]);
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == ',') {
            std::size_t j = i + 1;
            while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
            if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
        }
        out.push_back(c);
    }
    return out;
}

std::optional<ordered_json> try_parse(std::string_view s) {
    auto j = ordered_json::parse(strip_trailing_commas(s), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

std::vector<tools::ToolCall> parse_calls(const ordered_json& tools_json, int max_calls) {
    if (!tools_json.is_array()) fail("\"tools\" must be a JSON array", tools_json.dump());
    if (tools_json.empty()) fail("envelope must contain at least one tool call", tools_json.dump());
    if (static_cast<int>(tools_json.size()) > max_calls) {
        fail("envelope has " + std::to_string(tools_json.size()) + " tool calls; at most " +
                 std::to_string(max_calls) + " allowed",
             tools_json.dump());
    }
    std::vector<tools::ToolCall> calls;
    for (const auto& item : tools_json) calls.push_back(tool_call_from_json(item));
    const bool has_final = std::any_of(calls.begin(), calls.end(),
                                       [](const auto& c) { return c.name == tools::kFinalAnswer; });
    if (has_final && calls.size() > 1) {
        fail("final_answer must be the only tool call in its envelope", tools_json.dump());
    }
    return calls;
}

ActionEnvelope parse_json_form(const std::string& body, int max_calls) {
    auto j = try_parse(body);
    if (!j || !j->is_object()) fail("reply is not a valid JSON object", body);
    ActionEnvelope env;
    int phases = 0;
    for (auto phase : {Phase::think, Phase::plan, Phase::summary}) {
        auto it = j->find(std::string(to_string(phase)));
        if (it == j->end()) continue;
        if (!it->is_string()) fail("phase field must be a string", it->dump());
        env.phase = phase;
        env.phase_text = it->get<std::string>();
        ++phases;
    }
    if (phases != 1) fail("envelope needs exactly one of \"think\", \"plan\", \"summary\"", body);
    auto tools_it = j->find("tools");
    if (tools_it == j->end()) fail("envelope has no \"tools\" field", body);
    env.tool_calls = parse_calls(*tools_it, max_calls);
    return env;
}

ActionEnvelope parse_tagged_form(const std::string& body, int max_calls) {
    std::optional<Phase> phase;
    for (auto p : {Phase::think, Phase::plan, Phase::summary}) {
        if (body.rfind("<" + std::string(to_string(p)) + ">", 0) == 0) phase = p;
    }
    if (!phase) fail("reply must start with <think>, <plan>, or <summary>", body);
    const std::string open = "<" + std::string(to_string(*phase)) + ">";
    const std::string close = "</" + std::string(to_string(*phase)) + ">";
    static const std::string tools_open = "<tools>";
    static const std::string tools_close = "</tools>";

    if (body.size() < tools_close.size() ||
        body.compare(body.size() - tools_close.size(), tools_close.size(), tools_close) != 0) {
        fail("reply must end with a </tools> block", body.substr(body.size() > 80 ? body.size() - 80 : 0));
    }
    const std::size_t tools_end = body.size() - tools_close.size();

    std::string last_error = "no " + close + " followed by a <tools> block";
    std::string last_span = body;
    for (auto pos = body.find(close, open.size()); pos != std::string::npos; pos = body.find(close, pos + 1)) {
        std::size_t after = pos + close.size();
        while (after < body.size() && std::isspace(static_cast<unsigned char>(body[after]))) ++after;
        if (body.compare(after, tools_open.size(), tools_open) != 0) continue;
        const std::size_t array_begin = after + tools_open.size();
        if (array_begin > tools_end) continue;
        const std::string array_text = body.substr(array_begin, tools_end - array_begin);
        auto j = try_parse(array_text);
        if (!j || !j->is_array()) {
            last_error = "<tools> block is not a JSON array";
            last_span = array_text;
            continue;
        }
        ActionEnvelope env;
        env.phase = *phase;
        env.phase_text = body.substr(open.size(), pos - open.size());
        env.tool_calls = parse_calls(*j, max_calls);
        return env;
    }
    fail(last_error, last_span);
}

}  // namespace

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::plan: return "plan";
        case Phase::think: return "think";
        case Phase::summary: return "summary";
    }
    return "think";
}

Phase phase_from_string(std::string_view s) {
    if (s == "plan") return Phase::plan;
    if (s == "think") return Phase::think;
    if (s == "summary") return Phase::summary;
    throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

bool ActionEnvelope::is_final_answer() const {
    return tool_calls.size() == 1 && tool_calls.front().name == tools::kFinalAnswer;
}

EnvelopeParseError::EnvelopeParseError(const std::string& message, std::string span)
    : std::runtime_error(message + (span.empty() ? "" : " near: " + span)), span_(std::move(span)) {}

ordered_json tool_call_to_json(const tools::ToolCall& call) {
    ordered_json j;
    j["name"] = call.name;
    ordered_json args = ordered_json::object();
    for (const auto& [k, v] : call.arguments) args[k] = v;
    j["arguments"] = std::move(args);
    if (call.path) j["path"] = call.path->to_string();
    return j;
}

tools::ToolCall tool_call_from_json(const ordered_json& j) {
    if (!j.is_object()) fail("tool call must be a JSON object", j.dump());
    tools::ToolCall call;
    auto name = j.find("name");
    if (name == j.end() || !name->is_string() || name->get<std::string>().empty()) {
        fail("tool call needs a non-empty string \"name\"", j.dump());
    }
    call.name = name->get<std::string>();

    auto args = j.find("arguments");
    if (args != j.end() && !args->is_null()) {
        if (args->is_string()) {
            if (call.name != tools::kFinalAnswer) {
                fail("arguments of " + call.name + " must be a JSON object", j.dump());
            }
            call.arguments.emplace_back("answer", args->get<std::string>());
        } else if (args->is_object()) {
            for (const auto& [k, v] : args->items()) {
                call.arguments.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
            }
        } else {
            fail("arguments must be a JSON object", j.dump());
        }
    }

    auto path = j.find("path");
    if (path != j.end() && !path->is_null()) {
        if (!path->is_string()) fail("\"path\" must be a string such as \"1.2\"", j.dump());
        try {
            auto id = plan::NodeId::parse(path->get<std::string>());
            if (!id.is_path()) throw std::invalid_argument("goal id");
            call.path = id;
        } catch (const std::invalid_argument&) {
            fail("\"path\" must name a plan path such as \"1.2\"", j.dump());
        }
    }
    return call;
}

ActionEnvelope parse_envelope(std::string_view reply, int max_calls) {
    const std::string body = strip_code_fence(reply);
    if (body.empty()) fail("empty reply", "");
    if (body.front() == '{') return parse_json_form(body, max_calls);
    return parse_tagged_form(body, max_calls);
}

std::string dump_spaced(const ordered_json& j) {
    if (j.is_object()) {
        std::string out = "{";
        bool first = true;
        for (const auto& [k, v] : j.items()) {
            if (!first) out += ", ";
            first = false;
            out += ordered_json(k).dump() + ": " + dump_spaced(v);
        }
        return out + "}";
    }
    if (j.is_array()) {
        std::string out = "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) out += ", ";
            out += dump_spaced(j[i]);
        }
        return out + "]";
    }
    return j.dump();
}

std::string serialize_tool_calls(const std::vector<tools::ToolCall>& calls) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : calls) arr.push_back(tool_call_to_json(c));
    return dump_spaced(arr);
}

std::string serialize_envelope(const ActionEnvelope& envelope) {
    const std::string tag(to_string(envelope.phase));
    return "<" + tag + ">" + envelope.phase_text + "</" + tag + "><tools>" +
           serialize_tool_calls(envelope.tool_calls) + "</tools>";
}

}  // namespace fanout::backend
