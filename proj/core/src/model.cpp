#include "fanout/model.hpp"

#include "fanout/text.hpp"
#include "fanout/tool_call.hpp"

namespace fanout::backend {

std::string_view to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
        case Role::tool: return "tool";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    if (s == "tool") return Role::tool;
    throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

std::string_view to_string(Purpose p) {
    switch (p) {
        case Purpose::plan: return "plan";
        case Purpose::act: return "act";
        case Purpose::summarize: return "summarize";
        case Purpose::judge: return "judge";
        case Purpose::summarize_page: return "summarize_page";
    }
    return "act";
}

Purpose purpose_from_string(std::string_view s) {
    if (s == "plan") return Purpose::plan;
    if (s == "act") return Purpose::act;
    if (s == "summarize") return Purpose::summarize;
    if (s == "judge") return Purpose::judge;
    if (s == "summarize_page") return Purpose::summarize_page;
    throw std::invalid_argument("unknown purpose '" + std::string(s) + "'");
}

}  // namespace fanout::backend

namespace fanout::tools {

const std::string* find_argument(const Arguments& args, std::string_view name) {
    for (const auto& [k, v] : args) {
        if (k == name) return &v;
    }
    return nullptr;
}

std::string_view to_string(ObservationStatus s) { return s == ObservationStatus::ok ? "ok" : "error"; }

ObservationStatus observation_status_from_string(std::string_view s) {
    if (s == "ok") return ObservationStatus::ok;
    if (s == "error") return ObservationStatus::error;
    throw std::invalid_argument("unknown observation status '" + std::string(s) + "'");
}

std::string python_dict_repr(const Arguments& args) {
    std::string out = "{";
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (i) out += ", ";
        out += text::python_repr(args[i].first) + ": " + text::python_repr(args[i].second);
    }
    return out + "}";
}

}  // namespace fanout::tools
