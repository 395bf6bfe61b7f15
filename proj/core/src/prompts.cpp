#include "fanout/prompts.hpp"

#include <algorithm>
#include <cctype>

#include "prompt_data.hpp"

namespace fanout::backend {

namespace {

struct Token {
    std::size_t begin;
    std::size_t end;  // one past '}'
    std::string name;
};

std::vector<Token> scan(std::string_view body) {
    std::vector<Token> out;
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i] != '{') continue;
        std::size_t j = i + 1;
        while (j < body.size() && (std::islower(static_cast<unsigned char>(body[j])) || body[j] == '_')) ++j;
        if (j > i + 1 && j < body.size() && body[j] == '}') {
            out.push_back({i, j + 1, std::string(body.substr(i + 1, j - i - 1))});
            i = j;
        }
    }
    return out;
}

}  // namespace

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> names;
    for (const auto& t : scan(body)) {
        if (std::find(names.begin(), names.end(), t.name) == names.end()) names.push_back(t.name);
    }
    return names;
}

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
    std::string out;
    std::size_t cursor = 0;
    for (const auto& t : scan(tmpl.body)) {
        auto it = bindings.find(t.name);
        if (it == bindings.end()) throw UnboundPlaceholder(t.name);
        out.append(tmpl.body, cursor, t.begin - cursor);
        out += it->second;
        cursor = t.end;
    }
    out.append(tmpl.body, cursor, std::string::npos);
    return out;
}

namespace prompts {

const PromptTemplate& get(std::string_view name) {
    static const std::vector<PromptTemplate> all = [] {
        std::vector<PromptTemplate> v;
        for (const auto& e : detail::embedded_prompts()) v.push_back({std::string(e.name), std::string(e.body)});
        return v;
    }();
    for (const auto& t : all) {
        if (t.name == name) return t;
    }
    throw std::out_of_range("no prompt template named '" + std::string(name) + "'");
}

std::vector<std::string> names() {
    std::vector<std::string> out;
    for (const auto& e : detail::embedded_prompts()) out.emplace_back(e.name);
    return out;
}

}  // namespace prompts

}  // namespace fanout::backend
