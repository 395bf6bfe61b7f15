#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fanout::backend {

class UnboundPlaceholder : public std::invalid_argument {
public:
    explicit UnboundPlaceholder(const std::string& name)
        : std::invalid_argument("unbound placeholder {" + name + "}"), name_(name) {}
    const std::string& name() const { return name_; }

private:
    std::string name_;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

/// A prompt body with {lower_snake} placeholders. Other braces (JSON examples)
/// are literal text.
struct PromptTemplate {
    std::string name;
    std::string body;

    /// Distinct placeholder names in order of first appearance.
    std::vector<std::string> placeholders() const;
};

/// Single-pass substitution: bound values are not rescanned. Extra bindings
/// are ignored. Throws UnboundPlaceholder.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

namespace prompts {

/// Templates compiled in from prompts/templates. Throws std::out_of_range for
/// unknown names.
const PromptTemplate& get(std::string_view name);
std::vector<std::string> names();

inline constexpr std::string_view kSystem = "system";
inline constexpr std::string_view kPlan = "plan";
inline constexpr std::string_view kExecution = "execution";
inline constexpr std::string_view kReadyPaths = "ready_paths";
inline constexpr std::string_view kSummarySystem = "summary_system";
inline constexpr std::string_view kSummaryInstruction = "summary_instruction";
inline constexpr std::string_view kTrainingSystem = "training_system";
inline constexpr std::string_view kJudge = "judge";
inline constexpr std::string_view kCrawlSummary = "crawl_summary";
inline constexpr std::string_view kTask = "task";
inline constexpr std::string_view kContinue = "continue";

}  // namespace prompts

}  // namespace fanout::backend
