#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fanout/envelope.hpp"
#include "fanout/model.hpp"
#include "fanout/net.hpp"
#include "fanout/prompts.hpp"

namespace fanout::backend {

/// Thrown when a scripted backend is called out of order or past its end.
class ScriptError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Replies from a fixed list, checking each call's purpose. Calls are
/// serialized by a mutex, so concurrent use is safe but the reply order then
/// follows call arrival order.
class ScriptedBackend final : public ModelBackend {
public:
    using Entry = std::pair<Purpose, std::string>;

    explicit ScriptedBackend(std::vector<Entry> script);
    std::string generate(const std::vector<DialogueTurn>& turns, Purpose purpose) override;

    std::size_t consumed() const;
    std::size_t remaining() const;
    /// Prompts received so far, in call order.
    std::vector<std::vector<DialogueTurn>> requests() const;

private:
    mutable std::mutex mu_;
    std::vector<Entry> script_;
    std::size_t cursor_ = 0;
    std::vector<std::vector<DialogueTurn>> requests_;
};

/// Wraps a callable; as thread-safe as the callable.
class FunctionBackend final : public ModelBackend {
public:
    using Fn = std::function<std::string(const std::vector<DialogueTurn>&, Purpose)>;
    explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string generate(const std::vector<DialogueTurn>& turns, Purpose purpose) override { return fn_(turns, purpose); }

private:
    Fn fn_;
};

/// Deterministic offline stand-in used by `--mock` runs. It plans one goal
/// with two paths, searches for the task text, answers with the first result
/// title, summarizes generically, judges by normalized exact match, and
/// condenses pages to the lines that share words with the query.
class HeuristicBackend final : public ModelBackend {
public:
    std::string generate(const std::vector<DialogueTurn>& turns, Purpose purpose) override;
};

struct OpenAiConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model;
    std::string api_key;
    double temperature = 1.0;
    std::optional<std::string> reasoning_effort;  // passed through verbatim
    std::chrono::milliseconds timeout{120000};
    net::RetryPolicy retry;
};

/// POST {base_url}/chat/completions. Tool turns are sent with role "user".
class OpenAiCompatibleBackend final : public ModelBackend {
public:
    OpenAiCompatibleBackend(OpenAiConfig config, std::shared_ptr<net::HttpTransport> transport,
                            net::Sleeper sleeper = net::real_sleeper());
    std::string generate(const std::vector<DialogueTurn>& turns, Purpose purpose) override;

    /// The JSON request body for `turns`; exposed for tests.
    std::string request_body(const std::vector<DialogueTurn>& turns) const;

private:
    OpenAiConfig config_;
    std::shared_ptr<net::HttpTransport> transport_;
    net::Sleeper sleeper_;
};

// ---- judge ------------------------------------------------------------------

class JudgeParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Judgement { correct, incorrect };
std::string_view to_string(Judgement j);

struct Verdict {
    Judgement judgement = Judgement::incorrect;
    std::string rationale;

    bool correct() const { return judgement == Judgement::correct; }
};

/// Parses a judge reply: a JSON object (fences and surrounding prose
/// tolerated) whose "judgement" is "correct" or "incorrect".
Verdict parse_verdict(std::string_view reply);

/// Renders the judge prompt and parses the reply. Throws std::invalid_argument
/// on empty inputs and JudgeParseError on a malformed reply.
Verdict judge(const std::string& question, const std::string& gold, const std::string& predicted,
              ModelBackend& backend);

/// Correct verdicts over all verdicts; 0 for an empty batch.
double pass_at_1(const std::vector<Verdict>& verdicts);

}  // namespace fanout::backend
