#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fanout::backend {

enum class Role { system, user, assistant, tool };

std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct DialogueTurn {
    Role role = Role::user;
    std::string content;

    friend bool operator==(const DialogueTurn&, const DialogueTurn&) = default;
};

enum class Purpose { plan, act, summarize, judge, summarize_page };

std::string_view to_string(Purpose p);
Purpose purpose_from_string(std::string_view s);

class BackendUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A language model endpoint. Implementations must tolerate concurrent calls.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual std::string generate(const std::vector<DialogueTurn>& turns, Purpose purpose) = 0;
};

}  // namespace fanout::backend
