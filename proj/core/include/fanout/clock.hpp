#pragma once

#include <chrono>

namespace fanout {

/// Time source for latencies and step durations. Tests inject FrozenClock so
/// trajectories serialize identically across runs.
class Clock {
public:
    using duration = std::chrono::nanoseconds;

    virtual ~Clock() = default;
    virtual duration now() const = 0;
};

class SteadyClock final : public Clock {
public:
    duration now() const override {
        return std::chrono::duration_cast<duration>(std::chrono::steady_clock::now().time_since_epoch());
    }
};

class FrozenClock final : public Clock {
public:
    duration now() const override { return duration::zero(); }
};

inline std::chrono::milliseconds to_ms(Clock::duration d) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(d);
}

}  // namespace fanout
