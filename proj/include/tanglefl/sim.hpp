#pragma once

// Deterministic discrete-event fabric: simulated clock with a (time, seq)
// ordered queue, a topic pub/sub bus with MQTT-style matching, and the
// per-device timing profile used by simulated IoT clients.

#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tanglefl/rng.hpp"

namespace tanglefl::sim {

struct PastTime : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::int64_t to_micros(double seconds) {
    return static_cast<std::int64_t>(std::llround(seconds * 1e6));
}

class SimClock {
public:
    double now() const { return now_; }

    // Fires exactly once at `at`; same-time events fire in insertion order.
    void schedule(double at, std::function<void()> fn);
    void schedule_in(double delay, std::function<void()> fn) {
        schedule(now_ + delay, std::move(fn));
    }

    bool empty() const { return queue_.empty(); }
    std::size_t pending() const { return queue_.size(); }

    // Runs the next event; returns false when the queue is empty.
    bool step();
    void run_all();
    // Runs events with time <= t, then advances the clock to t.
    void run_until(double t);

private:
    struct Entry {
        double at;
        std::uint64_t seq;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.seq > b.seq;
        }
    };

    double now_ = 0.0;
    std::uint64_t seq_ = 0;
    std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
};

struct TopicMessage {
    std::string topic;
    std::vector<std::uint8_t> payload;
    double publish_time = 0.0;
};

// MQTT topic filter match: '+' spans one level, trailing '#' the rest.
bool topic_matches(std::string_view pattern, std::string_view topic);

// QoS0 analog: publishes are delivered to every matching subscriber after
// the configured bus latency; no subscriber means the message is dropped.
class TopicBus {
public:
    TopicBus(SimClock& clock, double latency_s) : clock_(clock), latency_(latency_s) {}

    using Handler = std::function<void(const TopicMessage&)>;

    void subscribe(std::string pattern, Handler handler);
    void publish(std::string_view topic, std::vector<std::uint8_t> payload);

    double latency() const { return latency_; }

private:
    struct Subscription {
        std::string pattern;
        Handler handler;
    };

    SimClock& clock_;
    double latency_;
    std::vector<Subscription> subs_;
};

// Newline-delimited experiment trace: time in integer microseconds, the
// acting component, an event kind, and a free-form detail field.
class EventLog {
public:
    void add(double t, std::string_view actor, std::string_view kind,
             std::string_view detail);
    const std::vector<std::string>& lines() const { return lines_; }
    std::string dump() const;

private:
    std::vector<std::string> lines_;
};

enum class AdversaryKind {
    none,
    random_weights,   // correct-shape params with garbage values
    stale_round,      // replays the previous round number
    duplicate_spam,   // submits the same update twice
};

AdversaryKind adversary_kind_from_string(std::string_view s);
std::string_view to_string(AdversaryKind k);

// Timing and behavior profile of one simulated IoT client. Compute delay is
// lognormal around a configurable base; draws are reproducible under seed.
struct DeviceProfile {
    std::string device_id;
    std::string credential;
    double base_compute_s = 4.0;
    double compute_jitter_sigma = 0.35;
    double net_delay_s = 0.2;
    AdversaryKind adversary = AdversaryKind::none;
    Rng rng{0};

    double draw_compute_delay() {
        return rng.lognormal(base_compute_s, compute_jitter_sigma);
    }
};

} // namespace tanglefl::sim
