#include "tanglefl/sim.hpp"

#include <cstdio>

namespace tanglefl::sim {

void SimClock::schedule(double at, std::function<void()> fn) {
    if (at < now_) {
        throw PastTime("schedule at " + std::to_string(at) + " before now " +
                       std::to_string(now_));
    }
    queue_.push(Entry{at, seq_++, std::move(fn)});
}

bool SimClock::step() {
    if (queue_.empty()) return false;
    Entry e = queue_.top();
    queue_.pop();
    now_ = e.at;
    e.fn();
    return true;
}

void SimClock::run_all() {
    while (step()) {
    }
}

void SimClock::run_until(double t) {
    while (!queue_.empty() && queue_.top().at <= t) step();
    if (t > now_) now_ = t;
}

bool topic_matches(std::string_view pattern, std::string_view topic) {
    std::size_t pi = 0, ti = 0;
    while (pi < pattern.size()) {
        std::size_t pe = pattern.find('/', pi);
        if (pe == std::string_view::npos) pe = pattern.size();
        std::string_view plevel = pattern.substr(pi, pe - pi);

        if (plevel == "#") return pe == pattern.size();

        if (ti > topic.size()) return false;
        std::size_t te = topic.find('/', ti);
        if (te == std::string_view::npos) te = topic.size();
        std::string_view tlevel = topic.substr(ti, te - ti);

        if (plevel != "+" && plevel != tlevel) return false;

        pi = pe < pattern.size() ? pe + 1 : pe;
        bool topic_done = te >= topic.size();
        ti = topic_done ? topic.size() + 1 : te + 1;
        if (pi >= pattern.size()) return topic_done;
    }
    return ti > topic.size();
}

void TopicBus::subscribe(std::string pattern, Handler handler) {
    subs_.push_back(Subscription{std::move(pattern), std::move(handler)});
}

void TopicBus::publish(std::string_view topic, std::vector<std::uint8_t> payload) {
    if (topic.empty()) throw std::invalid_argument("publish on empty topic");
    TopicMessage msg{std::string(topic), std::move(payload), clock_.now()};
    // Capture the subscription index, not a handler reference: subs_ may
    // reallocate if subscriptions are added before delivery fires.
    for (std::size_t i = 0; i < subs_.size(); ++i) {
        if (!topic_matches(subs_[i].pattern, msg.topic)) continue;
        clock_.schedule_in(latency_, [this, i, msg]() { subs_[i].handler(msg); });
    }
}

void EventLog::add(double t, std::string_view actor, std::string_view kind,
                   std::string_view detail) {
    char head[32];
    std::snprintf(head, sizeof(head), "%lld", static_cast<long long>(to_micros(t)));
    std::string line(head);
    line += ' ';
    line += actor;
    line += ' ';
    line += kind;
    if (!detail.empty()) {
        line += ' ';
        line += detail;
    }
    lines_.push_back(std::move(line));
}

std::string EventLog::dump() const {
    std::string out;
    for (const auto& l : lines_) {
        out += l;
        out += '\n';
    }
    return out;
}

AdversaryKind adversary_kind_from_string(std::string_view s) {
    if (s == "none") return AdversaryKind::none;
    if (s == "random-weights") return AdversaryKind::random_weights;
    if (s == "stale-round") return AdversaryKind::stale_round;
    if (s == "duplicate-spam") return AdversaryKind::duplicate_spam;
    throw std::invalid_argument("unknown adversary kind: " + std::string(s));
}

std::string_view to_string(AdversaryKind k) {
    switch (k) {
        case AdversaryKind::none: return "none";
        case AdversaryKind::random_weights: return "random-weights";
        case AdversaryKind::stale_round: return "stale-round";
        case AdversaryKind::duplicate_spam: return "duplicate-spam";
    }
    return "none";
}

} // namespace tanglefl::sim
