#include "tanglefl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace tanglefl::metrics {

namespace {

struct Span {
    double begin;
    double end;
    std::size_t confirmed;
};

Span run_span(const std::vector<ConfirmationSample>& samples) {
    bool any = false;
    Span s{0.0, 0.0, 0};
    for (const auto& c : samples) {
        if (!c.confirmed()) continue;
        if (!any) {
            s.begin = c.submit_s;
            s.end = c.confirm_s;
            any = true;
        } else {
            s.begin = std::min(s.begin, c.submit_s);
            s.end = std::max(s.end, c.confirm_s);
        }
        ++s.confirmed;
    }
    if (!any) throw EmptyRun("no confirmed transactions in run");
    return s;
}

} // namespace

double compute_tps(const std::vector<ConfirmationSample>& samples) {
    const Span s = run_span(samples);
    const double span = s.end - s.begin;
    if (span <= 0.0) throw EmptyRun("degenerate run span");
    return static_cast<double>(s.confirmed) / span;
}

double compute_tps(const std::vector<ConfirmationSample>& samples, double span_s) {
    if (span_s <= 0.0) throw EmptyRun("span must be positive");
    const Span s = run_span(samples);
    return static_cast<double>(s.confirmed) / span_s;
}

Variability variability(const std::vector<double>& tps_samples) {
    if (tps_samples.size() < 2) throw TooFewSamples("need >= 2 samples");
    Variability v;
    for (double x : tps_samples) v.mean += x;
    v.mean /= static_cast<double>(tps_samples.size());
    double ss = 0.0;
    for (double x : tps_samples) ss += (x - v.mean) * (x - v.mean);
    v.std_dev = std::sqrt(ss / static_cast<double>(tps_samples.size() - 1));
    v.pct = v.mean > 0.0 ? v.std_dev / v.mean * 100.0 : 0.0;
    return v;
}

std::vector<double> delay_samples(const std::vector<ConfirmationSample>& samples) {
    std::vector<double> out;
    for (const auto& c : samples) {
        if (c.confirmed()) out.push_back(c.delay_s());
    }
    if (out.empty()) throw NoConfirmations("no confirmed transactions");
    std::sort(out.begin(), out.end());
    return out;
}

double quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw NoConfirmations("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

DelayQuantiles delay_quantiles(std::vector<double> delays) {
    std::sort(delays.begin(), delays.end());
    DelayQuantiles q;
    q.p25 = quantile(delays, 0.25);
    q.p50 = quantile(delays, 0.50);
    q.p75 = quantile(delays, 0.75);
    q.max = delays.back();
    return q;
}

std::vector<ConfirmationSample> samples_from_event_log(const std::string& log_text) {
    // submit lines:  <t_us> adapter submit block=<hex> ...
    // confirm lines: <t_us> coordinator confirm block=<hex> ...
    std::map<std::string, ConfirmationSample> by_block;
    std::vector<std::string> order;
    std::istringstream in(log_text);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        long long t_us = 0;
        std::string actor, kind, field;
        if (!(ls >> t_us >> actor >> kind >> field)) continue;
        if (field.rfind("block=", 0) != 0) continue;
        const std::string hex = field.substr(6);
        const double t = static_cast<double>(t_us) / 1e6;
        if (kind == "submit") {
            auto [it, inserted] = by_block.try_emplace(hex);
            if (inserted) {
                it->second.block_hex = hex;
                it->second.confirm_s = -1.0;
                order.push_back(hex);
            }
            it->second.submit_s = t;
        } else if (kind == "confirm" && actor == "coordinator") {
            auto it = by_block.find(hex);
            if (it != by_block.end() && !it->second.confirmed()) {
                it->second.confirm_s = t;
            }
        }
    }
    std::vector<ConfirmationSample> out;
    out.reserve(order.size());
    for (const auto& hex : order) out.push_back(by_block.at(hex));
    return out;
}

MetricsReport merge_repeats(std::vector<RepeatMetrics> repeats) {
    MetricsReport r;
    std::vector<double> all_delays;
    for (auto& rep : repeats) {
        r.tps_samples.push_back(rep.tps);
        all_delays.insert(all_delays.end(), rep.delays_s.begin(), rep.delays_s.end());
    }
    r.repeats = std::move(repeats);
    if (r.tps_samples.size() >= 2) {
        const Variability v = variability(r.tps_samples);
        r.tps_mean = v.mean;
        r.tps_std = v.std_dev;
        r.variability_pct = v.pct;
    } else if (r.tps_samples.size() == 1) {
        r.tps_mean = r.tps_samples[0];
    }
    if (!all_delays.empty()) {
        r.n_delay_samples = all_delays.size();
        r.quantiles = delay_quantiles(std::move(all_delays));
    }
    return r;
}

} // namespace tanglefl::metrics
