#pragma once

// Evaluation metrics over experiment traces: throughput (confirmed anchor
// transactions per second), run-to-run variability (coefficient of
// variation), and confirmation-delay distributions.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tanglefl::metrics {

struct MetricsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyRun : MetricsError {
    using MetricsError::MetricsError;
};
struct TooFewSamples : MetricsError {
    using MetricsError::MetricsError;
};
struct NoConfirmations : MetricsError {
    using MetricsError::MetricsError;
};

// One anchor transaction's lifecycle in a run.
struct ConfirmationSample {
    std::string block_hex;
    double submit_s = 0.0;
    double confirm_s = 0.0; // < submit_s means never confirmed

    bool confirmed() const { return confirm_s >= submit_s; }
    double delay_s() const { return confirm_s - submit_s; }
};

// Confirmed transactions divided by the span from first submission to last
// confirmation. Throws EmptyRun when nothing confirmed.
double compute_tps(const std::vector<ConfirmationSample>& samples);

// Span override (wall mode): confirmed / (span_end - span_begin).
double compute_tps(const std::vector<ConfirmationSample>& samples, double span_s);

struct Variability {
    double mean = 0.0;
    double std_dev = 0.0; // sample (n-1)
    double pct = 0.0;     // coefficient of variation x 100
};

// Requires >= 2 samples (TooFewSamples).
Variability variability(const std::vector<double>& tps_samples);

struct DelayQuantiles {
    double p25 = 0.0;
    double p50 = 0.0;
    double p75 = 0.0;
    double max = 0.0;
};

// Per-transaction confirmation delays, ascending.
std::vector<double> delay_samples(const std::vector<ConfirmationSample>& samples);

// Linear interpolation between order statistics.
DelayQuantiles delay_quantiles(std::vector<double> delays);
double quantile(const std::vector<double>& sorted, double q);

// Parses `submit`/`confirm` events back out of a persisted event log; the
// `report` subcommand uses this to recompute metrics from artifacts.
std::vector<ConfirmationSample> samples_from_event_log(const std::string& log_text);

struct RepeatMetrics {
    std::uint64_t repeat = 0;
    std::uint64_t seed = 0;
    double tps = 0.0;
    std::size_t confirmed = 0;
    double span_s = 0.0;
    std::vector<double> delays_s;
};

struct MetricsReport {
    std::vector<RepeatMetrics> repeats;
    std::vector<double> tps_samples;
    double tps_mean = 0.0;
    double tps_std = 0.0;
    double variability_pct = 0.0;
    DelayQuantiles quantiles;
    std::size_t n_delay_samples = 0;
};

MetricsReport merge_repeats(std::vector<RepeatMetrics> repeats);

} // namespace tanglefl::metrics
