#pragma once

// Experiment runner: builds a fresh seeded world per repeat (ledger nodes,
// coordinator, adapter/verifier/aggregator, device actors), executes the
// round protocol, and persists logs, snapshots, and reports. Also hosts the
// artifact audit behind the `verify` subcommand and report recomputation.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "tanglefl/dapp.hpp"
#include "tanglefl/metrics.hpp"

namespace tanglefl::experiment {

struct InvalidConfig : std::runtime_error {
    std::string field;
    InvalidConfig(std::string field_name, const std::string& why)
        : std::runtime_error("invalid config field `" + field_name + "`: " + why),
          field(std::move(field_name)) {}
};

struct AdversarySpec {
    sim::AdversaryKind kind = sim::AdversaryKind::none;
    std::uint64_t count = 0;
};

// "kind:count", e.g. "random-weights:4".
AdversarySpec parse_adversary_spec(const std::string& s);

struct ExperimentConfig {
    std::string exp_id = "exp";
    std::uint64_t rounds = 10;
    std::uint64_t repeats = 10;
    std::uint64_t n_clients = 20;
    double milestone_interval_s = 10.0;
    double alpha = 0.5;
    double penalty_alpha = 0.5;
    double threshold = 0.2;
    double initial_reputation = 0.5;
    std::uint64_t seed = 42;
    std::vector<AdversarySpec> adversaries;
    std::string out_dir; // empty = keep artifacts in memory only
    std::string format = "structured"; // structured | csv

    // model and data
    std::uint64_t input_dim = 16;
    std::uint64_t hidden_dim = 32;
    std::uint64_t n_classes = 10;
    std::uint64_t total_samples = 2000;
    std::uint64_t validation_samples = 500;
    double non_iid_alpha = 0.5;
    std::uint64_t epochs = 20;
    std::uint64_t batch_size = 32;
    double learning_rate = 0.15;
    std::string dataset_csv; // optional external dataset

    // timing
    double collection_window_s = 30.0;
    double base_compute_s = 4.0;
    double compute_jitter_sigma = 0.35;
    double net_delay_s = 0.2;
    double bus_latency_s = 0.01;
    double gossip_latency_s = 0.1;
    double pow_cost_s = 0.0;
    double rate_cap_blocks_per_s = 0.0;

    std::uint64_t ledger_nodes = 2;
    std::uint64_t quorum = 0; // 0 = max(1, ceil(n_clients / 2))
    bool reputation_enabled = true;
    std::string kernel_backend = "auto";
    std::string span_mode = "activity"; // activity | wall
    std::uint64_t jobs = 1;

    std::size_t resolved_quorum() const {
        if (quorum > 0) return quorum;
        return std::max<std::size_t>(1, (n_clients + 1) / 2);
    }
    fl::Shapes shapes() const { return {input_dim, hidden_dim, n_classes}; }
};

// Defaults < config file < explicit overrides; throws InvalidConfig naming
// the offending field.
ExperimentConfig config_from_json(const nlohmann::json& file_values,
                                  const nlohmann::json& overrides);
void validate_config(const ExperimentConfig& cfg);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct RepeatOutput {
    metrics::RepeatMetrics perf;
    std::vector<dapp::RoundResult> rounds;
    std::string event_log;
    std::string ledger_snapshot;
    std::string reputation_csv;
    double final_accuracy = 0.0;
    std::map<std::string, double> final_reputation;
    std::vector<std::string> final_unreliable;
};

// One fully seeded world; writes artifacts under `artifacts_dir` when given.
RepeatOutput run_repeat(const ExperimentConfig& cfg, std::uint64_t repeat_index,
                        const std::string& artifacts_dir);

struct ExperimentOutput {
    metrics::MetricsReport report;
    std::vector<RepeatOutput> repeats;
    nlohmann::json summary;
};

// Runs all repeats (in parallel when cfg.jobs > 1), merges metrics, writes
// the summary under <out_dir>/<exp_id>/ when out_dir is set.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

// Paper protocol: rounds in {10, 30, 50}; each point is a full experiment
// under <out>/<exp_id>/rounds_<n>/. Returns the sweep summary document.
nlohmann::json run_sweep(const ExperimentConfig& base,
                         const std::vector<std::uint64_t>& round_points);

struct AuditViolation {
    std::string kind; // BlockIdMismatch, DanglingParent, MalformedAnchor,
                      // MissingBlob, BlobCorrupt, MissingContrib,
                      // UnconfirmedContrib, RepDigestMismatch
    std::string where;
    std::string detail;
};

// Integrity audit over a persisted experiment directory tree.
std::vector<AuditViolation> audit_experiment(const std::string& exp_dir);

// Recomputes the metrics summary from persisted event logs.
nlohmann::json recompute_report(const std::string& exp_dir);

// Small filesystem helpers shared with the CLI.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

} // namespace tanglefl::experiment
