#pragma once

// DLT-DApp manager pipeline: the adapter gateway (authenticate, filter,
// store off-chain, anchor on-ledger) and the aggregator (verify, score,
// weight, FedAvg, publish, anchor). Decisions are made off-ledger and
// anchored; the round pipeline is the single writer of the reputation
// table and round state.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tanglefl/anchor.hpp"
#include "tanglefl/dag.hpp"
#include "tanglefl/fl.hpp"
#include "tanglefl/sim.hpp"
#include "tanglefl/store.hpp"
#include "tanglefl/trust.hpp"

namespace tanglefl::dapp {

struct NotFinalized : AnchorError {
    using AnchorError::AnchorError;
};
struct QuorumNotMet : AnchorError {
    using AnchorError::AnchorError;
};

// Device -> adapter bus payload.
struct SubmissionEnvelope {
    std::string device_id;
    std::string credential;
    std::uint64_t round = 0;
    std::uint64_t n_samples = 0;
    std::vector<std::uint8_t> params_blob;
};

std::vector<std::uint8_t> encode_envelope(const SubmissionEnvelope& env);
SubmissionEnvelope decode_envelope(const std::vector<std::uint8_t>& bytes);

enum class IngestStatus {
    accepted,
    unauthenticated,
    duplicate,
    payload_too_large,
    collection_closed,
};

std::string_view to_string(IngestStatus s);

struct IngestResult {
    IngestStatus status = IngestStatus::collection_closed;
    store::ContentId content;
    dag::BlockId block;
};

struct RoundResult {
    std::uint64_t round = 0;
    bool quorum_met = false;
    std::string void_reason; // set when the round is void
    std::vector<std::string> accepted_devices;
    std::vector<std::pair<std::string, std::string>> rejections; // device, reason
    std::vector<std::pair<std::string, double>> weights;         // accepted device, weight
    std::vector<std::string> unreliable_devices;
    store::ContentId global_hash;
    dag::BlockId global_anchor;
    dag::BlockId reputation_anchor;
    double validation_accuracy = 0.0;
    double closed_at = 0.0;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    fl::Shapes shapes;
    double alpha = 0.5;
    double penalty_alpha = 0.5;
    double threshold = 0.2;
    double initial_reputation = 0.5;
    std::size_t quorum = 1;
    double pow_cost_s = 0.0;
    double rate_cap_blocks_per_s = 0.0; // 0 = uncapped
    bool reputation_enabled = true;
    PayloadBands bands;
    std::size_t adapter_node = 0;
    std::string firmware_tag = "iotfw-2.3.1";
};

class DappManager {
public:
    DappManager(sim::SimClock& clock, dag::LedgerFabric& fabric, store::BlobStore& blobs,
                DeviceRegistry& registry, trust::ReputationTable& reputation,
                fl::DataShard validation, PipelineConfig cfg, sim::EventLog* log);

    // Opens the collection phase for `round`; the round closes at `deadline`
    // or as soon as `expected_devices` distinct submissions were processed.
    void open_round(std::uint64_t round, double deadline, std::size_t expected_devices);

    // Charges remote-PoW cost and the optional issuance-rate cap, then
    // ingests. Used by the bus subscriber.
    void enqueue_submission(SubmissionEnvelope env);

    // Immediate ingestion at the current sim time.
    IngestResult ingest_update(const SubmissionEnvelope& env);

    using RoundDoneHook = std::function<void(const RoundResult&)>;
    void set_round_done_hook(RoundDoneHook h) { on_round_done_ = std::move(h); }

    bool collection_open() const { return phase_.has_value(); }
    std::uint64_t current_round() const { return current_round_; }

    const fl::ModelParams& global_model() const { return global_; }
    void set_initial_global(fl::ModelParams params) { global_ = std::move(params); }

    // Resolves the anchored GlobalModel record for `round`, fetches and
    // verifies the blob, deserializes. Throws NotFinalized / IntegrityFailure.
    fl::ModelParams fetch_global(std::uint64_t round) const;

    const std::vector<RoundResult>& round_results() const { return results_; }
    const trust::ReputationTable& reputation() const { return reputation_; }

    // Block ids of every anchor this pipeline submitted (metrics universe).
    const std::vector<dag::BlockId>& anchor_blocks() const { return anchor_blocks_; }

private:
    struct PendingSubmission {
        SubmissionEnvelope env;
        store::ContentId content;
        dag::BlockId block;
    };
    struct Phase {
        std::uint64_t round = 0;
        double deadline = 0.0;
        std::size_t expected = 0;
        std::uint64_t generation = 0;
        std::vector<PendingSubmission> submissions;
        std::set<std::string> devices_seen;
    };

    void close_round();
    dag::BlockId anchor_record(AnchorRecord rec);

    sim::SimClock& clock_;
    dag::LedgerFabric& fabric_;
    store::BlobStore& blobs_;
    DeviceRegistry& registry_;
    trust::ReputationTable& reputation_;
    fl::DataShard validation_;
    PipelineConfig cfg_;
    sim::EventLog* log_;

    Rng tip_rng_;
    double next_attach_slot_ = 0.0;
    std::uint64_t generation_ = 0;
    std::uint64_t current_round_ = 0;
    std::optional<Phase> phase_;
    fl::ModelParams global_;
    std::vector<RoundResult> results_;
    std::map<std::uint64_t, dag::BlockId> global_anchors_; // round -> block
    std::vector<dag::BlockId> anchor_blocks_;
    RoundDoneHook on_round_done_;
};

} // namespace tanglefl::dapp
