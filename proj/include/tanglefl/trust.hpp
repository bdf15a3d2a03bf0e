#pragma once

// Verifier-side trust logic: update validation, exponential-smoothing
// reputation scores, reliability classification, and aggregation weights.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tanglefl/fl.hpp"
#include "tanglefl/store.hpp"

namespace tanglefl::trust {

using DeviceId = std::string;
using RoundIndex = std::uint64_t;

struct TrustError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct OutOfRange : TrustError {
    using TrustError::TrustError;
};
struct NoReliableDevices : TrustError {
    using TrustError::TrustError;
};

enum class RejectReason {
    hash_mismatch,
    shape_mismatch,
    non_finite_weights,
    stale_round,
    duplicate,
    unauthenticated,
};

std::string_view to_string(RejectReason r);

struct VerificationOutcome {
    bool accepted = false;
    std::optional<RejectReason> reason;

    static VerificationOutcome accept() { return {true, std::nullopt}; }
    static VerificationOutcome reject(RejectReason r) { return {false, r}; }
};

struct ReputationEntry {
    RoundIndex round = 0;
    double accuracy = 0.0; // 0 for penalties
    double score_after = 0.0;
    bool penalty = false;
};

struct ReputationRecord {
    DeviceId device_id;
    double score = 0.5;
    std::uint64_t rounds_participated = 0;
    RoundIndex last_round = 0;
    std::vector<ReputationEntry> history;
};

// score' = alpha * score + (1 - alpha) * accuracy
ReputationRecord update_reputation(const ReputationRecord& record, double accuracy,
                                   double alpha, RoundIndex round);

// A rejection counts as accuracy zero: score' = alpha * score.
ReputationRecord penalize(const ReputationRecord& record, RejectReason kind,
                          double alpha, RoundIndex round);

enum class Reliability { reliable, unreliable };

// Unreliable iff score < threshold (strict).
Reliability classify(const ReputationRecord& record, double threshold);

// weight_i = score_i * n_i for reliable devices, 0 otherwise, normalized to
// sum 1. Throws NoReliableDevices when every device is excluded.
std::vector<double> aggregation_weights(const std::vector<ReputationRecord>& records,
                                        const std::vector<std::size_t>& sample_counts,
                                        double threshold);

struct UpdateSubmission {
    DeviceId device_id;
    RoundIndex round = 0;
    store::ContentId content_id;
    fl::Shapes declared_shapes;
    bool authenticated = false; // adapter-checked credential result
};

// Accept iff authenticated, current round, first submission this round, the
// blob exists and hashes to the declared id, and it deserializes to finite
// params of the declared shapes.
VerificationOutcome verify_update(const UpdateSubmission& submission,
                                  const store::BlobStore& blobs,
                                  const std::set<DeviceId>& accepted_this_round,
                                  RoundIndex current_round);

// Ordered per-device reputation table owned by the round pipeline.
class ReputationTable {
public:
    explicit ReputationTable(double initial_score = 0.5) : initial_(initial_score) {}

    ReputationRecord& get_or_create(const DeviceId& id);
    const ReputationRecord* find(const DeviceId& id) const;
    const std::map<DeviceId, ReputationRecord>& records() const { return records_; }

    void apply_accuracy(const DeviceId& id, double accuracy, double alpha, RoundIndex round);
    void apply_penalty(const DeviceId& id, RejectReason kind, double alpha, RoundIndex round);

    // CSV export: device_id,round,accuracy,score — one row per update, in
    // (round, device) order.
    std::string to_csv() const;
    // Digest over the CSV rows with round <= `round`; this is what gets
    // anchored after each round.
    Digest256 digest_through_round(RoundIndex round) const;

private:
    std::vector<std::string> csv_rows(RoundIndex max_round) const;

    double initial_;
    std::map<DeviceId, ReputationRecord> records_;
};

} // namespace tanglefl::trust
