#include "tanglefl/trust.hpp"

#include <algorithm>
#include <cstdio>

namespace tanglefl::trust {

std::string_view to_string(RejectReason r) {
    switch (r) {
        case RejectReason::hash_mismatch: return "HashMismatch";
        case RejectReason::shape_mismatch: return "ShapeMismatch";
        case RejectReason::non_finite_weights: return "NonFiniteWeights";
        case RejectReason::stale_round: return "StaleRound";
        case RejectReason::duplicate: return "Duplicate";
        case RejectReason::unauthenticated: return "Unauthenticated";
    }
    return "Unknown";
}

ReputationRecord update_reputation(const ReputationRecord& record, double accuracy,
                                   double alpha, RoundIndex round) {
    if (accuracy < 0.0 || accuracy > 1.0) {
        throw OutOfRange("accuracy outside [0,1]: " + std::to_string(accuracy));
    }
    if (alpha < 0.0 || alpha > 1.0) {
        throw OutOfRange("alpha outside [0,1]: " + std::to_string(alpha));
    }
    ReputationRecord out = record;
    out.score = alpha * record.score + (1.0 - alpha) * accuracy;
    out.rounds_participated += 1;
    out.last_round = round;
    out.history.push_back({round, accuracy, out.score, false});
    return out;
}

ReputationRecord penalize(const ReputationRecord& record, RejectReason kind,
                          double alpha, RoundIndex round) {
    (void)kind;
    if (alpha < 0.0 || alpha > 1.0) {
        throw OutOfRange("alpha outside [0,1]: " + std::to_string(alpha));
    }
    ReputationRecord out = record;
    out.score = alpha * record.score;
    out.last_round = round;
    out.history.push_back({round, 0.0, out.score, true});
    return out;
}

Reliability classify(const ReputationRecord& record, double threshold) {
    return record.score < threshold ? Reliability::unreliable : Reliability::reliable;
}

std::vector<double> aggregation_weights(const std::vector<ReputationRecord>& records,
                                        const std::vector<std::size_t>& sample_counts,
                                        double threshold) {
    if (records.size() != sample_counts.size()) {
        throw TrustError("records and sample_counts must align");
    }
    std::vector<double> weights(records.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (classify(records[i], threshold) == Reliability::unreliable) continue;
        weights[i] = records[i].score * static_cast<double>(sample_counts[i]);
        total += weights[i];
    }
    if (total <= 0.0) throw NoReliableDevices("no reliable device contributes weight");
    for (auto& w : weights) w /= total;
    return weights;
}

VerificationOutcome verify_update(const UpdateSubmission& submission,
                                  const store::BlobStore& blobs,
                                  const std::set<DeviceId>& accepted_this_round,
                                  RoundIndex current_round) {
    if (!submission.authenticated) {
        return VerificationOutcome::reject(RejectReason::unauthenticated);
    }
    if (submission.round != current_round) {
        return VerificationOutcome::reject(RejectReason::stale_round);
    }
    if (accepted_this_round.count(submission.device_id)) {
        return VerificationOutcome::reject(RejectReason::duplicate);
    }
    if (!blobs.contains(submission.content_id)) {
        return VerificationOutcome::reject(RejectReason::hash_mismatch);
    }
    std::vector<std::uint8_t> blob;
    try {
        blob = blobs.get(submission.content_id);
    } catch (const store::StoreError&) {
        return VerificationOutcome::reject(RejectReason::hash_mismatch);
    }
    if (!store::BlobStore::verify(submission.content_id, blob)) {
        return VerificationOutcome::reject(RejectReason::hash_mismatch);
    }
    fl::ModelParams params;
    try {
        params = fl::deserialize_params(blob);
    } catch (const fl::MalformedBytes&) {
        return VerificationOutcome::reject(RejectReason::shape_mismatch);
    }
    if (!(params.shapes == submission.declared_shapes)) {
        return VerificationOutcome::reject(RejectReason::shape_mismatch);
    }
    if (!params.all_finite()) {
        return VerificationOutcome::reject(RejectReason::non_finite_weights);
    }
    return VerificationOutcome::accept();
}

ReputationRecord& ReputationTable::get_or_create(const DeviceId& id) {
    auto it = records_.find(id);
    if (it == records_.end()) {
        ReputationRecord r;
        r.device_id = id;
        r.score = initial_;
        it = records_.emplace(id, std::move(r)).first;
    }
    return it->second;
}

const ReputationRecord* ReputationTable::find(const DeviceId& id) const {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
}

void ReputationTable::apply_accuracy(const DeviceId& id, double accuracy, double alpha,
                                     RoundIndex round) {
    ReputationRecord& r = get_or_create(id);
    r = update_reputation(r, accuracy, alpha, round);
}

void ReputationTable::apply_penalty(const DeviceId& id, RejectReason kind, double alpha,
                                    RoundIndex round) {
    ReputationRecord& r = get_or_create(id);
    r = penalize(r, kind, alpha, round);
}

std::vector<std::string> ReputationTable::csv_rows(RoundIndex max_round) const {
    struct Row {
        RoundIndex round;
        const DeviceId* device;
        const ReputationEntry* entry;
    };
    std::vector<Row> rows;
    for (const auto& [id, rec] : records_) {
        for (const auto& e : rec.history) {
            if (e.round <= max_round) rows.push_back({e.round, &id, &e});
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.round != b.round) return a.round < b.round;
        return *a.device < *b.device;
    });
    std::vector<std::string> out;
    out.reserve(rows.size());
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%llu,%.17g,%.17g", r.device->c_str(),
                      static_cast<unsigned long long>(r.round), r.entry->accuracy,
                      r.entry->score_after);
        out.emplace_back(buf);
    }
    return out;
}

std::string ReputationTable::to_csv() const {
    std::string out = "device_id,round,accuracy,score\n";
    for (const auto& row : csv_rows(~RoundIndex{0})) {
        out += row;
        out += '\n';
    }
    return out;
}

Digest256 ReputationTable::digest_through_round(RoundIndex round) const {
    Blake2bHasher h;
    for (const auto& row : csv_rows(round)) {
        h.update(row);
        h.update("\n");
    }
    return h.finish();
}

} // namespace tanglefl::trust
