#include "tanglefl/dapp.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

namespace tanglefl::dapp {

namespace {

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;

    void need(std::size_t n) const {
        if (left < n) throw MalformedAnchor("truncated submission envelope");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        p += 4;
        left -= 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        p += 8;
        left -= 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> b(p, p + n);
        p += n;
        left -= n;
        return b;
    }
};

} // namespace

std::vector<std::uint8_t> encode_envelope(const SubmissionEnvelope& env) {
    std::vector<std::uint8_t> out;
    out.reserve(28 + env.device_id.size() + env.credential.size() + env.params_blob.size());
    append_u32le(out, static_cast<std::uint32_t>(env.device_id.size()));
    out.insert(out.end(), env.device_id.begin(), env.device_id.end());
    append_u32le(out, static_cast<std::uint32_t>(env.credential.size()));
    out.insert(out.end(), env.credential.begin(), env.credential.end());
    append_u64le(out, env.round);
    append_u64le(out, env.n_samples);
    append_u32le(out, static_cast<std::uint32_t>(env.params_blob.size()));
    out.insert(out.end(), env.params_blob.begin(), env.params_blob.end());
    return out;
}

SubmissionEnvelope decode_envelope(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes.data(), bytes.size()};
    SubmissionEnvelope env;
    env.device_id = r.str(r.u32());
    env.credential = r.str(r.u32());
    env.round = r.u64();
    env.n_samples = r.u64();
    env.params_blob = r.bytes(r.u32());
    if (r.left != 0) throw MalformedAnchor("trailing bytes in submission envelope");
    return env;
}

std::string_view to_string(IngestStatus s) {
    switch (s) {
        case IngestStatus::accepted: return "accepted";
        case IngestStatus::unauthenticated: return "Unauthenticated";
        case IngestStatus::duplicate: return "Duplicate";
        case IngestStatus::payload_too_large: return "PayloadTooLarge";
        case IngestStatus::collection_closed: return "CollectionClosed";
    }
    return "unknown";
}

DappManager::DappManager(sim::SimClock& clock, dag::LedgerFabric& fabric,
                         store::BlobStore& blobs, DeviceRegistry& registry,
                         trust::ReputationTable& reputation, fl::DataShard validation,
                         PipelineConfig cfg, sim::EventLog* log)
    : clock_(clock),
      fabric_(fabric),
      blobs_(blobs),
      registry_(registry),
      reputation_(reputation),
      validation_(std::move(validation)),
      cfg_(cfg),
      log_(log),
      tip_rng_(derive_seed(cfg.seed, "tip_selection")) {}

void DappManager::open_round(std::uint64_t round, double deadline,
                             std::size_t expected_devices) {
    if (phase_.has_value()) throw AnchorError("previous round not finalized");
    if (round != current_round_ + 1) {
        throw AnchorError("rounds must advance sequentially");
    }
    current_round_ = round;
    Phase ph;
    ph.round = round;
    ph.deadline = deadline;
    ph.expected = expected_devices;
    ph.generation = ++generation_;
    phase_ = std::move(ph);
    if (log_) {
        log_->add(clock_.now(), "adapter", "round_open",
                  "round=" + std::to_string(round));
    }
    const std::uint64_t gen = phase_->generation;
    clock_.schedule(deadline, [this, gen]() {
        if (phase_.has_value() && phase_->generation == gen) close_round();
    });
}

void DappManager::enqueue_submission(SubmissionEnvelope env) {
    double at = clock_.now() + cfg_.pow_cost_s;
    if (cfg_.rate_cap_blocks_per_s > 0.0) {
        at = std::max(at, next_attach_slot_);
        next_attach_slot_ = at + 1.0 / cfg_.rate_cap_blocks_per_s;
    }
    clock_.schedule(at, [this, env = std::move(env)]() { ingest_update(env); });
}

dag::BlockId DappManager::anchor_record(AnchorRecord rec) {
    pad_to_size(rec, cfg_.bands.target_for(rec.kind));
    auto payload = encode_anchor_record(rec);
    auto parents = dag::select_tips(fabric_.node(cfg_.adapter_node), 2, tip_rng_);
    const dag::Block& b =
        fabric_.submit(cfg_.adapter_node, std::move(parents), std::move(payload), "adapter");
    anchor_blocks_.push_back(b.id);
    if (log_) {
        log_->add(clock_.now(), "adapter", "submit",
                  "block=" + b.id.hex() + " kind=" + std::string(to_string(rec.kind)) +
                      " round=" + std::to_string(rec.round) +
                      (rec.device_id.empty() ? "" : " device=" + rec.device_id));
    }
    return b.id;
}

IngestResult DappManager::ingest_update(const SubmissionEnvelope& env) {
    IngestResult result;
    auto log_outcome = [&](IngestStatus s) {
        result.status = s;
        if (log_) {
            log_->add(clock_.now(), "adapter", "ingest",
                      "device=" + env.device_id + " round=" + std::to_string(env.round) +
                          " outcome=" + std::string(to_string(s)));
        }
        return result;
    };

    if (!phase_.has_value()) return log_outcome(IngestStatus::collection_closed);
    if (!registry_.authenticate(env.device_id, env.credential)) {
        return log_outcome(IngestStatus::unauthenticated);
    }
    if (phase_->devices_seen.count(env.device_id)) {
        return log_outcome(IngestStatus::duplicate);
    }
    if (env.params_blob.empty() || env.params_blob.size() > dag::kMaxPayloadBytes * 8) {
        return log_outcome(IngestStatus::payload_too_large);
    }

    phase_->devices_seen.insert(env.device_id);
    result.content = blobs_.put(env.params_blob);

    AnchorRecord rec;
    rec.kind = AnchorKind::device_update;
    rec.device_id = env.device_id;
    rec.round = env.round;
    rec.content_hash = result.content;
    rec.meta["fw"] = cfg_.firmware_tag;
    rec.meta["ts"] = std::to_string(sim::to_micros(clock_.now()));
    result.block = anchor_record(std::move(rec));

    phase_->submissions.push_back(PendingSubmission{env, result.content, result.block});
    result.status = IngestStatus::accepted;
    if (log_) {
        log_->add(clock_.now(), "adapter", "ingest",
                  "device=" + env.device_id + " round=" + std::to_string(env.round) +
                      " outcome=accepted block=" + result.block.hex());
    }
    if (phase_->devices_seen.size() >= phase_->expected) close_round();
    return result;
}

void DappManager::close_round() {
    Phase phase = std::move(*phase_);
    phase_.reset();
    const std::uint64_t round = phase.round;

    RoundResult rr;
    rr.round = round;
    rr.closed_at = clock_.now();

    // Verification, scoring, and penalties.
    std::set<std::string> accepted_set;
    std::vector<const PendingSubmission*> accepted;
    for (const auto& sub : phase.submissions) {
        trust::UpdateSubmission s;
        s.device_id = sub.env.device_id;
        s.round = sub.env.round;
        s.content_id = sub.content;
        s.declared_shapes = cfg_.shapes;
        s.authenticated = registry_.is_enrolled(sub.env.device_id);
        const auto outcome = trust::verify_update(s, blobs_, accepted_set, round);
        if (outcome.accepted) {
            accepted_set.insert(s.device_id);
            accepted.push_back(&sub);
            const auto params = fl::deserialize_params(blobs_.get(sub.content));
            const double acc = fl::evaluate(params, validation_);
            reputation_.apply_accuracy(s.device_id, acc, cfg_.alpha, round);
            rr.accepted_devices.push_back(s.device_id);
            if (log_) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.17g", acc);
                log_->add(clock_.now(), "verifier", "accept",
                          "device=" + s.device_id + " round=" + std::to_string(round) +
                              " accuracy=" + buf);
            }
        } else {
            const auto reason = *outcome.reason;
            reputation_.apply_penalty(s.device_id, reason, cfg_.penalty_alpha, round);
            rr.rejections.emplace_back(s.device_id, std::string(trust::to_string(reason)));
            if (log_) {
                log_->add(clock_.now(), "verifier", "reject",
                          "device=" + s.device_id + " round=" + std::to_string(round) +
                              " reason=" + std::string(trust::to_string(reason)));
            }
        }
    }

    auto finish_void = [&](const std::string& why) {
        rr.quorum_met = false;
        rr.void_reason = why;
        rr.validation_accuracy = fl::evaluate(global_, validation_);
        if (log_) {
            log_->add(clock_.now(), "aggregator", "round_void",
                      "round=" + std::to_string(round) + " reason=" + why);
        }
        results_.push_back(rr);
        if (on_round_done_) on_round_done_(results_.back());
    };

    if (accepted.size() < cfg_.quorum) {
        finish_void("QuorumNotMet");
        return;
    }

    // Aggregation weights: reputation x sample count for reliable devices.
    std::vector<trust::ReputationRecord> recs;
    std::vector<std::size_t> counts;
    for (const auto* sub : accepted) {
        recs.push_back(*reputation_.find(sub->env.device_id));
        counts.push_back(static_cast<std::size_t>(sub->env.n_samples));
    }
    std::vector<double> weights;
    if (cfg_.reputation_enabled) {
        try {
            weights = trust::aggregation_weights(recs, counts, cfg_.threshold);
        } catch (const trust::NoReliableDevices&) {
            finish_void("NoReliableDevices");
            return;
        }
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (trust::classify(recs[i], cfg_.threshold) == trust::Reliability::unreliable) {
                rr.unreliable_devices.push_back(recs[i].device_id);
            }
        }
    } else {
        double total = 0.0;
        for (auto c : counts) total += static_cast<double>(c);
        weights.resize(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) {
            weights[i] = static_cast<double>(counts[i]) / total;
        }
    }

    std::vector<std::pair<fl::ModelParams, double>> updates;
    std::vector<dag::BlockId> contributing;
    for (std::size_t i = 0; i < accepted.size(); ++i) {
        rr.weights.emplace_back(accepted[i]->env.device_id, weights[i]);
        if (weights[i] <= 0.0) continue;
        updates.emplace_back(fl::deserialize_params(blobs_.get(accepted[i]->content)),
                             weights[i]);
        contributing.push_back(accepted[i]->block);
    }
    global_ = fl::fedavg(updates);

    const auto global_blob = fl::serialize_params(global_);
    rr.global_hash = blobs_.put(global_blob);

    AnchorRecord grec;
    grec.kind = AnchorKind::global_model;
    grec.round = round;
    grec.content_hash = rr.global_hash;
    grec.contributing = std::move(contributing);
    grec.meta["ts"] = std::to_string(sim::to_micros(clock_.now()));
    rr.global_anchor = anchor_record(std::move(grec));
    global_anchors_[round] = rr.global_anchor;

    AnchorRecord rrec;
    rrec.kind = AnchorKind::reputation_digest;
    rrec.round = round;
    rrec.content_hash = store::ContentId{reputation_.digest_through_round(round)};
    rrec.meta["ts"] = std::to_string(sim::to_micros(clock_.now()));
    rr.reputation_anchor = anchor_record(std::move(rrec));

    rr.quorum_met = true;
    rr.validation_accuracy = fl::evaluate(global_, validation_);
    if (log_) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", rr.validation_accuracy);
        log_->add(clock_.now(), "aggregator", "round_done",
                  "round=" + std::to_string(round) +
                      " accepted=" + std::to_string(rr.accepted_devices.size()) +
                      " global=" + rr.global_hash.hex() + " accuracy=" + buf);
    }
    results_.push_back(std::move(rr));
    if (on_round_done_) on_round_done_(results_.back());
}

fl::ModelParams DappManager::fetch_global(std::uint64_t round) const {
    auto it = global_anchors_.find(round);
    if (it == global_anchors_.end()) {
        throw NotFinalized("no finalized global model for round " + std::to_string(round));
    }
    const dag::Block& b = fabric_.node(cfg_.adapter_node).block(it->second);
    const AnchorRecord rec = decode_anchor_record(b.payload);
    const auto blob = blobs_.get(rec.content_hash); // IntegrityFailure on tamper
    return fl::deserialize_params(blob);
}

} // namespace tanglefl::dapp
