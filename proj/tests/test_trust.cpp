#include "doctest.h"

#include <cmath>

#include "tanglefl/rng.hpp"
#include "tanglefl/trust.hpp"

using namespace tanglefl;
using namespace tanglefl::trust;

namespace {

ReputationRecord record_with(double score) {
    ReputationRecord r;
    r.device_id = "dev000";
    r.score = score;
    return r;
}

} // namespace

TEST_SUITE("trust") {

TEST_CASE("reputation update rule") {
    const auto r = record_with(0.6);
    CHECK(update_reputation(r, 0.8, 1.0, 1).score == 0.6);
    CHECK(update_reputation(r, 0.8, 0.0, 1).score == 0.8);
    CHECK(update_reputation(r, 0.8, 0.5, 1).score == doctest::Approx(0.7).epsilon(1e-15));

    const auto updated = update_reputation(r, 0.8, 0.5, 3);
    REQUIRE(updated.history.size() == 1);
    CHECK(updated.history[0].round == 3);
    CHECK(updated.history[0].accuracy == 0.8);
    CHECK_FALSE(updated.history[0].penalty);
    CHECK(updated.last_round == 3);
    CHECK(updated.rounds_participated == 1);

    CHECK_THROWS_AS(update_reputation(r, 1.5, 0.5, 1), OutOfRange);
    CHECK_THROWS_AS(update_reputation(r, 0.5, -0.1, 1), OutOfRange);
}

TEST_CASE("penalties decay geometrically") {
    auto r = record_with(0.8);
    r = penalize(r, RejectReason::stale_round, 0.5, 1);
    CHECK(r.score == 0.4);
    CHECK(r.history.back().penalty);

    // k consecutive penalties from s: s * alpha^k, exactly
    auto s = record_with(0.5);
    s = penalize(s, RejectReason::duplicate, 0.5, 1);
    CHECK(s.score == 0.25);
    s = penalize(s, RejectReason::duplicate, 0.5, 2);
    CHECK(s.score == 0.125);
    CHECK(s.score < 0.2); // byzantine decay bound: below threshold in 2 rounds

    auto z = record_with(0.0);
    CHECK(penalize(z, RejectReason::hash_mismatch, 0.5, 1).score == 0.0);
}

TEST_CASE("classification is strict-less") {
    CHECK(classify(record_with(0.2), 0.2) == Reliability::reliable);
    CHECK(classify(record_with(0.19), 0.2) == Reliability::unreliable);
    CHECK(classify(record_with(0.5), 0.2) == Reliability::reliable);
}

TEST_CASE("aggregation weights") {
    SUBCASE("equal scores and counts give classic FedAvg weighting") {
        std::vector<ReputationRecord> recs{record_with(0.5), record_with(0.5),
                                           record_with(0.5)};
        const auto w = aggregation_weights(recs, {100, 100, 100}, 0.2);
        for (double x : w) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("unreliable devices get weight zero, rest renormalized") {
        std::vector<ReputationRecord> recs{record_with(0.5), record_with(0.1),
                                           record_with(0.5)};
        const auto w = aggregation_weights(recs, {100, 100, 100}, 0.2);
        CHECK(w[1] == 0.0);
        CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(w[2] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("scores (0.9,0.3), equal n, threshold 0.2 give (0.75,0.25)") {
        std::vector<ReputationRecord> recs{record_with(0.9), record_with(0.3)};
        const auto w = aggregation_weights(recs, {100, 100}, 0.2);
        CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("weights sum to one whenever someone is reliable") {
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<ReputationRecord> recs;
            std::vector<std::size_t> counts;
            for (int i = 0; i < 6; ++i) {
                recs.push_back(record_with(rng.uniform01()));
                counts.push_back(1 + rng.below(200));
            }
            recs[0].score = 0.9; // at least one reliable
            const auto w = aggregation_weights(recs, counts, 0.2);
            double total = 0.0;
            for (double x : w) total += x;
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
    }
    SUBCASE("all excluded raises NoReliableDevices") {
        std::vector<ReputationRecord> recs{record_with(0.1), record_with(0.05)};
        CHECK_THROWS_AS(aggregation_weights(recs, {10, 10}, 0.2), NoReliableDevices);
    }
}

TEST_CASE("reputation stays bounded and responds monotonically") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        auto r = record_with(rng.uniform01());
        const double alpha = rng.uniform01();
        for (int step = 0; step < 40; ++step) {
            r = update_reputation(r, rng.uniform01(), alpha, step + 1);
            CHECK(r.score >= 0.0);
            CHECK(r.score <= 1.0);
        }
        // monotone response: from the same state, higher accuracy never lowers
        const auto lo = update_reputation(r, 0.3, alpha, 99);
        const auto hi = update_reputation(r, 0.9, alpha, 99);
        CHECK(hi.score >= lo.score);
    }
}

TEST_CASE("verify_update outcomes") {
    store::BlobStore blobs;
    const fl::Shapes shapes{4, 6, 3};
    const fl::ModelParams params = fl::init_model(5, shapes);
    const auto blob = fl::serialize_params(params);
    const auto content = blobs.put(blob);

    UpdateSubmission sub;
    sub.device_id = "dev001";
    sub.round = 5;
    sub.content_id = content;
    sub.declared_shapes = shapes;
    sub.authenticated = true;

    std::set<DeviceId> accepted;

    SUBCASE("well-formed submission is accepted") {
        const auto out = verify_update(sub, blobs, accepted, 5);
        CHECK(out.accepted);
        CHECK_FALSE(out.reason.has_value());
    }
    SUBCASE("previous-round submission is stale") {
        sub.round = 4;
        const auto out = verify_update(sub, blobs, accepted, 5);
        REQUIRE_FALSE(out.accepted);
        CHECK(*out.reason == RejectReason::stale_round);
    }
    SUBCASE("replay from the same device is a duplicate") {
        accepted.insert("dev001");
        const auto out = verify_update(sub, blobs, accepted, 5);
        REQUIRE_FALSE(out.accepted);
        CHECK(*out.reason == RejectReason::duplicate);
    }
    SUBCASE("unknown blob is a hash mismatch") {
        sub.content_id.digest.fill(0x77);
        const auto out = verify_update(sub, blobs, accepted, 5);
        REQUIRE_FALSE(out.accepted);
        CHECK(*out.reason == RejectReason::hash_mismatch);
    }
    SUBCASE("declared shapes must match the blob") {
        sub.declared_shapes = fl::Shapes{4, 6, 4};
        const auto out = verify_update(sub, blobs, accepted, 5);
        REQUIRE_FALSE(out.accepted);
        CHECK(*out.reason == RejectReason::shape_mismatch);
    }
    SUBCASE("non-finite weights are rejected") {
        fl::ModelParams bad = params;
        bad.weights[3] = std::nan("");
        sub.content_id = blobs.put(fl::serialize_params(bad));
        const auto out = verify_update(sub, blobs, accepted, 5);
        REQUIRE_FALSE(out.accepted);
        CHECK(*out.reason == RejectReason::non_finite_weights);
    }
    SUBCASE("unauthenticated wins over every other reason") {
        sub.authenticated = false;
        sub.round = 4;
        const auto out = verify_update(sub, blobs, accepted, 5);
        REQUIRE_FALSE(out.accepted);
        CHECK(*out.reason == RejectReason::unauthenticated);
    }
}

TEST_CASE("reputation table export and digest") {
    ReputationTable table(0.5);
    table.apply_accuracy("dev001", 0.8, 0.5, 1);
    table.apply_penalty("dev000", RejectReason::stale_round, 0.5, 1);
    table.apply_accuracy("dev000", 0.6, 0.5, 2);

    const std::string csv = table.to_csv();
    CHECK(csv.rfind("device_id,round,accuracy,score\n", 0) == 0);
    // rows sorted by (round, device): dev000 r1 penalty, dev001 r1, dev000 r2
    const auto first_row_pos = csv.find('\n') + 1;
    CHECK(csv.compare(first_row_pos, 10, "dev000,1,0") == 0);

    // digest changes as rounds accumulate, and is stable per prefix
    const auto d1 = table.digest_through_round(1);
    const auto d2 = table.digest_through_round(2);
    CHECK(to_hex(d1) != to_hex(d2));
    CHECK(to_hex(d1) == to_hex(table.digest_through_round(1)));
}

} // TEST_SUITE
