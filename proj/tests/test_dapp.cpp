#include "doctest.h"

#include <cmath>
#include <limits>
#include <memory>

#include "tanglefl/dapp.hpp"

using namespace tanglefl;
using namespace tanglefl::dapp;

namespace {

// Minimal hand-built world: one adapter/ledger node pair, three devices.
struct Bench {
    sim::SimClock clock;
    dag::LedgerFabric fabric{clock, 2, {{0.0, 0.05}, {0.05, 0.0}}};
    store::BlobStore blobs;
    DeviceRegistry registry;
    trust::ReputationTable reputation{0.5};
    fl::Shapes shapes{4, 6, 3};
    fl::DataShard validation;
    PipelineConfig cfg;
    std::unique_ptr<DappManager> manager;

    explicit Bench(std::size_t quorum = 1, bool reputation_enabled = true,
                   double alpha = 0.5) {
        Rng rng(71);
        validation.input_dim = shapes.input_dim;
        for (int i = 0; i < 60; ++i) {
            const auto y = static_cast<std::uint32_t>(i % shapes.output_dim);
            validation.labels.push_back(y);
            for (std::size_t d = 0; d < shapes.input_dim; ++d) {
                validation.features.push_back((d == y ? 3.0 : 0.0) + 0.3 * rng.normal());
            }
        }
        cfg.seed = 7;
        cfg.shapes = shapes;
        cfg.quorum = quorum;
        cfg.reputation_enabled = reputation_enabled;
        cfg.alpha = alpha; // alpha=1 pins scores, making weights exactly equal
        for (int i = 0; i < 3; ++i) {
            const std::string id = "dev00" + std::to_string(i);
            registry.enroll(id, "psk-" + id);
        }
        manager = std::make_unique<DappManager>(clock, fabric, blobs, registry,
                                                reputation, validation, cfg, nullptr);
        manager->set_initial_global(fl::init_model(3, shapes));
    }

    SubmissionEnvelope envelope(int device, std::uint64_t round,
                                const fl::ModelParams& params) {
        const std::string id = "dev00" + std::to_string(device);
        SubmissionEnvelope env;
        env.device_id = id;
        env.credential = "psk-" + id;
        env.round = round;
        env.n_samples = 100;
        env.params_blob = fl::serialize_params(params);
        return env;
    }
};

} // namespace

TEST_SUITE("dapp") {

TEST_CASE("submission envelope round trip") {
    Bench b;
    const auto env = b.envelope(1, 4, fl::init_model(9, b.shapes));
    const auto bytes = encode_envelope(env);
    const auto back = decode_envelope(bytes);
    CHECK(back.device_id == env.device_id);
    CHECK(back.credential == env.credential);
    CHECK(back.round == 4);
    CHECK(back.n_samples == 100);
    CHECK(back.params_blob == env.params_blob);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 1);
    CHECK_THROWS_AS(decode_envelope(truncated), MalformedAnchor);
}

TEST_CASE("ingest anchors exactly one block whose hash matches the blob") {
    Bench b;
    b.manager->open_round(1, 100.0, 3);
    const std::size_t before = b.fabric.node(0).block_count();

    const auto env = b.envelope(0, 1, fl::init_model(5, b.shapes));
    const auto res = b.manager->ingest_update(env);
    REQUIRE(res.status == IngestStatus::accepted);
    CHECK(b.fabric.node(0).block_count() == before + 1);

    const dag::Block& blk = b.fabric.node(0).block(res.block);
    const AnchorRecord rec = decode_anchor_record(blk.payload);
    CHECK(rec.kind == AnchorKind::device_update);
    CHECK(rec.device_id == "dev000");
    CHECK(rec.content_hash == res.content);
    CHECK(store::BlobStore::verify(rec.content_hash, b.blobs.get(res.content)));
    CHECK(b.blobs.get(res.content) == env.params_blob);
}

TEST_CASE("duplicates are filtered before any ledger traffic") {
    Bench b;
    b.manager->open_round(1, 100.0, 3);
    const auto env = b.envelope(0, 1, fl::init_model(5, b.shapes));
    CHECK(b.manager->ingest_update(env).status == IngestStatus::accepted);
    const std::size_t blocks = b.fabric.node(0).block_count();
    const std::size_t blob_count = b.blobs.size();
    for (int i = 0; i < 5; ++i) {
        CHECK(b.manager->ingest_update(env).status == IngestStatus::duplicate);
    }
    CHECK(b.fabric.node(0).block_count() == blocks);
    CHECK(b.blobs.size() == blob_count);
}

TEST_CASE("unauthenticated submissions cause zero off-chain writes") {
    Bench b;
    b.manager->open_round(1, 100.0, 3);
    auto env = b.envelope(0, 1, fl::init_model(5, b.shapes));
    env.credential = "not-the-psk";
    CHECK(b.manager->ingest_update(env).status == IngestStatus::unauthenticated);
    env.device_id = "devXYZ";
    CHECK(b.manager->ingest_update(env).status == IngestStatus::unauthenticated);
    CHECK(b.blobs.size() == 0);
    CHECK(b.fabric.node(0).block_count() == 1); // genesis only
}

TEST_CASE("ingest outside a collection phase is CollectionClosed") {
    Bench b;
    const auto env = b.envelope(0, 1, fl::init_model(5, b.shapes));
    CHECK(b.manager->ingest_update(env).status == IngestStatus::collection_closed);
}

TEST_CASE("equal devices reduce to plain FedAvg") {
    // the aggregation uses just-updated scores, so equal reputations are
    // pinned with alpha = 1
    Bench b(3, true, 1.0);
    b.manager->open_round(1, 100.0, 3);

    std::vector<std::pair<fl::ModelParams, double>> updates;
    for (int i = 0; i < 3; ++i) {
        fl::ModelParams p = fl::init_model(100 + i, b.shapes);
        updates.emplace_back(p, 1.0);
        b.manager->ingest_update(b.envelope(i, 1, p));
    }
    // expected devices reached: the round closed and aggregated
    REQUIRE(b.manager->round_results().size() == 1);
    const RoundResult& rr = b.manager->round_results()[0];
    REQUIRE(rr.quorum_met);
    CHECK(rr.accepted_devices.size() == 3);

    const fl::ModelParams plain = fl::fedavg(updates);
    const fl::ModelParams& got = b.manager->global_model();
    REQUIRE(got.weights.size() == plain.weights.size());
    for (std::size_t j = 0; j < got.weights.size(); ++j) {
        CHECK(std::abs(got.weights[j] - plain.weights[j]) <= 1e-12);
    }
    // anchors exist for the global model and the reputation digest
    CHECK(b.fabric.node(0).knows(rr.global_anchor));
    CHECK(b.fabric.node(0).knows(rr.reputation_anchor));
    const auto grec = decode_anchor_record(b.fabric.node(0).block(rr.global_anchor).payload);
    CHECK(grec.contributing.size() == 3);
}

TEST_CASE("a non-finite submitter is excluded and penalized") {
    Bench b(2, true, 1.0);
    b.manager->open_round(1, 100.0, 3);

    fl::ModelParams good1 = fl::init_model(201, b.shapes);
    fl::ModelParams good2 = fl::init_model(202, b.shapes);
    fl::ModelParams bad = fl::init_model(203, b.shapes);
    bad.weights[0] = std::numeric_limits<double>::infinity();

    b.manager->ingest_update(b.envelope(0, 1, good1));
    b.manager->ingest_update(b.envelope(1, 1, bad));
    b.manager->ingest_update(b.envelope(2, 1, good2));

    REQUIRE(b.manager->round_results().size() == 1);
    const RoundResult& rr = b.manager->round_results()[0];
    REQUIRE(rr.quorum_met);
    CHECK(rr.accepted_devices == std::vector<std::string>{"dev000", "dev002"});
    REQUIRE(rr.rejections.size() == 1);
    CHECK(rr.rejections[0].first == "dev001");
    CHECK(rr.rejections[0].second == "NonFiniteWeights");
    // penalty applied: 0.5 * 0.5 = 0.25
    CHECK(b.reputation.find("dev001")->score == 0.25);

    const fl::ModelParams plain = fl::fedavg({{good1, 1.0}, {good2, 1.0}});
    for (std::size_t j = 0; j < plain.weights.size(); ++j) {
        CHECK(std::abs(b.manager->global_model().weights[j] - plain.weights[j]) <= 1e-12);
    }
}

TEST_CASE("stale-round submissions are rejected and penalized") {
    Bench b(1);
    b.manager->open_round(1, 100.0, 2);
    b.manager->ingest_update(b.envelope(0, 0, fl::init_model(301, b.shapes)));
    b.manager->ingest_update(b.envelope(1, 1, fl::init_model(302, b.shapes)));
    REQUIRE(b.manager->round_results().size() == 1);
    const RoundResult& rr = b.manager->round_results()[0];
    CHECK(rr.quorum_met);
    REQUIRE(rr.rejections.size() == 1);
    CHECK(rr.rejections[0].second == "StaleRound");
    CHECK(b.reputation.find("dev000")->score == 0.25);
}

TEST_CASE("quorum not met carries the previous global forward") {
    Bench b(3);
    const auto before = b.manager->global_model().weights;
    b.manager->open_round(1, 10.0, 3);
    b.manager->ingest_update(b.envelope(0, 1, fl::init_model(401, b.shapes)));
    b.clock.run_until(10.0); // deadline fires with 1 < quorum 3
    REQUIRE(b.manager->round_results().size() == 1);
    const RoundResult& rr = b.manager->round_results()[0];
    CHECK_FALSE(rr.quorum_met);
    CHECK(rr.void_reason == "QuorumNotMet");
    CHECK(b.manager->global_model().weights == before);
    CHECK_THROWS_AS(b.manager->fetch_global(1), NotFinalized);
}

TEST_CASE("fetch_global resolves, verifies, and fails closed") {
    Bench b(1);
    b.manager->open_round(1, 100.0, 1);
    b.manager->ingest_update(b.envelope(0, 1, fl::init_model(501, b.shapes)));
    REQUIRE(b.manager->round_results().size() == 1);

    SUBCASE("round result and fetch agree") {
        const auto fetched = b.manager->fetch_global(1);
        CHECK(fetched.weights == b.manager->global_model().weights);
    }
    SUBCASE("tampered off-chain blob raises IntegrityFailure") {
        b.blobs.tamper(b.manager->round_results()[0].global_hash, 30);
        CHECK_THROWS_AS(b.manager->fetch_global(1), store::IntegrityFailure);
    }
    SUBCASE("unknown round is NotFinalized") {
        CHECK_THROWS_AS(b.manager->fetch_global(0), NotFinalized);
        CHECK_THROWS_AS(b.manager->fetch_global(7), NotFinalized);
    }
}

TEST_CASE("ledger payloads stay inside the lightweight bands") {
    Bench b(3);
    b.manager->open_round(1, 100.0, 3);
    for (int i = 0; i < 3; ++i) {
        b.manager->ingest_update(b.envelope(i, 1, fl::init_model(600 + i, b.shapes)));
    }
    REQUIRE(b.manager->round_results().size() == 1);
    b.clock.run_all();

    const auto blocks = b.fabric.node(0).blocks_in_attach_order();
    std::size_t anchors = 0;
    for (const auto& blk : blocks) {
        CHECK(blk.payload.size() <= 3072);
        if (!is_anchor_payload(blk.payload)) continue;
        ++anchors;
        const auto rec = decode_anchor_record(blk.payload);
        const std::size_t sz = blk.payload.size();
        if (rec.kind == AnchorKind::reputation_digest) {
            CHECK(sz >= 1536 * 0.8);
            CHECK(sz <= 2048 * 1.2);
        } else {
            CHECK(sz >= 2048 * 0.8);
            CHECK(sz <= 3072);
        }
        // no serialized weights on the ledger
        const std::string text(blk.payload.begin(), blk.payload.end());
        CHECK(text.find("TFP1") == std::string::npos);
    }
    CHECK(anchors == 5); // 3 updates + global + reputation digest
}

TEST_CASE("rounds must be opened sequentially after finalization") {
    Bench b(1);
    b.manager->open_round(1, 100.0, 1);
    CHECK_THROWS_AS(b.manager->open_round(2, 200.0, 1), AnchorError);
    b.manager->ingest_update(b.envelope(0, 1, fl::init_model(700, b.shapes)));
    CHECK_THROWS_AS(b.manager->open_round(3, 200.0, 1), AnchorError);
    b.manager->open_round(2, 200.0, 1);
    CHECK(b.manager->collection_open());
}

TEST_CASE("reputation-disabled weighting is sample-count proportional") {
    Bench b(2, /*reputation_enabled=*/false);
    b.manager->open_round(1, 100.0, 2);
    auto e0 = b.envelope(0, 1, fl::init_model(801, b.shapes));
    auto e1 = b.envelope(1, 1, fl::init_model(802, b.shapes));
    e0.n_samples = 300;
    e1.n_samples = 100;
    b.manager->ingest_update(e0);
    b.manager->ingest_update(e1);
    REQUIRE(b.manager->round_results().size() == 1);
    const auto& w = b.manager->round_results()[0].weights;
    REQUIRE(w.size() == 2);
    CHECK(w[0].second == doctest::Approx(0.75));
    CHECK(w[1].second == doctest::Approx(0.25));
    CHECK(b.manager->round_results()[0].unreliable_devices.empty());
}

} // TEST_SUITE
