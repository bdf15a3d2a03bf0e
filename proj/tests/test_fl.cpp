#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "tanglefl/fl.hpp"
#include "tanglefl/simd/kernels.hpp"

using namespace tanglefl;
using namespace tanglefl::fl;

namespace {

DataShard tiny_shard(std::uint64_t seed, std::size_t n, std::size_t input_dim,
                     std::size_t n_classes) {
    Rng rng(seed);
    DataShard s;
    s.input_dim = input_dim;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::uint32_t>(rng.below(n_classes));
        s.labels.push_back(y);
        for (std::size_t d = 0; d < input_dim; ++d) {
            s.features.push_back(rng.normal() + (d == y ? 2.0 : 0.0));
        }
    }
    return s;
}

// Two well-separated blobs for convergence checks.
DataShard blob_shard(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    DataShard s;
    s.input_dim = 2;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t y = i % 2;
        s.labels.push_back(y);
        const double cx = y == 0 ? -2.0 : 2.0;
        s.features.push_back(cx + 0.3 * rng.normal());
        s.features.push_back(-cx + 0.3 * rng.normal());
    }
    return s;
}

double loss_at(const ModelParams& p, const DataShard& shard) {
    std::vector<std::uint32_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0u);
    std::vector<double> grad;
    return loss_and_gradient(p, shard, 0, shard.size(), order, grad);
}

} // namespace

TEST_SUITE("fl") {

TEST_CASE("init_model shapes and determinism") {
    const Shapes shapes{4, 8, 3};
    CHECK(shapes.weight_count() == 4 * 8 + 8 + 8 * 3 + 3); // 67
    ModelParams a = init_model(7, shapes);
    ModelParams b = init_model(7, shapes);
    ModelParams c = init_model(8, shapes);
    CHECK(a.weights.size() == 67);
    CHECK(a.weights == b.weights);
    CHECK(a.weights != c.weights);
    // biases start at zero
    for (std::size_t i = 0; i < 8; ++i) CHECK(a.b1()[i] == 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.b2()[i] == 0.0);
    CHECK_THROWS_AS(init_model(1, Shapes{0, 4, 2}), BadShapes);
}

TEST_CASE("analytic gradient matches central finite differences") {
    simd::select_backend("scalar");
    const Shapes shapes{3, 4, 3};
    ModelParams p = init_model(11, shapes);
    DataShard shard = tiny_shard(12, 5, 3, 3);

    std::vector<std::uint32_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0u);
    std::vector<double> analytic;
    loss_and_gradient(p, shard, 0, shard.size(), order, analytic);

    const double eps = 1e-4;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        ModelParams up = p, down = p;
        up.weights[i] += eps;
        down.weights[i] -= eps;
        const double fd = (loss_at(up, shard) - loss_at(down, shard)) / (2.0 * eps);
        const double scale = std::max(1.0, std::abs(fd));
        CHECK(std::abs(analytic[i] - fd) <= 1e-4 * scale);
    }
    simd::select_backend("auto");
}

TEST_CASE("gradient agrees across kernel backends") {
    if (simd::avx2_kernels() == nullptr || !simd::cpu_supports_avx2()) return;
    const Shapes shapes{5, 7, 4};
    ModelParams p = init_model(21, shapes);
    DataShard shard = tiny_shard(22, 9, 5, 4);
    std::vector<std::uint32_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0u);

    std::vector<double> g_scalar, g_avx2;
    simd::select_backend("scalar");
    const double l1 = loss_and_gradient(p, shard, 0, shard.size(), order, g_scalar);
    simd::select_backend("avx2");
    const double l2 = loss_and_gradient(p, shard, 0, shard.size(), order, g_avx2);
    simd::select_backend("auto");

    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
    for (std::size_t i = 0; i < g_scalar.size(); ++i) {
        CHECK(g_scalar[i] == doctest::Approx(g_avx2[i]).epsilon(1e-10));
    }
}

TEST_CASE("local_train basics") {
    const Shapes shapes{2, 8, 2};
    ModelParams p = init_model(31, shapes);
    DataShard shard = blob_shard(32, 40);

    SUBCASE("zero learning rate leaves params unchanged") {
        TrainConfig cfg{1, 0.0, 8, 5};
        const auto r = local_train(p, shard, cfg);
        CHECK(r.params.weights == p.weights);
        CHECK(r.n_samples == 40);
    }
    SUBCASE("zero epochs are disallowed") {
        TrainConfig cfg{0, 0.1, 8, 5};
        CHECK_THROWS_AS(local_train(p, shard, cfg), FlError);
    }
    SUBCASE("20 epochs on separable blobs reduce the loss") {
        const double initial = loss_at(p, shard);
        TrainConfig cfg{20, 0.15, 8, 5};
        const auto r = local_train(p, shard, cfg);
        CHECK(r.train_loss < initial);
        CHECK(evaluate(r.params, blob_shard(33, 40)) >= 0.9);
    }
    SUBCASE("training is deterministic") {
        TrainConfig cfg{3, 0.1, 8, 5};
        const auto r1 = local_train(p, shard, cfg);
        const auto r2 = local_train(p, shard, cfg);
        CHECK(r1.params.weights == r2.params.weights);
        CHECK(r1.train_loss == r2.train_loss);
    }
    SUBCASE("shape mismatch is rejected") {
        DataShard wrong = tiny_shard(1, 4, 3, 2);
        TrainConfig cfg{1, 0.1, 8, 5};
        CHECK_THROWS_AS(local_train(p, wrong, cfg), ShapeMismatch);
    }
}

TEST_CASE("evaluate") {
    SUBCASE("constant-class predictor on a balanced 3-class set scores 1/3") {
        const Shapes shapes{2, 4, 3};
        ModelParams p;
        p.shapes = shapes;
        p.weights.assign(shapes.weight_count(), 0.0);
        p.b2()[1] = 5.0; // always predicts class 1
        DataShard balanced;
        balanced.input_dim = 2;
        for (std::uint32_t i = 0; i < 30; ++i) {
            balanced.labels.push_back(i % 3);
            balanced.features.push_back(0.1 * i);
            balanced.features.push_back(-0.1 * i);
        }
        CHECK(evaluate(p, balanced) == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("perfect labels score 1.0") {
        const Shapes shapes{2, 8, 2};
        ModelParams p = init_model(41, shapes);
        DataShard shard = blob_shard(42, 60);
        const auto r = local_train(p, shard, TrainConfig{25, 0.2, 8, 5});
        DataShard clean;
        clean.input_dim = 2;
        for (int i = 0; i < 10; ++i) {
            const std::uint32_t y = i % 2;
            clean.labels.push_back(y);
            clean.features.push_back(y == 0 ? -2.0 : 2.0);
            clean.features.push_back(y == 0 ? 2.0 : -2.0);
        }
        CHECK(evaluate(r.params, clean) == 1.0);
    }
}

TEST_CASE("fedavg") {
    const Shapes shapes{3, 4, 2};

    SUBCASE("single update is the identity") {
        ModelParams p = init_model(51, shapes);
        const auto avg = fedavg({{p, 3.0}});
        CHECK(avg.weights == p.weights);
    }
    SUBCASE("equal-weight mean of all-0 and all-2 is all-1") {
        ModelParams zeros, twos;
        zeros.shapes = twos.shapes = shapes;
        zeros.weights.assign(shapes.weight_count(), 0.0);
        twos.weights.assign(shapes.weight_count(), 2.0);
        const auto avg = fedavg({{zeros, 1.0}, {twos, 1.0}});
        for (double w : avg.weights) CHECK(w == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("matches the naive per-coordinate oracle to 1e-12") {
        std::vector<std::pair<ModelParams, double>> updates;
        const double ws[3] = {0.2, 0.3, 0.5};
        for (int i = 0; i < 3; ++i) updates.emplace_back(init_model(60 + i, shapes), ws[i]);
        const auto avg = fedavg(updates);
        for (std::size_t j = 0; j < shapes.weight_count(); ++j) {
            double want = 0.0;
            for (int i = 0; i < 3; ++i) want += ws[i] * updates[i].first.weights[j];
            CHECK(std::abs(avg.weights[j] - want) <= 1e-12);
        }
    }
    SUBCASE("permutation invariance of the weighted mean") {
        std::vector<std::pair<ModelParams, double>> updates;
        for (int i = 0; i < 4; ++i) updates.emplace_back(init_model(70 + i, shapes), 1.0 + i);
        const auto a = fedavg(updates);
        std::reverse(updates.begin(), updates.end());
        const auto b = fedavg(updates);
        for (std::size_t j = 0; j < a.weights.size(); ++j) {
            CHECK(a.weights[j] == doctest::Approx(b.weights[j]).epsilon(1e-13));
        }
    }
    SUBCASE("weight scaling by a power of two is exact") {
        std::vector<std::pair<ModelParams, double>> u1, u2;
        for (int i = 0; i < 3; ++i) {
            u1.emplace_back(init_model(80 + i, shapes), 0.25 * (i + 1));
            u2.emplace_back(u1.back().first, 0.5 * (i + 1));
        }
        CHECK(fedavg(u1).weights == fedavg(u2).weights);
    }
    SUBCASE("error cases") {
        CHECK_THROWS_AS(fedavg({}), EmptyUpdateSet);
        ModelParams a = init_model(1, shapes);
        ModelParams b = init_model(2, Shapes{3, 5, 2});
        CHECK_THROWS_AS(fedavg({{a, 1.0}, {b, 1.0}}), ShapeMismatch);
        CHECK_THROWS_AS(fedavg({{a, 0.0}}), AllZeroWeights);
        CHECK_THROWS_AS(fedavg({{a, -1.0}}), FlError);
    }
}

TEST_CASE("synthetic dataset generator") {
    SyntheticConfig cfg;
    cfg.n_clients = 4;
    cfg.n_classes = 5;
    cfg.input_dim = 8;
    cfg.total_samples = 8000;
    cfg.validation_samples = 500;

    SUBCASE("alpha=1000 gives near-uniform per-client label histograms") {
        cfg.non_iid_alpha = 1000.0;
        cfg.total_samples = 32000; // 8000 per client: sampling noise well
                                   // inside the 10%-of-uniform tolerance
        const auto data = make_synthetic_dataset(91, cfg);
        for (const auto& shard : data.shards) {
            std::vector<double> hist(cfg.n_classes, 0.0);
            for (auto y : shard.labels) hist[y] += 1.0;
            for (auto& h : hist) h /= static_cast<double>(shard.size());
            for (double share : hist) {
                CHECK(std::abs(share - 0.2) <= 0.1 * 0.2);
            }
        }
    }
    SUBCASE("alpha=0.1 concentrates at least one client on one class") {
        cfg.non_iid_alpha = 0.1;
        const auto data = make_synthetic_dataset(92, cfg);
        bool concentrated = false;
        for (const auto& shard : data.shards) {
            std::vector<std::size_t> hist(cfg.n_classes, 0);
            for (auto y : shard.labels) hist[y]++;
            for (auto h : hist) {
                if (static_cast<double>(h) / shard.size() > 0.6) concentrated = true;
            }
        }
        CHECK(concentrated);
    }
    SUBCASE("sample totals are conserved, including remainders") {
        cfg.total_samples = 103;
        cfg.n_clients = 10;
        const auto data = make_synthetic_dataset(93, cfg);
        std::size_t total = 0;
        for (const auto& s : data.shards) total += s.size();
        CHECK(total == 103);
        CHECK(data.validation.size() == 500);
    }
    SUBCASE("deterministic under seed") {
        const auto a = make_synthetic_dataset(94, cfg);
        const auto b = make_synthetic_dataset(94, cfg);
        CHECK(a.shards[0].features == b.shards[0].features);
        CHECK(a.validation.labels == b.validation.labels);
    }
}

TEST_CASE("params serialization") {
    const Shapes shapes{4, 6, 3};
    ModelParams p = init_model(101, shapes);

    SUBCASE("round trip is bit identical and encoding is canonical") {
        const auto bytes1 = serialize_params(p);
        const auto bytes2 = serialize_params(p);
        CHECK(bytes1 == bytes2);
        const ModelParams q = deserialize_params(bytes1);
        CHECK(q.shapes == p.shapes);
        CHECK(q.weights == p.weights);
    }
    SUBCASE("truncated bytes are rejected") {
        auto bytes = serialize_params(p);
        bytes.resize(bytes.size() - 3);
        CHECK_THROWS_AS(deserialize_params(bytes), MalformedBytes);
    }
    SUBCASE("bad magic is rejected") {
        auto bytes = serialize_params(p);
        bytes[0] ^= 0xff;
        CHECK_THROWS_AS(deserialize_params(bytes), MalformedBytes);
    }
    SUBCASE("header/shape inconsistency is rejected") {
        auto bytes = serialize_params(p);
        bytes[4] += 1; // input_dim no longer matches the weight count
        CHECK_THROWS_AS(deserialize_params(bytes), MalformedBytes);
    }
}

TEST_CASE("csv ingestion hook") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "tanglefl_dataset.csv";
    {
        std::ofstream out(path);
        out << "f0,f1,label\n";
        out << "0.5,-1.25,0\n";
        out << "1.5,2.0,1\n";
        out << "-0.5,0.25,2\n";
    }
    const DataShard shard = load_csv_dataset(path.string());
    CHECK(shard.input_dim == 2);
    CHECK(shard.size() == 3);
    CHECK(shard.labels == std::vector<std::uint32_t>{0, 1, 2});
    CHECK(shard.row(1)[0] == doctest::Approx(1.5));

    {
        std::ofstream out(path);
        out << "f0,f1\n0.5,1.0\n";
    }
    CHECK_THROWS_AS(load_csv_dataset(path.string()), FlError);
    fs::remove(path);
}

TEST_CASE("dirichlet partition conserves samples") {
    DataShard data = tiny_shard(111, 500, 4, 5);
    const auto shards = partition_dirichlet(data, 7, 0.5, 112);
    std::size_t total = 0;
    for (const auto& s : shards) {
        total += s.size();
        CHECK(s.input_dim == 4);
    }
    CHECK(total == 500);
}

} // TEST_SUITE
