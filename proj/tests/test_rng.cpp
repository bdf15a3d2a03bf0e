#include "doctest.h"

#include <cmath>

#include "tanglefl/rng.hpp"

using namespace tanglefl;

TEST_SUITE("rng") {

TEST_CASE("seeded streams replay exactly") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.next_u64();
        all_equal &= (x == b.next_u64());
        any_diff |= (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("derive_seed separates streams by label and index") {
    CHECK(derive_seed(7, "data") != derive_seed(7, "init"));
    CHECK(derive_seed(7, "device", 0) != derive_seed(7, "device", 1));
    CHECK(derive_seed(7, "device", 3) == derive_seed(7, "device", 3));
    CHECK(derive_seed(7, "device", 0) != derive_seed(8, "device", 0));
}

TEST_CASE("uniform01 stays in [0,1)") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("below is bounded and hits every bucket") {
    Rng rng(11);
    int counts[5] = {0};
    for (int i = 0; i < 5000; ++i) counts[rng.below(5)]++;
    for (int c : counts) CHECK(c > 800);
}

TEST_CASE("normal moments are sane") {
    Rng rng(17);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("gamma mean matches its shape parameter") {
    Rng rng(23);
    for (double alpha : {0.3, 1.0, 4.5}) {
        double sum = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) sum += rng.gamma(alpha);
        CHECK(sum / n == doctest::Approx(alpha).epsilon(0.06));
    }
}

TEST_CASE("dirichlet draws are a probability vector") {
    Rng rng(31);
    for (double alpha : {0.1, 1.0, 1000.0}) {
        const auto p = rng.dirichlet(alpha, 8);
        double total = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("lognormal median tracks the base") {
    Rng rng(41);
    std::vector<double> draws(9999);
    for (auto& d : draws) d = rng.lognormal(4.0, 0.35);
    std::sort(draws.begin(), draws.end());
    CHECK(draws[draws.size() / 2] == doctest::Approx(4.0).epsilon(0.05));
}

} // TEST_SUITE
