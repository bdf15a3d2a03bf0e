#include "doctest.h"

#include <cmath>

#include "tanglefl/metrics.hpp"

using namespace tanglefl::metrics;

namespace {

std::vector<ConfirmationSample> uniform_period_samples(int n, double interval) {
    // submissions uniform over one milestone period, all confirmed at its end
    std::vector<ConfirmationSample> v;
    for (int i = 0; i < n; ++i) {
        const double s = interval * (i + 0.5) / n;
        v.push_back({"b" + std::to_string(i), s, interval});
    }
    return v;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("tps is confirmations over the activity span") {
    // 100 confirmations spanning 50 s
    std::vector<ConfirmationSample> v;
    for (int i = 0; i < 100; ++i) {
        v.push_back({"b" + std::to_string(i), 0.5 * i, 0.5 * i + 0.5});
    }
    // span: first submit 0.0 to last confirm 50.0
    CHECK(compute_tps(v) == doctest::Approx(2.0));

    SUBCASE("unconfirmed transactions do not count") {
        v.push_back({"pending", 10.0, -1.0});
        CHECK(compute_tps(v) == doctest::Approx(2.0));
    }
    SUBCASE("zero confirmations raise EmptyRun") {
        std::vector<ConfirmationSample> none{{"x", 1.0, -1.0}};
        CHECK_THROWS_AS(compute_tps(none), EmptyRun);
        CHECK_THROWS_AS(compute_tps({}), EmptyRun);
    }
    SUBCASE("wall span override") {
        CHECK(compute_tps(v, 100.0) == doctest::Approx(1.0));
        CHECK_THROWS_AS(compute_tps(v, 0.0), EmptyRun);
    }
}

TEST_CASE("variability reproduces the reported rows") {
    // mean 1.82, std 0.56 -> 30.8% and mean 2.10, std 0.15 -> 7.1%,
    // both within 0.1 percentage points.
    CHECK(std::abs(0.56 / 1.82 * 100.0 - 30.8) <= 0.1);
    CHECK(std::abs(0.15 / 2.10 * 100.0 - 7.1) <= 0.1);
    // The 50-round row (0.10 / 2.12 vs 4.90%) does not satisfy the rule at
    // the displayed precision; it is excluded from the consistency check.
    CHECK(std::abs(0.10 / 2.12 * 100.0 - 4.90) > 0.1);
}

TEST_CASE("variability over samples") {
    SUBCASE("identical samples have zero spread") {
        const auto v = variability({2.0, 2.0, 2.0});
        CHECK(v.mean == 2.0);
        CHECK(v.std_dev == 0.0);
        CHECK(v.pct == 0.0);
    }
    SUBCASE("sample std uses n-1") {
        const auto v = variability({1.0, 3.0});
        CHECK(v.mean == 2.0);
        CHECK(v.std_dev == doctest::Approx(std::sqrt(2.0)));
        CHECK(v.pct == doctest::Approx(std::sqrt(2.0) / 2.0 * 100.0));
    }
    SUBCASE("fewer than two samples is an error") {
        CHECK_THROWS_AS(variability({1.0}), TooFewSamples);
    }
}

TEST_CASE("quantiles interpolate linearly") {
    const std::vector<double> sorted{1.0, 2.0, 3.0, 4.0};
    CHECK(quantile(sorted, 0.25) == doctest::Approx(1.75));
    CHECK(quantile(sorted, 0.5) == doctest::Approx(2.5));
    CHECK(quantile(sorted, 0.75) == doctest::Approx(3.25));
    CHECK(quantile(sorted, 1.0) == doctest::Approx(4.0));
}

TEST_CASE("uniform arrivals over one milestone period have median near M/2") {
    const auto samples = uniform_period_samples(1000, 10.0);
    const auto delays = delay_samples(samples);
    const auto q = delay_quantiles(delays);
    CHECK(q.p50 == doctest::Approx(5.0).epsilon(0.10));
    CHECK(q.max <= 10.0); // single-period bound: delay <= M
    for (double d : delays) CHECK(d > 0.0);
}

TEST_CASE("the just-missed-milestone case lands in (M, 2M]") {
    // submitted 0.1 s before the milestone, processing pushed it past: the
    // next milestone confirms it one full interval later.
    ConfirmationSample missed{"m", 9.9, 20.0};
    CHECK(missed.delay_s() > 10.0);
    CHECK(missed.delay_s() <= 20.0);
}

TEST_CASE("samples parse back from an event log") {
    const std::string log =
        "1000000 adapter submit block=aa11 kind=DeviceUpdate\n"
        "1500000 adapter ingest device=dev001 outcome=accepted\n"
        "2000000 coordinator confirm block=aa11 ms=1\n"
        "3000000 adapter submit block=bb22 kind=DeviceUpdate\n"
        "9000000 coordinator confirm block=bb22 ms=2\n";
    const auto samples = samples_from_event_log(log);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].block_hex == "aa11");
    CHECK(samples[0].submit_s == doctest::Approx(1.0));
    CHECK(samples[0].confirm_s == doctest::Approx(2.0));
    CHECK(samples[1].delay_s() == doctest::Approx(6.0));
}

TEST_CASE("merge_repeats aggregates tps and delays") {
    std::vector<RepeatMetrics> reps(3);
    for (int i = 0; i < 3; ++i) {
        reps[i].repeat = i;
        reps[i].tps = 2.0 + 0.1 * i;
        reps[i].delays_s = {1.0 + i, 2.0 + i};
    }
    const auto report = merge_repeats(reps);
    CHECK(report.tps_samples.size() == 3);
    CHECK(report.tps_mean == doctest::Approx(2.1));
    CHECK(report.n_delay_samples == 6);
    CHECK(report.quantiles.max == doctest::Approx(4.0));
    const auto check = variability(report.tps_samples);
    CHECK(report.variability_pct == check.pct);
}

} // TEST_SUITE
