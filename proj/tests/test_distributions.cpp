#include "stalesgd/distributions.hpp"
#include "stalesgd/errors.hpp"

#include <cmath>
#include <doctest.h>
#include <limits>
#include <sstream>

using namespace stalesgd;

TEST_CASE("pmf examples") {
    CHECK(StalenessModel::geometric(0.12).pmf(0) == doctest::Approx(0.12).epsilon(1e-12));
    CHECK(StalenessModel::uniform(3).pmf(5) == 0.0);
    CHECK(StalenessModel::poisson(8.0).pmf(8) == doctest::Approx(0.1396).epsilon(1e-3));
    // direct evaluation reference
    double want = std::pow(8.0, 8) * std::exp(-8.0) / 40320.0;
    CHECK(StalenessModel::poisson(8.0).pmf(8) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("invalid parameters are rejected") {
    CHECK_THROWS_AS(StalenessModel::geometric(0.0), validation_error);
    CHECK_THROWS_AS(StalenessModel::geometric(1.5), validation_error);
    CHECK_THROWS_AS(StalenessModel::poisson(-1.0), validation_error);
    CHECK_THROWS_AS(StalenessModel::cmp(1.0, 0.0), validation_error);
    CHECK_THROWS_AS(StalenessModel::uniform(-1), validation_error);
}

TEST_CASE("pmf normalizes over the truncated support") {
    auto check_norm = [](const StalenessModel& m) {
        double sum = 0.0;
        for (int64_t i = 0; i <= m.truncation_index(); ++i) sum += m.pmf(i);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    };
    check_norm(StalenessModel::geometric(0.05));
    check_norm(StalenessModel::geometric(1.0));
    check_norm(StalenessModel::uniform(17));
    check_norm(StalenessModel::poisson(0.3));
    check_norm(StalenessModel::poisson(32.0));
    check_norm(StalenessModel::cmp(8.0, 1.0));
    check_norm(StalenessModel::cmp(25.0, 0.5));
    check_norm(StalenessModel::cmp(4.0, 2.0));
}

TEST_CASE("CMP with nu=1 equals Poisson pointwise") {
    for (double lam : {1.0, 4.0, 8.0, 16.0}) {
        auto cmp = StalenessModel::cmp(lam, 1.0);
        auto poi = StalenessModel::poisson(lam);
        for (int64_t i = 0; i <= 200; ++i) {
            double a = cmp.pmf(i), b = poi.pmf(i);
            CHECK(std::abs(a - b) <= 1e-12 * std::max(a, b) + 1e-300);
        }
    }
}

TEST_CASE("mode formula against direct argmax") {
    CHECK(StalenessModel::cmp(5.0, 2.0).mode() == 2);
    CHECK(StalenessModel::poisson(16.0).mode() == 16);
    CHECK(StalenessModel::geometric(0.3).mode() == 0);
    // floor(lambda^(1/nu)) is always within the pmf argmax tie set
    for (int lam_i = 1; lam_i <= 40; ++lam_i) {
        for (double nu : {0.25, 0.5, 1.0, 2.0, 4.0}) {
            if (std::pow(static_cast<double>(lam_i), 1.0 / nu) >= 10000.0) {
                // series mode beyond the normalizer's term budget
                CHECK_THROWS_AS(StalenessModel::cmp(static_cast<double>(lam_i), nu),
                                numeric_error);
                continue;
            }
            auto m = StalenessModel::cmp(static_cast<double>(lam_i), nu);
            int64_t claimed = m.mode();
            double best = 0.0;
            for (int64_t i = 0; i <= m.truncation_index(); ++i) best = std::max(best, m.pmf(i));
            CHECK(m.pmf(claimed) >= best * (1.0 - 1e-9));
        }
    }
}

TEST_CASE("sampling degenerate cases and moments") {
    Rng rng(99);
    auto u0 = StalenessModel::uniform(0);
    auto g1 = StalenessModel::geometric(1.0);
    for (int i = 0; i < 100; ++i) {
        CHECK(u0.sample(rng) == 0);
        CHECK(g1.sample(rng) == 0);
    }
    // CLT window for the Poisson mean, 3 sigma
    auto poi = StalenessModel::poisson(8.0);
    int64_t n = 1000000;
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += static_cast<double>(poi.sample(rng));
    double mean = sum / static_cast<double>(n);
    CHECK(mean > 7.97);
    CHECK(mean < 8.03);
}

TEST_CASE("sampling matches pmf (chi-square-ish sanity)") {
    Rng rng(1234);
    for (const auto& m : {StalenessModel::geometric(0.25), StalenessModel::cmp(8.0, 1.4),
                          StalenessModel::uniform(9)}) {
        auto h = histogram_from_samples(m, 200000, rng);
        for (int64_t i = 0; i <= std::min<int64_t>(m.truncation_index(), 30); ++i) {
            double p = m.pmf(i);
            if (p < 1e-4) continue;
            double se = std::sqrt(p * (1 - p) / 200000.0);
            CHECK(std::abs(h.frequency(i) - p) < 5.0 * se + 1e-4);
        }
    }
}

TEST_CASE("bhattacharyya basics") {
    Rng rng(5);
    auto g = StalenessModel::geometric(0.5);
    // histogram equal to the model over its full truncated support
    StalenessHistogram h;
    const int64_t scale = 1000000000;
    for (int64_t i = 0; i <= g.truncation_index(); ++i) {
        int64_t c = static_cast<int64_t>(std::llround(g.pmf(i) * static_cast<double>(scale)));
        if (c > 0) h.add(i, c);
    }
    CHECK(bhattacharyya(h, g) == doctest::Approx(0.0).epsilon(1e-9));

    // point histogram against a two-point model: -ln sqrt(0.5)
    StalenessHistogram point;
    point.add(0, 1234);
    auto u1 = StalenessModel::uniform(1);
    CHECK(bhattacharyya(point, u1) == doctest::Approx(-std::log(std::sqrt(0.5))).epsilon(1e-12));

    // disjoint supports
    StalenessHistogram far;
    far.add(50, 10);
    CHECK(std::isinf(bhattacharyya(far, StalenessModel::uniform(3))));

    // non-negativity on random pairs
    for (int k = 0; k < 20; ++k) {
        auto m = StalenessModel::poisson(1.0 + 2.0 * rng.next_double());
        auto hh = histogram_from_samples(StalenessModel::geometric(0.2), 2000, rng);
        CHECK(bhattacharyya(hh, m) >= 0.0);
    }
}

TEST_CASE("histogram csv round trip and validation") {
    StalenessHistogram h;
    h.add(0, 5);
    h.add(2, 7);
    h.add(11, 1);
    std::ostringstream os;
    save_histogram_csv(h, os);
    CHECK(os.str() == "tau,count\n0,5\n2,7\n11,1\n");
    std::istringstream is(os.str());
    auto back = load_histogram_csv(is);
    CHECK(back.counts == h.counts);
    CHECK(back.total == h.total);

    std::istringstream bad("nope\n1,2\n");
    CHECK_THROWS_AS(load_histogram_csv(bad), validation_error);
    std::istringstream empty("");
    CHECK_THROWS_AS(load_histogram_csv(empty), validation_error);
    std::istringstream headeronly("tau,count\n");
    CHECK_THROWS_AS(load_histogram_csv(headeronly), validation_error);
}

TEST_CASE("fit recovers generators (self-consistency)") {
    Rng rng(2024);

    auto geom_hist = histogram_from_samples(StalenessModel::geometric(0.12), 100000, rng);
    auto geom_fit = fit(geom_hist, Family::geometric);
    CHECK(geom_fit.model.p() > 0.11);
    CHECK(geom_fit.model.p() < 0.13);
    CHECK(geom_fit.distance < 0.01);

    auto cmp_hist = histogram_from_samples(StalenessModel::cmp(8.0, 1.0), 100000, rng);
    auto cmp_fit = fit(cmp_hist, Family::cmp, 8);
    CHECK(cmp_fit.model.nu() > 0.9);
    CHECK(cmp_fit.model.nu() < 1.1);

    auto poi_hist = histogram_from_samples(StalenessModel::poisson(6.0), 100000, rng);
    auto poi_fit = fit(poi_hist, Family::poisson);
    CHECK(poi_fit.model.lambda() > 5.7);
    CHECK(poi_fit.model.lambda() < 6.3);

    auto unif_hist = histogram_from_samples(StalenessModel::uniform(7), 100000, rng);
    auto unif_fit = fit(unif_hist, Family::uniform);
    CHECK(unif_fit.model.tau_hat() == 7);
}

TEST_CASE("fit point-histogram matches a brute-force scan") {
    StalenessHistogram h;
    h.add(3, 100);
    auto rep = fit(h, Family::uniform);
    double best = std::numeric_limits<double>::infinity();
    int64_t best_tau = 0;
    for (int64_t t = 0; t <= h.max_tau() + 5; ++t) {
        double d = bhattacharyya(h, StalenessModel::uniform(t));
        if (d < best) {
            best = d;
            best_tau = t;
        }
    }
    CHECK(rep.model.tau_hat() == best_tau);
    CHECK(rep.distance == doctest::Approx(best));
    // all mass at zero pushes the geometric fit to the top of its grid
    StalenessHistogram zero;
    zero.add(0, 1000);
    CHECK(fit(zero, Family::geometric).model.p() == doctest::Approx(0.999));
}

TEST_CASE("fit validates inputs") {
    StalenessHistogram empty;
    CHECK_THROWS_AS(fit(empty, Family::geometric), validation_error);
    StalenessHistogram h;
    h.add(1, 1);
    CHECK_THROWS_AS(fit(h, Family::cmp, 0), validation_error);
}
