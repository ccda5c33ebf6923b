#include "stalesgd/steppolicy.hpp"
#include "stalesgd/errors.hpp"

#include <cmath>
#include <doctest.h>

using namespace stalesgd;

TEST_CASE("cmp-zero and poisson-tune example values") {
    auto z = StepPolicy::cmp_zero(8.0, 1.0, 1.0, 0.01);
    CHECK(z.step(0) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(z.step(2) == doctest::Approx(0.01 * 2.0 / 64.0).epsilon(1e-12));

    auto pt = StepPolicy::poisson_tune(1.0, 0.01, 0.01);
    double c2 = 1.0 - 2.0 * std::exp(-1.0);
    CHECK(c2 == doctest::Approx(0.26424).epsilon(1e-3));
    CHECK(pt.step(2) == doctest::Approx(c2 * 2.0 * 0.01).epsilon(1e-10));
}

TEST_CASE("constant and inverse-tau") {
    auto c = StepPolicy::constant(0.05);
    CHECK(c.step(0) == 0.05);
    CHECK(c.step(1000) == 0.05);
    auto it = StepPolicy::inverse_tau(0.1);
    CHECK(it.step(0) == doctest::Approx(0.1));  // tau=0 means full step
    CHECK(it.step(1) == doctest::Approx(0.1));
    CHECK(it.step(4) == doctest::Approx(0.025));
}

TEST_CASE("momentum-targeted decay constant") {
    // inverting the derived C recovers the target exactly
    for (double p : {0.1, 0.2, 0.5, 0.9}) {
        for (double mu : {0.25, 0.5, 1.0, 1.5}) {
            double C = derive_C_for_momentum(p, mu);
            CHECK(C > 0.0);
            CHECK((1.0 - p) / C == doctest::Approx(mu).epsilon(1e-15));
        }
    }
    // p -> 1 sends C -> 0 for any target
    CHECK(derive_C_for_momentum(0.999999, 0.5) < 1e-5);
    CHECK_THROWS_AS(derive_C_for_momentum(0.5, 2.0), validation_error);
    CHECK_THROWS_AS(derive_C_for_momentum(0.5, -0.1), validation_error);
    CHECK_THROWS_AS(derive_C_for_momentum(1.0, 0.5), validation_error);
}

TEST_CASE("geometric-tuned step shape") {
    // mu*=0.8, p=0.6 gives alpha(tau) = (alpha/p) * 2^tau
    auto g = StepPolicy::geometric_tuned(0.6, 0.8, 0.006);
    CHECK(g.step(0) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(g.step(1) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(g.step(2) == doctest::Approx(0.04).epsilon(1e-12));
    // mu*=0 keeps only fresh gradients
    auto g0 = StepPolicy::geometric_tuned(0.5, 0.0, 0.001);
    CHECK(g0.step(0) == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(g0.step(1) == 0.0);
    CHECK(g0.step(77) == 0.0);
}

TEST_CASE("negative tuning factor clamps to a skip") {
    // K large relative to the partial sums sends c(tau) negative quickly here
    auto t = StepPolicy::cmp_tune(25.0, 0.5, 0.01, 0.01);
    bool saw_skip = false;
    for (int64_t tau = 0; tau <= 60; ++tau) {
        double s = t.step(tau);
        CHECK(s >= 0.0);
        if (s == 0.0 && t.formula_step(tau) < 0.0) saw_skip = true;
    }
    CHECK(saw_skip);
}

TEST_CASE("poisson-tune equals cmp-tune at nu=1") {
    for (double lam : {1.0, 4.0, 8.0, 16.0, 32.0}) {
        for (double k_mult : {1.0, 0.3}) {
            double alpha = 0.01;
            auto pt = StepPolicy::poisson_tune(lam, k_mult * alpha, alpha);
            auto ct = StepPolicy::cmp_tune(lam, 1.0, k_mult * alpha, alpha);
            for (int64_t tau = 0; tau <= 150; ++tau) {
                double a = pt.step(tau), b = ct.step(tau);
                CHECK(std::abs(a - b) <= 1e-10 * std::max({std::abs(a), std::abs(b), 1e-300}));
            }
        }
    }
}

TEST_CASE("steps stay finite out to tau = 10000") {
    std::vector<StepPolicy> policies{
        StepPolicy::constant(0.01),
        StepPolicy::inverse_tau(0.01),
        StepPolicy::geometric_tuned(0.3, 0.5, 0.01),
        StepPolicy::geometric_tuned(0.5, 1.5, 0.01),
        StepPolicy::cmp_zero(1.0, 1.0, 1.0, 0.01),
        StepPolicy::cmp_zero(8.0, 1.0, 1.0, 0.01),
        StepPolicy::cmp_zero(25.0, 0.5, 1.0, 0.01),
        StepPolicy::cmp_tune(8.0, 1.0, 0.01, 0.01),
        StepPolicy::poisson_tune(16.0, 0.01, 0.01),
    };
    for (const auto& p : policies) {
        for (int64_t tau : {0, 1, 7, 150, 1000, 10000}) {
            double s = p.step(tau);
            CHECK(std::isfinite(s));
            CHECK(s >= 0.0);
        }
    }
}

TEST_CASE("normalization arithmetic") {
    StalenessHistogram h;
    h.add(0, 50);
    h.add(1, 30);
    h.add(2, 20);
    // raw steps 0.01, 0.02, 0.04 -> weighted mean 0.019
    auto g = StepPolicy::geometric_tuned(0.6, 0.8, 0.006);
    auto w = normalize(g, h, 0.01);
    REQUIRE(w.scale.has_value());
    CHECK(*w.scale == doctest::Approx(0.01 / 0.019).epsilon(1e-12));

    // constant policy is already normalized
    auto cw = normalize(StepPolicy::constant(0.01), h, 0.01);
    CHECK(*cw.scale == doctest::Approx(1.0).epsilon(1e-12));

    // single point
    StalenessHistogram one;
    one.add(0, 1);
    auto sw = normalize(StepPolicy::constant(0.05), one, 0.01);
    CHECK(*sw.scale == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("normalize enforces the weighted-mean condition and is idempotent") {
    Rng rng(3);
    StalenessHistogram h;
    auto model = StalenessModel::poisson(8.0);
    for (int i = 0; i < 20000; ++i) h.add(model.sample(rng));
    auto pol = StepPolicy::poisson_tune(8.0, 0.01, 0.01);
    double alpha_c = 0.01;
    auto w = normalize(pol, h, alpha_c);
    double mean = 0.0;
    for (const auto& [tau, count] : h.counts)
        mean += w.step(tau) * static_cast<double>(count) / static_cast<double>(h.total);
    CHECK(mean == doctest::Approx(alpha_c).epsilon(1e-9));

    auto w2 = normalize(w, h, alpha_c);
    CHECK(*w2.scale / *w.scale == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normalize rejects an all-skipped policy") {
    StalenessHistogram h;
    h.add(5, 10);  // only stale updates
    auto g0 = StepPolicy::geometric_tuned(0.5, 0.0, 0.001);  // fresh-only policy
    CHECK_THROWS_AS(normalize(g0, h, 0.01), numeric_error);
}

TEST_CASE("clip and cutoff wrappers") {
    double alpha_c = 0.01;
    auto w = clip_and_cutoff(PolicyWrapper(StepPolicy::constant(0.08)), alpha_c);
    CHECK(w.step(0) == doctest::Approx(0.05));  // 5 * alpha_c cap
    CHECK(w.step(150) == doctest::Approx(0.05));
    CHECK(w.step(151) == 0.0);  // beyond the cutoff

    auto w2 = clip_and_cutoff(PolicyWrapper(StepPolicy::constant(0.03)), alpha_c);
    CHECK(w2.step(3) == doctest::Approx(0.03));  // below cap, unchanged

    CHECK_THROWS_AS(
        clip_and_cutoff(PolicyWrapper(StepPolicy::constant(0.01)), alpha_c, -1.0, 10),
        validation_error);
}

TEST_CASE("wrapper composition order: scale, then cap, then cutoff") {
    StalenessHistogram h;
    h.add(0, 1);
    auto w = normalize(StepPolicy::constant(0.001), h, 0.01);  // scale 10
    w = clip_and_cutoff(std::move(w), 0.01, 5.0, 100);
    CHECK(w.step(0) == doctest::Approx(0.01));   // scaled to alpha_c, below cap
    CHECK(w.step(101) == 0.0);
}

TEST_CASE("policy parameter validation") {
    CHECK_THROWS_AS(StepPolicy::constant(0.0), validation_error);
    CHECK_THROWS_AS(StepPolicy::cmp_zero(0.0, 1.0, 1.0, 0.01), validation_error);
    CHECK_THROWS_AS(StepPolicy::cmp_zero(1.0, 1.0, 0.0, 0.01), validation_error);
    CHECK_THROWS_AS(StepPolicy::geometric_tuned(0.5, 2.0, 0.01), validation_error);
    CHECK_THROWS_AS(StepPolicy::poisson_tune(-2.0, 0.01, 0.01), validation_error);
    CHECK_THROWS_AS(StepPolicy::constant(0.01).step(-1), validation_error);
}
