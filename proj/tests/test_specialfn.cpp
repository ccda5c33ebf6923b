#include "stalesgd/specialfn.hpp"
#include "stalesgd/errors.hpp"

#include <cmath>
#include <doctest.h>

using namespace stalesgd;
using namespace stalesgd::specialfn;

TEST_CASE("log_factorial small values are exact") {
    CHECK(log_factorial(0) == 0.0);
    CHECK(log_factorial(1) == 0.0);
    CHECK(log_factorial(10) == doctest::Approx(std::log(3628800.0)).epsilon(1e-15));
    CHECK(log_factorial(20) == doctest::Approx(std::log(2432902008176640000.0)).epsilon(1e-15));
}

TEST_CASE("log_factorial is monotone and consistent with lgamma") {
    double prev = -1.0;
    for (int64_t n = 0; n <= 400; ++n) {
        double v = log_factorial(n);
        CHECK(v >= prev);
        prev = v;
        CHECK(v == doctest::Approx(std::lgamma(static_cast<double>(n) + 1.0)).epsilon(1e-13));
    }
    CHECK_THROWS_AS(log_factorial(-1), validation_error);
}

TEST_CASE("cmp normalizer known values") {
    CHECK(cmp_normalizer(1.0, 1.0).value == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
    CHECK(cmp_normalizer(8.0, 1.0).value == doctest::Approx(std::exp(8.0)).epsilon(1e-12));
    // direct partial summation reference
    double z = 0.0;
    for (int i = 0; i < 200; ++i) z += std::pow(4.0, i) / std::pow(std::tgamma(i + 1.0), 2.0);
    CHECK(cmp_normalizer(4.0, 2.0).value == doctest::Approx(z).epsilon(1e-12));
    CHECK(cmp_normalizer(4.0, 2.0).value == doctest::Approx(11.3019).epsilon(1e-4));
}

TEST_CASE("cmp normalizer matches exp(lambda) at nu=1") {
    for (double lam : {0.5, 2.0, 10.0, 25.0, 40.0}) {
        auto z = cmp_normalizer(lam, 1.0);
        CHECK(z.value == doctest::Approx(std::exp(lam)).epsilon(1e-10));
        CHECK(z.value >= 1.0);
        CHECK(z.truncation_bound < 1e-12 * z.value);
    }
}

TEST_CASE("cmp normalizer handles slow-decay and fast-decay corners") {
    auto slow = cmp_normalizer(std::pow(16.0, 0.05), 0.05);
    CHECK(slow.terms_used < 10000);
    CHECK(slow.truncation_bound < 1e-12 * slow.value);
    auto spread = cmp_normalizer(25.0, 0.5);  // series mode near 625
    CHECK(spread.terms_used > 600);
    CHECK(std::isfinite(spread.log_value));
    CHECK_THROWS_AS(cmp_normalizer(-1.0, 1.0), validation_error);
    CHECK_THROWS_AS(cmp_normalizer(1.0, 0.0), validation_error);
}

TEST_CASE("regularized upper gamma examples") {
    CHECK(regularized_upper_gamma(1, 2.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
    CHECK(regularized_upper_gamma(2, 1.0) == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));
    CHECK(regularized_upper_gamma(0, 5.0) == 0.0);
}

TEST_CASE("regularized upper gamma: range, monotonicity, identity cross-check") {
    for (double lam : {0.5, 1.0, 4.0, 8.0, 16.0, 32.0}) {
        double prev = 0.0;
        long double acc = 0.0L;  // independent high-precision accumulation
        for (int64_t tau = 0; tau <= 200; ++tau) {
            double q = regularized_upper_gamma(tau, lam);
            CHECK(q >= 0.0);
            CHECK(q <= 1.0);
            CHECK(q >= prev - 1e-15);
            prev = q;
            CHECK(std::abs(q - static_cast<double>(acc)) < 1e-12);
            acc += expl(tau * logl((long double)lam) - (long double)lam -
                        lgammal((long double)tau + 1.0L));
        }
    }
}
