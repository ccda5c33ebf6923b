#pragma once

#include <cstdint>

namespace stalesgd::specialfn {

// ln(n!). Exact integer accumulation for n <= 20, lgamma beyond.
double log_factorial(int64_t n);

struct CmpNormalizer {
    double lambda = 0.0;
    double nu = 0.0;
    double value = 0.0;      // Z(lambda, nu); may overflow to inf for extreme inputs
    double log_value = 0.0;  // always finite for valid inputs
    int terms_used = 0;
    double truncation_bound = 0.0;  // geometric tail estimate, absolute
};

// Z(lambda, nu) = sum_j lambda^j / (j!)^nu, summed in log space until the
// term drops below 1e-15 of the partial sum past the series mode, capped at
// 10,000 terms (numeric_error beyond that).
CmpNormalizer cmp_normalizer(double lambda, double nu);

// Q(tau, lambda) = Gamma(tau, lambda) / Gamma(tau) for integer tau >= 1,
// evaluated through the identity Q = e^-lambda * sum_{j<tau} lambda^j / j!.
// Q(0, lambda) := 0 (empty sum).
double regularized_upper_gamma(int64_t tau, double lambda);

}  // namespace stalesgd::specialfn
