#include "stalesgd/specialfn.hpp"

#include "stalesgd/errors.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace stalesgd::specialfn {

namespace {

constexpr int kMaxTerms = 10000;
constexpr double kTermTol = 1e-15;

std::array<double, 21> make_small_table() {
    std::array<double, 21> t{};
    unsigned long long f = 1;
    t[0] = 0.0;
    for (int n = 1; n <= 20; ++n) {
        f *= static_cast<unsigned long long>(n);
        t[static_cast<size_t>(n)] = std::log(static_cast<double>(f));
    }
    return t;
}

const std::array<double, 21> kSmallLogFact = make_small_table();

}  // namespace

double log_factorial(int64_t n) {
    if (n < 0) throw validation_error("log_factorial: n must be >= 0");
    if (n <= 20) return kSmallLogFact[static_cast<size_t>(n)];
    return std::lgamma(static_cast<double>(n) + 1.0);
}

CmpNormalizer cmp_normalizer(double lambda, double nu) {
    if (!(lambda > 0.0)) throw validation_error("cmp_normalizer: lambda must be > 0");
    if (!(nu > 0.0)) throw validation_error("cmp_normalizer: nu must be > 0");

    const double log_lambda = std::log(lambda);
    // terms grow while lambda / (i+1)^nu > 1, i.e. up to i ~ lambda^(1/nu)
    const double mode = std::pow(lambda, 1.0 / nu);

    // sum exp(i*log_lambda - nu*lfact(i)) with a running max for stability
    double log_sum = 0.0;  // i = 0 term is 1
    int i = 1;
    double log_term = 0.0;
    for (; i < kMaxTerms; ++i) {
        log_term = i * log_lambda - nu * log_factorial(i);
        double log_ratio = log_term - log_sum;
        if (log_ratio > 0.0)
            log_sum = log_term + std::log1p(std::exp(-log_ratio));
        else
            log_sum = log_sum + std::log1p(std::exp(log_ratio));
        if (i > mode && log_term - log_sum < std::log(kTermTol)) break;
    }
    if (i >= kMaxTerms) {
        std::ostringstream os;
        os << "cmp_normalizer: series did not converge within " << kMaxTerms
           << " terms (lambda=" << lambda << ", nu=" << nu << ", last log-term " << log_term
           << ", log-sum " << log_sum << ")";
        throw numeric_error(os.str());
    }

    CmpNormalizer out;
    out.lambda = lambda;
    out.nu = nu;
    out.log_value = log_sum;
    out.value = std::exp(log_sum);
    out.terms_used = i + 1;
    // tail <= term_{i+1} / (1 - r) with r the (decreasing) term ratio past the mode
    double r = lambda / std::pow(static_cast<double>(i) + 1.0, nu);
    double log_next = (i + 1) * log_lambda - nu * log_factorial(i + 1);
    out.truncation_bound = (r < 1.0) ? std::exp(log_next) / (1.0 - r)
                                     : std::exp(log_next);
    return out;
}

double regularized_upper_gamma(int64_t tau, double lambda) {
    if (tau < 0) throw validation_error("regularized_upper_gamma: tau must be >= 0");
    if (!(lambda > 0.0)) throw validation_error("regularized_upper_gamma: lambda must be > 0");
    if (tau == 0) return 0.0;

    const double log_lambda = std::log(lambda);
    double sum = 0.0;
    for (int64_t j = 0; j < tau; ++j) {
        // e^-lambda * lambda^j / j!, each term assembled in log space
        sum += std::exp(j * log_lambda - lambda - log_factorial(j));
    }
    return sum > 1.0 ? 1.0 : sum;
}

}  // namespace stalesgd::specialfn
