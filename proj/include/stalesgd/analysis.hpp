#pragma once

#include "stalesgd/distributions.hpp"
#include "stalesgd/engine.hpp"
#include "stalesgd/steppolicy.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stalesgd {

// Which drift theorem the (model, policy) pair instantiates.
enum class DriftTheorem {
    none,                // raw sequences only
    cmp_flat,            // CmpZero over matching CMP: w(i) constant
    cmp_momentum,        // CmpTune over matching CMP: d(i) = K e^-lambda p(i)
    poisson_momentum,    // PoissonTune over matching Poisson, same identity
    geometric_momentum,  // geometric staleness: w is geometric, ratio = momentum
};

std::string drift_theorem_name(DriftTheorem t);

// Coefficient sequences of the expected-update expansion. The weights
// w(i) = p(i) * alpha(i) use the raw algebraic step values, which is what
// the identities are stated about.
struct DriftReport {
    std::vector<double> w;  // p(i) alpha(i), i = 0..I
    std::vector<double> d;  // w(i) - w(i+1), i = 0..I-1
    double leading_coeff = 0.0;
    DriftTheorem theorem = DriftTheorem::none;
    // cmp_flat: max |w(i)-w(0)| / |w(0)|
    // cmp/poisson_momentum: max |d(i) - K e^-l p(i)| / max |K e^-l p(i)|
    double residual = 0.0;
    // geometric_momentum: fitted w-ratio and its max deviation
    std::optional<double> recovered_momentum;
    std::optional<double> momentum_target;  // policy's mu_target when defined
};

DriftReport drift_report(const StalenessModel& model, const StepPolicy& policy, int64_t I);

struct MomentumOptions {
    double warmup_frac = 0.1;
    int max_lag = 12;
    int yw_lo = 3;            // first usable lag of the AR recursion
    double select_ratio = 0.5;  // order-2 must halve the order-1 residual
    double se_mult = 3.0;       // and its phi2 must clear this many std errors
};

struct MomentumEstimate {
    double mu_hat = 0.0;
    double std_error = 0.0;
    std::string method;                  // "lag1-exact", "lag1", "yw2", mixes
    std::vector<double> per_coordinate;  // one estimate per coordinate
};

// Implicit-momentum estimate from recorded parameter increments. Multiple
// traces (seeds) are pooled at the autocovariance level; coordinates are
// estimated independently and averaged. Traces must carry increments
// (RunConfig::record_increments) and at least 1,000 post-warmup rows.
MomentumEstimate estimate_implicit_momentum(std::span<const RunTrace> traces,
                                            const MomentumOptions& opts = {});
MomentumEstimate estimate_implicit_momentum(const RunTrace& trace,
                                            const MomentumOptions& opts = {});
// Single raw increment series (one coordinate).
MomentumEstimate estimate_momentum_from_series(std::span<const double> increments,
                                               const MomentumOptions& opts = {});

struct BoundsInput {
    double c = 0.0;
    double L = 0.0;
    double M = 0.0;
    double eps = 0.0;      // target squared distance
    double tau_bar = 0.0;  // E[tau]
    double theta = 1.0;    // in (0, 2)
    double d0_sq = 0.0;    // ||x0 - x*||^2
    // step moments for the general form; computed from (model, policy) when absent
    std::optional<double> e_alpha;
    std::optional<double> e_tau_alpha;
    std::optional<double> e_alpha_sq;
};

struct BoundsReport {
    std::string kind;  // "general", "constant-alpha", "decaying-alpha"
    bool feasible = false;
    double T = 0.0;
    int64_t T_ceil = 0;
    double alpha = 0.0;  // NaN when not applicable
    double denominator = 0.0;
    double e_alpha = 0.0, e_alpha_sq = 0.0, e_tau_alpha = 0.0;
    std::string note;
};

BoundsReport bound_general(const BoundsInput& in);
// Corollary-style constant step: picks alpha from (c, L, M, eps, tau_bar, theta)
std::pair<double, BoundsReport> alpha_choice_and_bound(const BoundsInput& in);
BoundsReport bound_decaying(const StalenessModel& model, const PolicyWrapper& policy,
                            const BoundsInput& in);

struct PolicyMoments {
    double e_alpha = 0.0;
    double e_alpha_sq = 0.0;
    double e_tau_alpha = 0.0;
};
// pmf-weighted moments of the wrapped step over the model's truncated support
PolicyMoments policy_moments(const StalenessModel& model, const PolicyWrapper& policy);

}  // namespace stalesgd
