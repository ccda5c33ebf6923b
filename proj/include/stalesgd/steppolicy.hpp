#pragma once

#include "stalesgd/distributions.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stalesgd {

enum class PolicyKind {
    constant,
    geometric_tuned,
    cmp_zero,
    cmp_tune,
    poisson_tune,
    inverse_tau,
};

std::string policy_kind_name(PolicyKind k);
PolicyKind policy_kind_from_name(const std::string& name);

// Staleness -> step size. Immutable; evaluation is pure.
//
// step() is the operational value: a negative tuning factor clamps to 0,
// which the engine treats as "skip this update". formula_step() is the raw
// algebraic value and is what the drift identities in the analysis module
// are stated about.
class StepPolicy {
public:
    static StepPolicy constant(double alpha);
    // Targets an implicit asynchrony-induced momentum of mu_target under
    // Geometric(p) staleness. mu_target = 0 degenerates to "fresh gradients
    // only" (infinite decay rate).
    static StepPolicy geometric_tuned(double p, double mu_target, double alpha);
    static StepPolicy cmp_zero(double lambda, double nu, double C, double alpha);
    static StepPolicy cmp_tune(double lambda, double nu, double K, double alpha);
    static StepPolicy poisson_tune(double lambda, double K, double alpha);
    static StepPolicy inverse_tau(double alpha);

    PolicyKind kind() const { return kind_; }
    double step(int64_t tau) const;
    double formula_step(int64_t tau) const;

    // step value as factor * exp(log_scale); keeps pmf-step products
    // representable when the factors alone would under- or overflow
    struct StepParts {
        double factor = 0.0;
        double log_scale = 0.0;
    };
    StepParts step_parts(int64_t tau) const;

    double base_alpha() const { return alpha_; }
    double lambda() const { return a_; }
    double nu() const { return b_; }
    double K() const { return c_; }
    double C() const { return c_; }
    double p() const { return a_; }
    double mu_target() const { return b_; }

    std::vector<std::pair<std::string, double>> params() const;
    std::string describe() const;

private:
    StepPolicy(PolicyKind k, double a, double b, double c, double alpha)
        : kind_(k), a_(a), b_(b), c_(c), alpha_(alpha) {}

    PolicyKind kind_;
    double a_ = 0.0;
    double b_ = 0.0;
    double c_ = 0.0;
    double alpha_ = 0.0;
};

// The decay constant C of the geometric tuning rule alpha(tau) =
// C^-tau p^-1 alpha that induces expected momentum mu_target: C = (1-p)/mu_target.
double derive_C_for_momentum(double p, double mu_target);

// Evaluation-section wrappers, applied in fixed order: normalization scale
// on the raw policy, then the clip cap, then the staleness cutoff.
struct PolicyWrapper {
    StepPolicy inner;
    std::optional<double> scale;     // multiplies inner.step
    std::optional<double> clip_cap;  // absolute cap (clip_mult * alpha_c)
    std::optional<int64_t> cutoff;   // updates with tau > cutoff are skipped

    explicit PolicyWrapper(StepPolicy p) : inner(std::move(p)) {}

    double step(int64_t tau) const {
        if (cutoff && tau > *cutoff) return 0.0;
        double v = inner.step(tau);
        if (scale) v *= *scale;
        if (clip_cap && v > *clip_cap) v = *clip_cap;
        return v;
    }
};

// Rescales so the histogram-weighted mean step equals alpha_c.
PolicyWrapper normalize(const PolicyWrapper& w, const StalenessHistogram& hist, double alpha_c);
PolicyWrapper normalize(const StepPolicy& p, const StalenessHistogram& hist, double alpha_c);

// cap_mult defaults to 5 and tau_max to 150.
PolicyWrapper clip_and_cutoff(PolicyWrapper w, double alpha_c, double cap_mult = 5.0,
                              int64_t tau_max = 150);

}  // namespace stalesgd
