#include "stalesgd/steppolicy.hpp"

#include "stalesgd/errors.hpp"
#include "stalesgd/specialfn.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace stalesgd {

namespace {

// log-space evaluation with saturation keeps every step finite
double safe_exp(double x) {
    if (x >= 709.0) return std::numeric_limits<double>::max();
    return std::exp(x);
}

// sum_{j=0}^{tau-1} lambda^j / (j!)^nu, weighted by e^-lambda
double cmp_partial_sum(int64_t tau, double lambda, double nu) {
    double log_lambda = std::log(lambda);
    double s = 0.0;
    for (int64_t j = 0; j < tau; ++j)
        s += safe_exp(static_cast<double>(j) * log_lambda - lambda -
                      nu * specialfn::log_factorial(j));
    return s;
}

}  // namespace

std::string policy_kind_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::constant: return "const";
        case PolicyKind::geometric_tuned: return "geom-tuned";
        case PolicyKind::cmp_zero: return "cmp-zero";
        case PolicyKind::cmp_tune: return "cmp-tune";
        case PolicyKind::poisson_tune: return "poisson-tune";
        case PolicyKind::inverse_tau: return "inv-tau";
    }
    return "?";
}

PolicyKind policy_kind_from_name(const std::string& name) {
    if (name == "const" || name == "constant") return PolicyKind::constant;
    if (name == "geom-tuned") return PolicyKind::geometric_tuned;
    if (name == "cmp-zero") return PolicyKind::cmp_zero;
    if (name == "cmp-tune") return PolicyKind::cmp_tune;
    if (name == "poisson-tune") return PolicyKind::poisson_tune;
    if (name == "inv-tau") return PolicyKind::inverse_tau;
    throw validation_error("unknown policy kind: " + name);
}

StepPolicy StepPolicy::constant(double alpha) {
    if (!(alpha > 0.0)) throw validation_error("constant policy: alpha must be > 0");
    return StepPolicy(PolicyKind::constant, 0, 0, 0, alpha);
}

StepPolicy StepPolicy::geometric_tuned(double p, double mu_target, double alpha) {
    if (!(p > 0.0 && p < 1.0)) throw validation_error("geom-tuned: p must be in (0, 1)");
    if (!(mu_target >= 0.0 && mu_target < 2.0))
        throw validation_error("geom-tuned: mu_target must be in [0, 2)");
    if (!(alpha > 0.0)) throw validation_error("geom-tuned: alpha must be > 0");
    double C = mu_target > 0.0 ? derive_C_for_momentum(p, mu_target)
                               : std::numeric_limits<double>::infinity();
    return StepPolicy(PolicyKind::geometric_tuned, p, mu_target, C, alpha);
}

StepPolicy StepPolicy::cmp_zero(double lambda, double nu, double C, double alpha) {
    if (!(lambda > 0.0)) throw validation_error("cmp-zero: lambda must be > 0");
    if (!(nu > 0.0)) throw validation_error("cmp-zero: nu must be > 0");
    if (!(C > 0.0)) throw validation_error("cmp-zero: C must be > 0");
    if (!(alpha > 0.0)) throw validation_error("cmp-zero: alpha must be > 0");
    return StepPolicy(PolicyKind::cmp_zero, lambda, nu, C, alpha);
}

StepPolicy StepPolicy::cmp_tune(double lambda, double nu, double K, double alpha) {
    if (!(lambda > 0.0)) throw validation_error("cmp-tune: lambda must be > 0");
    if (!(nu > 0.0)) throw validation_error("cmp-tune: nu must be > 0");
    if (!(alpha > 0.0)) throw validation_error("cmp-tune: alpha must be > 0");
    return StepPolicy(PolicyKind::cmp_tune, lambda, nu, K, alpha);
}

StepPolicy StepPolicy::poisson_tune(double lambda, double K, double alpha) {
    if (!(lambda > 0.0)) throw validation_error("poisson-tune: lambda must be > 0");
    if (!(alpha > 0.0)) throw validation_error("poisson-tune: alpha must be > 0");
    return StepPolicy(PolicyKind::poisson_tune, lambda, 0.0, K, alpha);
}

StepPolicy StepPolicy::inverse_tau(double alpha) {
    if (!(alpha > 0.0)) throw validation_error("inv-tau: alpha must be > 0");
    return StepPolicy(PolicyKind::inverse_tau, 0, 0, 0, alpha);
}

StepPolicy::StepParts StepPolicy::step_parts(int64_t tau) const {
    if (tau < 0) throw validation_error("step: tau must be >= 0");
    switch (kind_) {
        case PolicyKind::constant:
            return {alpha_, 0.0};
        case PolicyKind::geometric_tuned: {
            // alpha(tau) = C^-tau p^-1 alpha with C = (1-p)/mu_target
            if (b_ == 0.0) return {tau == 0 ? alpha_ / a_ : 0.0, 0.0};
            double log_ratio = std::log(b_) - std::log1p(-a_);  // ln(mu*/(1-p))
            return {alpha_ / a_, static_cast<double>(tau) * log_ratio};
        }
        case PolicyKind::cmp_zero:
            return {c_ * alpha_, b_ * specialfn::log_factorial(tau) -
                                     static_cast<double>(tau) * std::log(a_)};
        case PolicyKind::cmp_tune: {
            double factor = 1.0 - (c_ / alpha_) * cmp_partial_sum(tau, a_, b_);
            return {factor * alpha_, b_ * specialfn::log_factorial(tau) -
                                         static_cast<double>(tau) * std::log(a_)};
        }
        case PolicyKind::poisson_tune: {
            double factor = 1.0 - (c_ / alpha_) * specialfn::regularized_upper_gamma(tau, a_);
            return {factor * alpha_, specialfn::log_factorial(tau) -
                                         static_cast<double>(tau) * std::log(a_)};
        }
        case PolicyKind::inverse_tau:
            return {alpha_ / static_cast<double>(std::max<int64_t>(tau, 1)), 0.0};
    }
    return {0.0, 0.0};
}

double StepPolicy::formula_step(int64_t tau) const {
    StepParts p = step_parts(tau);
    return p.factor * safe_exp(p.log_scale);
}

double StepPolicy::step(int64_t tau) const {
    double v = formula_step(tau);
    return v > 0.0 ? v : 0.0;
}

std::vector<std::pair<std::string, double>> StepPolicy::params() const {
    switch (kind_) {
        case PolicyKind::constant: return {{"alpha", alpha_}};
        case PolicyKind::geometric_tuned:
            return {{"p", a_}, {"mu_target", b_}, {"C", c_}, {"alpha", alpha_}};
        case PolicyKind::cmp_zero:
            return {{"lambda", a_}, {"nu", b_}, {"C", c_}, {"alpha", alpha_}};
        case PolicyKind::cmp_tune:
            return {{"lambda", a_}, {"nu", b_}, {"K", c_}, {"alpha", alpha_}};
        case PolicyKind::poisson_tune:
            return {{"lambda", a_}, {"K", c_}, {"alpha", alpha_}};
        case PolicyKind::inverse_tau: return {{"alpha", alpha_}};
    }
    return {};
}

std::string StepPolicy::describe() const {
    std::ostringstream os;
    os << policy_kind_name(kind_) << "(";
    bool first = true;
    for (const auto& [k, v] : params()) {
        if (!first) os << ", ";
        os << k << "=" << v;
        first = false;
    }
    os << ")";
    return os.str();
}

double derive_C_for_momentum(double p, double mu_target) {
    if (!(p > 0.0 && p < 1.0)) throw validation_error("derive_C: p must be in (0, 1)");
    if (!(mu_target > 0.0 && mu_target < 2.0))
        throw validation_error("derive_C: mu_target must be in (0, 2)");
    return (1.0 - p) / mu_target;
}

PolicyWrapper normalize(const PolicyWrapper& w, const StalenessHistogram& hist, double alpha_c) {
    if (hist.empty()) throw validation_error("normalize: empty histogram");
    if (!(alpha_c > 0.0)) throw validation_error("normalize: alpha_c must be > 0");
    double mean = 0.0;
    for (const auto& [tau, count] : hist.counts) {
        double freq = static_cast<double>(count) / static_cast<double>(hist.total);
        mean += freq * w.step(tau);
    }
    if (!(mean > 0.0))
        throw numeric_error("normalize: histogram-weighted mean step is zero (all skipped)");
    PolicyWrapper out = w;
    out.scale = w.scale.value_or(1.0) * (alpha_c / mean);
    return out;
}

PolicyWrapper normalize(const StepPolicy& p, const StalenessHistogram& hist, double alpha_c) {
    return normalize(PolicyWrapper(p), hist, alpha_c);
}

PolicyWrapper clip_and_cutoff(PolicyWrapper w, double alpha_c, double cap_mult,
                              int64_t tau_max) {
    if (!(cap_mult > 0.0)) throw validation_error("clip_and_cutoff: cap_mult must be > 0");
    if (tau_max < 0) throw validation_error("clip_and_cutoff: tau_max must be >= 0");
    w.clip_cap = cap_mult * alpha_c;
    w.cutoff = tau_max;
    return w;
}

}  // namespace stalesgd
