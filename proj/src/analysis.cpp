#include "stalesgd/analysis.hpp"

#include "stalesgd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace stalesgd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b)); }

DriftTheorem classify(const StalenessModel& model, const StepPolicy& policy) {
    switch (policy.kind()) {
        case PolicyKind::cmp_zero:
            if (model.family() == Family::cmp && close(model.lambda(), policy.lambda()) &&
                close(model.nu(), policy.nu()))
                return DriftTheorem::cmp_flat;
            break;
        case PolicyKind::cmp_tune:
            if (model.family() == Family::cmp && close(model.lambda(), policy.lambda()) &&
                close(model.nu(), policy.nu()))
                return DriftTheorem::cmp_momentum;
            break;
        case PolicyKind::poisson_tune:
            if (model.family() == Family::poisson && close(model.lambda(), policy.lambda()))
                return DriftTheorem::poisson_momentum;
            break;
        case PolicyKind::constant:
        case PolicyKind::geometric_tuned:
            if (model.family() == Family::geometric) return DriftTheorem::geometric_momentum;
            break;
        default: break;
    }
    return DriftTheorem::none;
}

}  // namespace

std::string drift_theorem_name(DriftTheorem t) {
    switch (t) {
        case DriftTheorem::none: return "no theorem applies";
        case DriftTheorem::cmp_flat: return "cmp-flat";
        case DriftTheorem::cmp_momentum: return "cmp-momentum";
        case DriftTheorem::poisson_momentum: return "poisson-momentum";
        case DriftTheorem::geometric_momentum: return "geometric-momentum";
    }
    return "?";
}

DriftReport drift_report(const StalenessModel& model, const StepPolicy& policy, int64_t I) {
    if (I < 1) throw validation_error("drift_report: I must be >= 1");
    DriftReport rep;
    rep.w.resize(static_cast<std::size_t>(I) + 1);
    for (int64_t i = 0; i <= I; ++i) {
        // combined in log space: the pmf and the raw step can under/overflow
        // individually while their product stays moderate
        auto parts = policy.step_parts(i);
        rep.w[static_cast<std::size_t>(i)] =
            parts.factor * std::exp(model.log_pmf(i) + parts.log_scale);
    }
    rep.d.resize(static_cast<std::size_t>(I));
    for (int64_t i = 0; i < I; ++i)
        rep.d[static_cast<std::size_t>(i)] =
            rep.w[static_cast<std::size_t>(i)] - rep.w[static_cast<std::size_t>(i) + 1];
    rep.leading_coeff = rep.w[0];
    rep.theorem = classify(model, policy);

    switch (rep.theorem) {
        case DriftTheorem::cmp_flat: {
            double worst = 0.0;
            for (double wi : rep.w) worst = std::max(worst, std::abs(wi - rep.w[0]));
            rep.residual = worst / std::abs(rep.w[0]);
            break;
        }
        case DriftTheorem::cmp_momentum:
        case DriftTheorem::poisson_momentum: {
            const double K = policy.K();
            const double lam = policy.lambda();
            double worst = 0.0, scale = 0.0;
            for (int64_t i = 0; i < I; ++i) {
                double rhs = K * std::exp(-lam) * model.pmf(i);
                worst = std::max(worst,
                                 std::abs(rep.d[static_cast<std::size_t>(i)] - rhs));
                scale = std::max(scale, std::abs(rhs));
            }
            rep.residual = scale > 0.0 ? worst / scale : worst;
            break;
        }
        case DriftTheorem::geometric_momentum: {
            // geometric staleness makes w geometric; its ratio is the
            // asynchrony-induced momentum coefficient of the expected update
            double ratio = rep.w[0] != 0.0 ? rep.w[1] / rep.w[0] : 0.0;
            double worst = 0.0;
            for (std::size_t i = 0; i + 1 < rep.w.size(); ++i) {
                if (rep.w[i] == 0.0) continue;
                worst = std::max(worst, std::abs(rep.w[i + 1] / rep.w[i] - ratio));
            }
            rep.recovered_momentum = ratio;
            rep.residual = worst;
            if (policy.kind() == PolicyKind::geometric_tuned)
                rep.momentum_target = policy.mu_target();
            break;
        }
        case DriftTheorem::none: break;
    }
    return rep;
}

namespace {

// autocovariance about zero (biased 1/n normalization keeps exact geometric
// series exactly geometric)
std::vector<double> raw_autocov(std::span<const double> x, int max_lag) {
    const std::size_t n = x.size();
    std::vector<double> gam(static_cast<std::size_t>(max_lag) + 1, 0.0);
    for (int k = 0; k <= max_lag; ++k) {
        double s = 0.0;
        for (std::size_t t = 0; t + static_cast<std::size_t>(k) < n; ++t)
            s += x[t] * x[t + static_cast<std::size_t>(k)];
        gam[static_cast<std::size_t>(k)] = s / static_cast<double>(n);
    }
    return gam;
}

struct CoordFit {
    double mu;
    std::string method;
};

// order selection between a one-pole and a two-pole autocovariance recursion;
// the two-pole constant coefficient is the implicit momentum (pole product)
CoordFit fit_from_autocov(const std::vector<double>& gam, const MomentumOptions& opts) {
    const int K = opts.max_lag;
    if (gam[0] <= 0.0) return {0.0, "degenerate"};
    const double lag1 = gam[1] / gam[0];

    // order-1: gamma_j = a * gamma_{j-1}, j = 2..K
    double sxx = 0.0, sxy = 0.0;
    for (int j = 2; j <= K; ++j) {
        sxx += gam[static_cast<std::size_t>(j) - 1] * gam[static_cast<std::size_t>(j) - 1];
        sxy += gam[static_cast<std::size_t>(j) - 1] * gam[static_cast<std::size_t>(j)];
    }
    double r1 = 0.0, bn = 0.0;
    double a1 = sxx > 0.0 ? sxy / sxx : 0.0;
    for (int j = 2; j <= K; ++j) {
        double e = gam[static_cast<std::size_t>(j)] - a1 * gam[static_cast<std::size_t>(j) - 1];
        r1 += e * e;
        bn += gam[static_cast<std::size_t>(j)] * gam[static_cast<std::size_t>(j)];
    }
    r1 = std::sqrt(r1);
    bn = std::sqrt(bn);
    if (r1 <= 1e-12 * std::max(bn, 1e-300)) return {lag1, "lag1-exact"};

    // order-2: gamma_j = phi1 gamma_{j-1} + phi2 gamma_{j-2}, j = yw_lo..K
    double a11 = 0.0, a12 = 0.0, a22 = 0.0, b1 = 0.0, b2 = 0.0;
    int rows = 0;
    for (int j = opts.yw_lo; j <= K; ++j) {
        double u = gam[static_cast<std::size_t>(j) - 1];
        double v = gam[static_cast<std::size_t>(j) - 2];
        double y = gam[static_cast<std::size_t>(j)];
        a11 += u * u;
        a12 += u * v;
        a22 += v * v;
        b1 += u * y;
        b2 += v * y;
        ++rows;
    }
    double det = a11 * a22 - a12 * a12;
    if (!(std::abs(det) > 1e-300 * std::max(a11, a22))) return {lag1, "lag1"};
    double phi1 = (b1 * a22 - b2 * a12) / det;
    double phi2 = (a11 * b2 - a12 * b1) / det;
    double r2 = 0.0;
    for (int j = opts.yw_lo; j <= K; ++j) {
        double e = gam[static_cast<std::size_t>(j)] -
                   phi1 * gam[static_cast<std::size_t>(j) - 1] -
                   phi2 * gam[static_cast<std::size_t>(j) - 2];
        r2 += e * e;
    }
    r2 = std::sqrt(r2);
    int dof = std::max(rows - 2, 1);
    double s2 = (r2 * r2) / dof;
    double se_phi2 = std::sqrt(s2 * a11 / det);
    bool significant = std::abs(phi2) > opts.se_mult * se_phi2;
    if (r2 < opts.select_ratio * r1 && significant && std::abs(phi2) < 1.2)
        return {-phi2, "yw2"};
    return {lag1, "lag1"};
}

}  // namespace

MomentumEstimate estimate_momentum_from_series(std::span<const double> increments,
                                               const MomentumOptions& opts) {
    std::size_t lo = static_cast<std::size_t>(opts.warmup_frac *
                                              static_cast<double>(increments.size()));
    if (increments.size() - lo < 1000)
        throw validation_error("momentum estimate: fewer than 1,000 usable increments");
    auto gam = raw_autocov(increments.subspan(lo), opts.max_lag);
    CoordFit f = fit_from_autocov(gam, opts);
    MomentumEstimate est;
    est.mu_hat = f.mu;
    est.std_error = kNaN;
    est.method = f.method;
    est.per_coordinate = {f.mu};
    return est;
}

MomentumEstimate estimate_implicit_momentum(std::span<const RunTrace> traces,
                                            const MomentumOptions& opts) {
    if (traces.empty()) throw validation_error("momentum estimate: no traces");
    const std::size_t d = traces[0].dim;
    const int K = opts.max_lag;
    std::vector<std::vector<std::vector<double>>> per_trace_gam;  // [trace][coord][lag]
    for (const auto& tr : traces) {
        if (tr.dim != d) throw validation_error("momentum estimate: trace dims differ");
        if (tr.increments.size() != tr.records.size() * d)
            throw validation_error(
                "momentum estimate: trace has no recorded increments (rerun with increments "
                "enabled)");
        const std::size_t T = tr.records.size();
        std::size_t lo = static_cast<std::size_t>(opts.warmup_frac * static_cast<double>(T));
        if (T - lo < 1000)
            throw validation_error("momentum estimate: fewer than 1,000 usable increments");
        std::vector<std::vector<double>> coords(d);
        std::vector<double> series(T - lo);
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t t = lo; t < T; ++t) series[t - lo] = tr.increments[t * d + c];
            coords[c] = raw_autocov(series, K);
        }
        per_trace_gam.push_back(std::move(coords));
    }
    const std::size_t S = per_trace_gam.size();

    auto pooled_estimate = [&](std::size_t skip_trace) {
        std::vector<double> per_coord(d);
        for (std::size_t c = 0; c < d; ++c) {
            std::vector<double> gam(static_cast<std::size_t>(K) + 1, 0.0);
            std::size_t used = 0;
            for (std::size_t s = 0; s < S; ++s) {
                if (s == skip_trace) continue;
                for (int k = 0; k <= K; ++k)
                    gam[static_cast<std::size_t>(k)] += per_trace_gam[s][c][static_cast<std::size_t>(k)];
                ++used;
            }
            for (auto& g : gam) g /= static_cast<double>(used);
            per_coord[c] = fit_from_autocov(gam, opts).mu;
        }
        return per_coord;
    };

    std::vector<double> per_coord = pooled_estimate(S);  // skip none
    double mu = std::accumulate(per_coord.begin(), per_coord.end(), 0.0) /
                static_cast<double>(d);

    // jackknife over traces for a standard error
    double se = kNaN;
    if (S >= 2) {
        std::vector<double> jk(S);
        for (std::size_t s = 0; s < S; ++s) {
            auto pc = pooled_estimate(s);
            jk[s] = std::accumulate(pc.begin(), pc.end(), 0.0) / static_cast<double>(d);
        }
        double mean = std::accumulate(jk.begin(), jk.end(), 0.0) / static_cast<double>(S);
        double ss = 0.0;
        for (double v : jk) ss += (v - mean) * (v - mean);
        se = std::sqrt(ss * static_cast<double>(S - 1) / static_cast<double>(S));
    }

    MomentumEstimate est;
    est.mu_hat = mu;
    est.std_error = se;
    {
        std::vector<double> gam0;
        std::string method;
        for (std::size_t c = 0; c < d; ++c) {
            std::vector<double> gam(static_cast<std::size_t>(K) + 1, 0.0);
            for (std::size_t s = 0; s < S; ++s)
                for (int k = 0; k <= K; ++k)
                    gam[static_cast<std::size_t>(k)] += per_trace_gam[s][c][static_cast<std::size_t>(k)];
            for (auto& g : gam) g /= static_cast<double>(S);
            auto f = fit_from_autocov(gam, opts);
            if (!method.empty() && method != f.method) method = "mixed";
            else if (method.empty()) method = f.method;
        }
        est.method = method;
    }
    est.per_coordinate = std::move(per_coord);
    return est;
}

MomentumEstimate estimate_implicit_momentum(const RunTrace& trace,
                                            const MomentumOptions& opts) {
    return estimate_implicit_momentum(std::span<const RunTrace>(&trace, 1), opts);
}

namespace {

BoundsReport make_report(const char* kind, double denom, double eps, double d0_sq,
                         double alpha) {
    BoundsReport rep;
    rep.kind = kind;
    rep.denominator = denom;
    rep.alpha = alpha;
    if (denom > 0.0) {
        rep.feasible = true;
        rep.T = std::log(d0_sq / eps) / denom;
        rep.T_ceil = static_cast<int64_t>(std::ceil(rep.T));
    } else {
        rep.feasible = false;
        rep.T = kNaN;
        rep.T_ceil = -1;
        rep.note = "denominator non-positive: step moments too large for this epsilon";
    }
    return rep;
}

void check_common(const BoundsInput& in) {
    if (!(in.c > 0.0) || !(in.L > 0.0) || !(in.M > 0.0))
        throw validation_error("bounds: c, L, M must be > 0");
    if (!(in.eps > 0.0)) throw validation_error("bounds: eps must be > 0");
    if (!(in.d0_sq > 0.0)) throw validation_error("bounds: ||x0-x*||^2 must be > 0");
    if (in.tau_bar < 0.0) throw validation_error("bounds: tau_bar must be >= 0");
}

}  // namespace

BoundsReport bound_general(const BoundsInput& in) {
    check_common(in);
    if (!in.e_alpha || !in.e_tau_alpha || !in.e_alpha_sq)
        throw validation_error("bound_general: needs E[alpha], E[tau alpha], E[alpha^2]");
    double ea = *in.e_alpha, eta = *in.e_tau_alpha, ea2 = *in.e_alpha_sq;
    double denom = 2.0 * (in.c - in.L * in.M * eta / std::sqrt(in.eps)) * ea -
                   in.M * in.M * ea2 / in.eps;
    BoundsReport rep = make_report("general", denom, in.eps, in.d0_sq, kNaN);
    rep.e_alpha = ea;
    rep.e_alpha_sq = ea2;
    rep.e_tau_alpha = eta;
    return rep;
}

std::pair<double, BoundsReport> alpha_choice_and_bound(const BoundsInput& in) {
    check_common(in);
    if (!(in.theta > 0.0 && in.theta < 2.0))
        throw validation_error("alpha_choice: theta must be in (0, 2)");
    double D = in.M + 2.0 * in.L * std::sqrt(in.eps) * in.tau_bar;
    double alpha = in.theta * in.c * in.eps / (in.M * D);
    BoundsReport rep;
    rep.kind = "constant-alpha";
    rep.feasible = true;
    rep.alpha = alpha;
    rep.T = D * in.M * std::log(in.d0_sq / in.eps) /
            (in.theta * (2.0 - in.theta) * in.c * in.c * in.eps);
    rep.T_ceil = static_cast<int64_t>(std::ceil(rep.T));
    rep.denominator = in.theta * (2.0 - in.theta) * in.c * in.c * in.eps / (D * in.M);
    rep.e_alpha = alpha;
    rep.e_alpha_sq = alpha * alpha;
    rep.e_tau_alpha = in.tau_bar * alpha;
    return {alpha, rep};
}

PolicyMoments policy_moments(const StalenessModel& model, const PolicyWrapper& policy) {
    PolicyMoments m;
    int64_t hi = model.truncation_index();
    for (int64_t i = 0; i <= hi; ++i) {
        double p = model.pmf(i);
        double a = policy.step(i);
        m.e_alpha += p * a;
        m.e_alpha_sq += p * a * a;
        m.e_tau_alpha += p * static_cast<double>(i) * a;
    }
    return m;
}

BoundsReport bound_decaying(const StalenessModel& model, const PolicyWrapper& policy,
                            const BoundsInput& in) {
    check_common(in);
    int64_t hi = model.truncation_index();
    double prev = policy.step(0);
    for (int64_t i = 1; i <= hi; ++i) {
        double cur = policy.step(i);
        if (cur > prev * (1.0 + 1e-12) + 1e-300)
            throw validation_error("bound_decaying: step size increases at tau=" +
                                   std::to_string(i) + " (requires non-increasing alpha)");
        prev = cur;
    }
    PolicyMoments m = policy_moments(model, policy);
    double denom = 2.0 * in.c * m.e_alpha -
                   in.M * (in.M + 2.0 * in.L * std::sqrt(in.eps) * in.tau_bar) * m.e_alpha_sq /
                       in.eps;
    BoundsReport rep = make_report("decaying-alpha", denom, in.eps, in.d0_sq, kNaN);
    rep.e_alpha = m.e_alpha;
    rep.e_alpha_sq = m.e_alpha_sq;
    rep.e_tau_alpha = m.e_tau_alpha;
    return rep;
}

}  // namespace stalesgd
