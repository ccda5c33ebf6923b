#include "stalesgd/distributions.hpp"

#include "stalesgd/errors.hpp"
#include "stalesgd/specialfn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace stalesgd {

namespace {

constexpr double kTailTol = 1e-12;
constexpr int64_t kMaxSupport = 10000;

int64_t floor_with_guard(double x) {
    // pow() can land a hair under an exact integer; snap before flooring
    double r = std::round(x);
    if (std::abs(x - r) < 1e-9 * std::max(1.0, std::abs(x))) return static_cast<int64_t>(r);
    return static_cast<int64_t>(std::floor(x));
}

}  // namespace

std::string family_name(Family f) {
    switch (f) {
        case Family::geometric: return "geometric";
        case Family::uniform: return "uniform";
        case Family::poisson: return "poisson";
        case Family::cmp: return "cmp";
    }
    return "?";
}

Family family_from_name(const std::string& name) {
    if (name == "geometric" || name == "geom") return Family::geometric;
    if (name == "uniform" || name == "unif") return Family::uniform;
    if (name == "poisson" || name == "pois") return Family::poisson;
    if (name == "cmp") return Family::cmp;
    throw validation_error("unknown distribution family: " + name);
}

StalenessModel::StalenessModel(Family f, double a, double b) : family_(f), a_(a), b_(b) {
    if (f == Family::cmp) {
        cmp_log_z_ = specialfn::cmp_normalizer(a_, b_).log_value;
    }
    // truncation index: accumulate mass until the tail is negligible
    if (f == Family::uniform) {
        truncation_ = static_cast<int64_t>(a_);
    } else if (f == Family::geometric && a_ >= 1.0) {
        truncation_ = 0;
    } else {
        double cum = 0.0;
        int64_t i = 0;
        for (; i < kMaxSupport; ++i) {
            cum += pmf(i);
            if (cum >= 1.0 - kTailTol) break;
        }
        truncation_ = std::min(i, kMaxSupport - 1);
    }
    if (f == Family::cmp) {
        cmp_cdf_.resize(static_cast<size_t>(truncation_) + 1);
        double cum = 0.0;
        for (int64_t i = 0; i <= truncation_; ++i) {
            cum += pmf(i);
            cmp_cdf_[static_cast<size_t>(i)] = cum;
        }
    }
}

StalenessModel StalenessModel::geometric(double p) {
    if (!(p > 0.0) || p > 1.0) throw validation_error("geometric: p must be in (0, 1]");
    return StalenessModel(Family::geometric, p, 0.0);
}

StalenessModel StalenessModel::uniform(int64_t tau_hat) {
    if (tau_hat < 0) throw validation_error("uniform: tau_hat must be >= 0");
    return StalenessModel(Family::uniform, static_cast<double>(tau_hat), 0.0);
}

StalenessModel StalenessModel::poisson(double lambda) {
    if (!(lambda > 0.0)) throw validation_error("poisson: lambda must be > 0");
    return StalenessModel(Family::poisson, lambda, 0.0);
}

StalenessModel StalenessModel::cmp(double lambda, double nu) {
    if (!(lambda > 0.0)) throw validation_error("cmp: lambda must be > 0");
    if (!(nu > 0.0)) throw validation_error("cmp: nu must be > 0");
    return StalenessModel(Family::cmp, lambda, nu);
}

double StalenessModel::log_pmf(int64_t i) const {
    if (i < 0) throw validation_error("pmf: i must be >= 0");
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    switch (family_) {
        case Family::geometric:
            if (a_ >= 1.0) return i == 0 ? 0.0 : kNegInf;
            return std::log(a_) + static_cast<double>(i) * std::log1p(-a_);
        case Family::uniform:
            return i <= static_cast<int64_t>(a_) ? -std::log(a_ + 1.0) : kNegInf;
        case Family::poisson:
            return static_cast<double>(i) * std::log(a_) - a_ - specialfn::log_factorial(i);
        case Family::cmp:
            return static_cast<double>(i) * std::log(a_) - b_ * specialfn::log_factorial(i) -
                   cmp_log_z_;
    }
    return kNegInf;
}

double StalenessModel::pmf(int64_t i) const {
    if (i < 0) throw validation_error("pmf: i must be >= 0");
    if (family_ == Family::uniform)
        return i <= static_cast<int64_t>(a_) ? 1.0 / (a_ + 1.0) : 0.0;
    return std::exp(log_pmf(i));
}

int64_t StalenessModel::mode() const {
    switch (family_) {
        case Family::geometric: return 0;
        case Family::uniform: return 0;  // all-tied support, smallest wins
        case Family::poisson: return floor_with_guard(a_);
        case Family::cmp: return floor_with_guard(std::pow(a_, 1.0 / b_));
    }
    return 0;
}

double StalenessModel::mean() const {
    switch (family_) {
        case Family::geometric: return (1.0 - a_) / a_;
        case Family::uniform: return a_ / 2.0;
        case Family::poisson: return a_;
        case Family::cmp: {
            double m = 0.0;
            for (int64_t i = 1; i <= truncation_; ++i) m += static_cast<double>(i) * pmf(i);
            return m;
        }
    }
    return 0.0;
}

int64_t StalenessModel::sample(Rng& rng) const {
    switch (family_) {
        case Family::geometric: {
            if (a_ >= 1.0) return 0;
            double u = rng.next_double_open();
            return static_cast<int64_t>(std::floor(std::log(u) / std::log1p(-a_)));
        }
        case Family::uniform:
            return static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(a_) + 1));
        case Family::poisson: {
            // Knuth: multiply uniforms until the product drops below e^-lambda
            double limit = std::exp(-a_);
            double prod = rng.next_double_open();
            int64_t k = 0;
            while (prod > limit) {
                prod *= rng.next_double_open();
                ++k;
            }
            return k;
        }
        case Family::cmp: {
            double u = rng.next_double();
            auto it = std::lower_bound(cmp_cdf_.begin(), cmp_cdf_.end(), u);
            if (it == cmp_cdf_.end()) return truncation_;
            return static_cast<int64_t>(it - cmp_cdf_.begin());
        }
    }
    return 0;
}

std::vector<std::pair<std::string, double>> StalenessModel::params() const {
    switch (family_) {
        case Family::geometric: return {{"p", a_}};
        case Family::uniform: return {{"tau_hat", a_}};
        case Family::poisson: return {{"lambda", a_}};
        case Family::cmp: return {{"lambda", a_}, {"nu", b_}};
    }
    return {};
}

std::string StalenessModel::describe() const {
    std::ostringstream os;
    os << family_name(family_) << "(";
    bool first = true;
    for (const auto& [k, v] : params()) {
        if (!first) os << ", ";
        os << k << "=" << v;
        first = false;
    }
    os << ")";
    return os.str();
}

void StalenessHistogram::add(int64_t tau, int64_t count) {
    if (tau < 0) throw validation_error("histogram: tau must be >= 0");
    if (count < 0) throw validation_error("histogram: count must be >= 0");
    counts[tau] += count;
    total += count;
}

double StalenessHistogram::frequency(int64_t tau) const {
    auto it = counts.find(tau);
    if (it == counts.end()) return 0.0;
    return static_cast<double>(it->second) / static_cast<double>(total);
}

int64_t StalenessHistogram::max_tau() const {
    if (counts.empty()) return 0;
    return counts.rbegin()->first;
}

StalenessHistogram histogram_from_samples(const StalenessModel& model, int64_t n, Rng& rng) {
    StalenessHistogram h;
    for (int64_t i = 0; i < n; ++i) h.add(model.sample(rng));
    return h;
}

StalenessHistogram load_histogram_csv(std::istream& in) {
    StalenessHistogram h;
    std::string line;
    if (!std::getline(in, line)) throw validation_error("histogram csv: empty file");
    if (line != "tau,count" && line != "tau,count\r")
        throw validation_error("histogram csv: expected header 'tau,count', got '" + line + "'");
    int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::istringstream ls(line);
        int64_t tau = 0, count = 0;
        char comma = 0;
        if (!(ls >> tau >> comma >> count) || comma != ',')
            throw validation_error("histogram csv: parse error at line " +
                                   std::to_string(line_no));
        h.add(tau, count);
    }
    if (h.empty()) throw validation_error("histogram csv: no counts");
    return h;
}

void save_histogram_csv(const StalenessHistogram& hist, std::ostream& out) {
    out << "tau,count\n";
    for (const auto& [tau, count] : hist.counts) out << tau << "," << count << "\n";
}

double bhattacharyya(const StalenessHistogram& hist, const StalenessModel& model) {
    if (hist.empty()) throw validation_error("bhattacharyya: empty histogram");
    int64_t hi = std::max(hist.max_tau(), model.truncation_index());
    double coeff = 0.0;
    for (const auto& [tau, count] : hist.counts) {
        if (tau > hi) continue;
        double q = static_cast<double>(count) / static_cast<double>(hist.total);
        coeff += std::sqrt(q * model.pmf(tau));
    }
    if (coeff <= 0.0) return std::numeric_limits<double>::infinity();
    double d = -std::log(coeff);
    return d < 0.0 ? 0.0 : d;
}

FitReport fit(const StalenessHistogram& hist, Family family, int64_t workers) {
    if (hist.empty()) throw validation_error("fit: empty histogram");

    auto scan = [&](GridSpec grid, auto make_model) -> FitReport {
        double best = std::numeric_limits<double>::infinity();
        double best_param = grid.lo;
        int64_t n = grid.points;
        for (int64_t k = 0; k < n; ++k) {
            double v = grid.lo + static_cast<double>(k) * grid.step;
            double d = bhattacharyya(hist, make_model(v));
            if (d < best) {
                best = d;
                best_param = v;
            }
        }
        return FitReport{make_model(best_param), best, grid};
    };

    switch (family) {
        case Family::geometric: {
            GridSpec g{"p", 0.001, 0.999, 0.001, 999};
            return scan(g, [](double p) { return StalenessModel::geometric(p); });
        }
        case Family::uniform: {
            int64_t hi = hist.max_tau() + 5;
            GridSpec g{"tau_hat", 0.0, static_cast<double>(hi), 1.0, hi + 1};
            return scan(g, [](double t) {
                return StalenessModel::uniform(static_cast<int64_t>(std::llround(t)));
            });
        }
        case Family::poisson: {
            double hi = 2.0 * static_cast<double>(std::max<int64_t>(hist.max_tau(), 1));
            int64_t pts = static_cast<int64_t>(std::floor((hi - 0.1) / 0.1 + 1e-9)) + 1;
            GridSpec g{"lambda", 0.1, hi, 0.1, pts};
            return scan(g, [](double l) { return StalenessModel::poisson(l); });
        }
        case Family::cmp: {
            if (workers < 1)
                throw validation_error("fit: CMP family requires workers >= 1 (lambda = m^nu)");
            GridSpec g{"nu", 0.05, 10.0, 0.01, 996};
            double m = static_cast<double>(workers);
            return scan(g, [m](double nu) {
                return StalenessModel::cmp(std::pow(m, nu), nu);
            });
        }
    }
    throw validation_error("fit: unknown family");
}

}  // namespace stalesgd
