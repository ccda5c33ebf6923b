#pragma once

#include "stalesgd/rng.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace stalesgd {

enum class Family { geometric, uniform, poisson, cmp };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Parametric staleness model. Immutable after construction; sampling takes a
// caller-owned Rng so instances can be shared across threads freely.
class StalenessModel {
public:
    static StalenessModel geometric(double p);
    static StalenessModel uniform(int64_t tau_hat);
    static StalenessModel poisson(double lambda);
    static StalenessModel cmp(double lambda, double nu);

    Family family() const { return family_; }
    double pmf(int64_t i) const;
    double log_pmf(int64_t i) const;  // -inf off support
    int64_t mode() const;
    int64_t sample(Rng& rng) const;
    double mean() const;

    // Smallest index whose cumulative mass reaches 1 - 1e-12, capped at 10,000.
    int64_t truncation_index() const { return truncation_; }

    double p() const { return a_; }
    int64_t tau_hat() const { return static_cast<int64_t>(a_); }
    double lambda() const { return a_; }
    double nu() const { return b_; }

    std::vector<std::pair<std::string, double>> params() const;
    std::string describe() const;

private:
    StalenessModel(Family f, double a, double b);

    Family family_;
    double a_ = 0.0;
    double b_ = 0.0;
    double cmp_log_z_ = 0.0;
    int64_t truncation_ = 0;
    std::vector<double> cmp_cdf_;  // inverse-transform table for CMP sampling
};

struct StalenessHistogram {
    std::map<int64_t, int64_t> counts;
    int64_t total = 0;

    void add(int64_t tau, int64_t count = 1);
    double frequency(int64_t tau) const;
    int64_t max_tau() const;
    bool empty() const { return total == 0; }
};

StalenessHistogram histogram_from_samples(const StalenessModel& model, int64_t n, Rng& rng);

// CSV with header "tau,count", rows sorted by tau.
StalenessHistogram load_histogram_csv(std::istream& in);
void save_histogram_csv(const StalenessHistogram& hist, std::ostream& out);

// -ln sum_i sqrt(q_i p_i) over the union of supports. Returns +inf when the
// supports do not overlap (flagged by the caller via isinf()).
double bhattacharyya(const StalenessHistogram& hist, const StalenessModel& model);

struct GridSpec {
    std::string parameter;
    double lo = 0.0;
    double hi = 0.0;
    double step = 0.0;
    int64_t points = 0;
};

struct FitReport {
    StalenessModel model;
    double distance = 0.0;
    GridSpec grid;
};

// Exhaustive grid search minimizing the Bhattacharyya distance. Ties go to
// the first grid point scanned. `workers` is only used by the CMP family,
// where lambda is pinned to workers^nu and only nu is searched.
FitReport fit(const StalenessHistogram& hist, Family family, int64_t workers = 0);

}  // namespace stalesgd
