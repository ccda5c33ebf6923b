#pragma once

#include "stalesgd/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stalesgd {

struct ProblemConstants {
    double c = 0.0;  // strong convexity
    double L = 0.0;  // gradient Lipschitz
    double M = 0.0;  // second-moment bound sqrt(E||grad F||^2) over the ball
    double radius = 0.0;
};

// f(x) = 1/2 (x - x*)^T A (x - x*), stochastic gradient A(x - x*) + sigma * xi.
class QuadraticProblem {
public:
    // A = diag(spectrum)
    static QuadraticProblem diagonal(std::vector<double> spectrum, std::vector<double> x_star,
                                     double sigma);
    // A = Q diag(spectrum) Q^T with a seeded random rotation Q
    static QuadraticProblem rotated(std::vector<double> spectrum, std::vector<double> x_star,
                                    double sigma, uint64_t seed);

    std::size_t dim() const { return spectrum_.size(); }
    double sigma() const { return sigma_; }
    std::span<const double> x_star() const { return x_star_; }
    std::span<const double> spectrum() const { return spectrum_; }

    double loss(std::span<const double> x) const;
    void full_grad(std::span<const double> x, std::span<double> out) const;
    void grad(std::span<const double> x, Rng& rng, std::span<double> out) const;
    // c = min spectrum, L = max spectrum, M = sqrt(L^2 R^2 + d sigma^2)
    ProblemConstants constants(double radius) const;

private:
    std::vector<double> spectrum_;
    std::vector<double> A_;  // dense row-major; empty when diagonal
    std::vector<double> x_star_;
    double sigma_ = 0.0;
};

// f(x) = 1/n sum_i (a_i^T x - b_i)^2 with uniform mini-batches drawn without
// replacement inside a batch.
class FiniteSumProblem {
public:
    static FiniteSumProblem synthetic(int64_t n, std::size_t d, double noise, uint64_t seed,
                                      int64_t batch_size);

    std::size_t dim() const { return d_; }
    int64_t size() const { return n_; }
    int64_t batch_size() const { return batch_; }
    std::span<const double> x_star() const { return x_star_; }

    double loss(std::span<const double> x) const;
    void full_grad(std::span<const double> x, std::span<double> out) const;
    void grad_at_batch(std::span<const double> x, std::span<const int64_t> batch,
                       std::span<double> out) const;
    // draws `count` distinct indices uniformly (Floyd's subset sampling)
    void sample_batch(Rng& rng, int64_t count, std::vector<int64_t>& out) const;
    void grad(std::span<const double> x, Rng& rng, std::span<double> out) const;

private:
    int64_t n_ = 0;
    std::size_t d_ = 0;
    int64_t batch_ = 1;
    std::vector<double> features_;  // n x d row-major
    std::vector<double> targets_;
    std::vector<double> x_star_;  // least-squares solution
};

// One-hidden-layer classifier: tanh hidden, softmax output, cross-entropy
// loss, trained on seeded 2-D Gaussian blobs.
class MlpProblem {
public:
    static MlpProblem blobs(std::size_t hidden, int64_t n_points, uint64_t seed,
                            int64_t batch_size);

    std::size_t dim() const;
    std::size_t input_dim() const { return in_; }
    std::size_t hidden_dim() const { return hidden_; }
    std::size_t output_dim() const { return out_; }
    int64_t size() const { return n_; }
    int64_t batch_size() const { return batch_; }

    double loss(std::span<const double> x) const;
    void grad(std::span<const double> x, Rng& rng, std::span<double> out) const;
    void grad_at_batch(std::span<const double> x, std::span<const int64_t> batch,
                       std::span<double> out) const;
    void sample_batch(Rng& rng, int64_t count, std::vector<int64_t>& out) const;
    // class probabilities for one sample (used by tests)
    std::vector<double> forward(std::span<const double> x, int64_t sample) const;
    void default_init(Rng& rng, std::span<double> x0) const;

private:
    std::size_t in_ = 2, hidden_ = 0, out_ = 3;
    int64_t n_ = 0;
    int64_t batch_ = 1;
    std::vector<double> points_;  // n x 2
    std::vector<int64_t> labels_;

    double sample_loss_grad(std::span<const double> x, int64_t sample, double* grad) const;
};

using Problem = std::variant<QuadraticProblem, FiniteSumProblem, MlpProblem>;

std::size_t problem_dim(const Problem& p);
double problem_loss(const Problem& p, std::span<const double> x);
void problem_grad(const Problem& p, std::span<const double> x, Rng& rng, std::span<double> out);
// x* when known (quadratic and finite-sum)
std::optional<std::vector<double>> problem_x_star(const Problem& p);
int64_t problem_dataset_size(const Problem& p);  // 0 when not finite-sum structured
int64_t problem_batch_size(const Problem& p);    // 0 when not mini-batch structured

}  // namespace stalesgd
