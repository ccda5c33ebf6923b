#include "stalesgd/problems.hpp"

#include "stalesgd/errors.hpp"
#include "stalesgd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace stalesgd {

namespace {

void check_dim(std::size_t want, std::size_t got, const char* who) {
    if (want != got)
        throw validation_error(std::string(who) + ": dimension mismatch (expected " +
                               std::to_string(want) + ", got " + std::to_string(got) + ")");
}

// dense symmetric A = Q diag(s) Q^T from a seeded random rotation
std::vector<double> rotated_matrix(const std::vector<double>& spectrum, uint64_t seed) {
    const std::size_t d = spectrum.size();
    Rng rng(seed);
    // random Gaussian matrix -> Gram-Schmidt
    std::vector<double> Q(d * d);
    for (auto& v : Q) v = rng.next_normal();
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t k = 0; k < c; ++k) {
            double dot = 0.0;
            for (std::size_t r = 0; r < d; ++r) dot += Q[r * d + c] * Q[r * d + k];
            for (std::size_t r = 0; r < d; ++r) Q[r * d + c] -= dot * Q[r * d + k];
        }
        double nrm = 0.0;
        for (std::size_t r = 0; r < d; ++r) nrm += Q[r * d + c] * Q[r * d + c];
        nrm = std::sqrt(nrm);
        for (std::size_t r = 0; r < d; ++r) Q[r * d + c] /= nrm;
    }
    std::vector<double> A(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += Q[i * d + k] * spectrum[k] * Q[j * d + k];
            A[i * d + j] = s;
        }
    return A;
}

}  // namespace

QuadraticProblem QuadraticProblem::diagonal(std::vector<double> spectrum,
                                            std::vector<double> x_star, double sigma) {
    if (spectrum.empty()) throw validation_error("quadratic: empty spectrum");
    for (double s : spectrum)
        if (!(s > 0.0)) throw validation_error("quadratic: spectrum must be positive");
    if (x_star.size() != spectrum.size())
        throw validation_error("quadratic: x_star dimension mismatch");
    if (sigma < 0.0) throw validation_error("quadratic: sigma must be >= 0");
    QuadraticProblem q;
    q.spectrum_ = std::move(spectrum);
    q.x_star_ = std::move(x_star);
    q.sigma_ = sigma;
    return q;
}

QuadraticProblem QuadraticProblem::rotated(std::vector<double> spectrum,
                                           std::vector<double> x_star, double sigma,
                                           uint64_t seed) {
    QuadraticProblem q = diagonal(std::move(spectrum), std::move(x_star), sigma);
    q.A_ = rotated_matrix(q.spectrum_, seed);
    return q;
}

double QuadraticProblem::loss(std::span<const double> x) const {
    check_dim(dim(), x.size(), "quadratic loss");
    const std::size_t d = dim();
    std::vector<double> delta(d), g(d);
    for (std::size_t i = 0; i < d; ++i) delta[i] = x[i] - x_star_[i];
    if (A_.empty()) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += spectrum_[i] * delta[i] * delta[i];
        return 0.5 * s;
    }
    kernels::matvec(A_, delta, g, d, d);
    return 0.5 * kernels::dot(delta, g);
}

void QuadraticProblem::full_grad(std::span<const double> x, std::span<double> out) const {
    check_dim(dim(), x.size(), "quadratic grad");
    check_dim(dim(), out.size(), "quadratic grad out");
    const std::size_t d = dim();
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < d; ++i) delta[i] = x[i] - x_star_[i];
    if (A_.empty()) {
        for (std::size_t i = 0; i < d; ++i) out[i] = spectrum_[i] * delta[i];
    } else {
        kernels::matvec(A_, delta, out, d, d);
    }
}

void QuadraticProblem::grad(std::span<const double> x, Rng& rng, std::span<double> out) const {
    full_grad(x, out);
    if (sigma_ > 0.0)
        for (std::size_t i = 0; i < dim(); ++i) out[i] += sigma_ * rng.next_normal();
}

ProblemConstants QuadraticProblem::constants(double radius) const {
    if (!(radius > 0.0)) throw validation_error("constants: radius must be > 0");
    ProblemConstants k;
    k.c = *std::min_element(spectrum_.begin(), spectrum_.end());
    k.L = *std::max_element(spectrum_.begin(), spectrum_.end());
    k.M = std::sqrt(k.L * k.L * radius * radius +
                    static_cast<double>(dim()) * sigma_ * sigma_);
    k.radius = radius;
    return k;
}

FiniteSumProblem FiniteSumProblem::synthetic(int64_t n, std::size_t d, double noise,
                                             uint64_t seed, int64_t batch_size) {
    if (n < 1) throw validation_error("finite-sum: n must be >= 1");
    if (d < 1) throw validation_error("finite-sum: d must be >= 1");
    if (batch_size < 1 || batch_size > n)
        throw validation_error("finite-sum: batch size must be in [1, n]");
    FiniteSumProblem fs;
    fs.n_ = n;
    fs.d_ = d;
    fs.batch_ = batch_size;
    Rng rng(seed);
    std::vector<double> x_true(d);
    for (auto& v : x_true) v = rng.next_normal();
    fs.features_.resize(static_cast<std::size_t>(n) * d);
    fs.targets_.resize(static_cast<std::size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double* a = fs.features_.data() + static_cast<std::size_t>(i) * d;
        for (std::size_t j = 0; j < d; ++j) a[j] = rng.next_normal();
        fs.targets_[static_cast<std::size_t>(i)] =
            kernels::dot({a, d}, x_true) + noise * rng.next_normal();
    }
    // least-squares optimum from the normal equations (Gaussian elimination;
    // d stays desk-scale here)
    std::vector<double> G(d * d, 0.0), rhs(d, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const double* a = fs.features_.data() + static_cast<std::size_t>(i) * d;
        for (std::size_t r = 0; r < d; ++r) {
            rhs[r] += a[r] * fs.targets_[static_cast<std::size_t>(i)];
            for (std::size_t c = 0; c < d; ++c) G[r * d + c] += a[r] * a[c];
        }
    }
    std::vector<double> M = G, b = rhs;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(M[r * d + col]) > std::abs(M[piv * d + col])) piv = r;
        for (std::size_t c = 0; c < d; ++c) std::swap(M[col * d + c], M[piv * d + c]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < d; ++r) {
            double f = M[r * d + col] / M[col * d + col];
            for (std::size_t c = col; c < d; ++c) M[r * d + c] -= f * M[col * d + c];
            b[r] -= f * b[col];
        }
    }
    fs.x_star_.assign(d, 0.0);
    for (std::size_t r = d; r-- > 0;) {
        double s = b[r];
        for (std::size_t c = r + 1; c < d; ++c) s -= M[r * d + c] * fs.x_star_[c];
        fs.x_star_[r] = s / M[r * d + r];
    }
    return fs;
}

double FiniteSumProblem::loss(std::span<const double> x) const {
    check_dim(d_, x.size(), "finite-sum loss");
    double s = 0.0;
    for (int64_t i = 0; i < n_; ++i) {
        const double* a = features_.data() + static_cast<std::size_t>(i) * d_;
        double r = kernels::dot({a, d_}, x) - targets_[static_cast<std::size_t>(i)];
        s += r * r;
    }
    return s / static_cast<double>(n_);
}

void FiniteSumProblem::full_grad(std::span<const double> x, std::span<double> out) const {
    check_dim(d_, x.size(), "finite-sum grad");
    std::fill(out.begin(), out.end(), 0.0);
    for (int64_t i = 0; i < n_; ++i) {
        const double* a = features_.data() + static_cast<std::size_t>(i) * d_;
        double r = kernels::dot({a, d_}, x) - targets_[static_cast<std::size_t>(i)];
        kernels::axpy(2.0 * r / static_cast<double>(n_), {a, d_}, out);
    }
}

void FiniteSumProblem::grad_at_batch(std::span<const double> x, std::span<const int64_t> batch,
                                     std::span<double> out) const {
    check_dim(d_, x.size(), "finite-sum grad");
    if (batch.empty()) throw validation_error("finite-sum: empty batch");
    std::fill(out.begin(), out.end(), 0.0);
    for (int64_t i : batch) {
        if (i < 0 || i >= n_) throw validation_error("finite-sum: batch index out of range");
        const double* a = features_.data() + static_cast<std::size_t>(i) * d_;
        double r = kernels::dot({a, d_}, x) - targets_[static_cast<std::size_t>(i)];
        kernels::axpy(2.0 * r / static_cast<double>(batch.size()), {a, d_}, out);
    }
}

void FiniteSumProblem::sample_batch(Rng& rng, int64_t count, std::vector<int64_t>& out) const {
    if (count < 1 || count > n_) throw validation_error("finite-sum: bad batch size");
    out.clear();
    // Floyd's algorithm: uniform subset without replacement
    for (int64_t j = n_ - count; j < n_; ++j) {
        int64_t t = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(j) + 1));
        if (std::find(out.begin(), out.end(), t) != out.end())
            out.push_back(j);
        else
            out.push_back(t);
    }
}

void FiniteSumProblem::grad(std::span<const double> x, Rng& rng, std::span<double> out) const {
    std::vector<int64_t> batch;
    sample_batch(rng, batch_, batch);
    grad_at_batch(x, batch, out);
}

MlpProblem MlpProblem::blobs(std::size_t hidden, int64_t n_points, uint64_t seed,
                             int64_t batch_size) {
    if (hidden < 1 || hidden > 64) throw validation_error("mlp: hidden must be in [1, 64]");
    if (n_points < 3) throw validation_error("mlp: need at least 3 points");
    if (batch_size < 1 || batch_size > n_points)
        throw validation_error("mlp: batch size must be in [1, n]");
    MlpProblem m;
    m.hidden_ = hidden;
    m.n_ = n_points;
    m.batch_ = batch_size;
    Rng rng(seed);
    const double centers[3][2] = {{2.5, 0.0}, {-1.25, 2.165}, {-1.25, -2.165}};
    m.points_.resize(static_cast<std::size_t>(n_points) * 2);
    m.labels_.resize(static_cast<std::size_t>(n_points));
    for (int64_t i = 0; i < n_points; ++i) {
        int64_t cls = i % 3;
        m.labels_[static_cast<std::size_t>(i)] = cls;
        m.points_[static_cast<std::size_t>(i) * 2] =
            centers[cls][0] + 0.6 * rng.next_normal();
        m.points_[static_cast<std::size_t>(i) * 2 + 1] =
            centers[cls][1] + 0.6 * rng.next_normal();
    }
    return m;
}

std::size_t MlpProblem::dim() const { return hidden_ * in_ + hidden_ + out_ * hidden_ + out_; }

void MlpProblem::default_init(Rng& rng, std::span<double> x0) const {
    check_dim(dim(), x0.size(), "mlp init");
    double s1 = 1.0 / std::sqrt(static_cast<double>(in_));
    double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
    std::size_t k = 0;
    for (std::size_t i = 0; i < hidden_ * in_; ++i) x0[k++] = s1 * rng.next_normal();
    for (std::size_t i = 0; i < hidden_; ++i) x0[k++] = 0.0;
    for (std::size_t i = 0; i < out_ * hidden_; ++i) x0[k++] = s2 * rng.next_normal();
    for (std::size_t i = 0; i < out_; ++i) x0[k++] = 0.0;
}

double MlpProblem::sample_loss_grad(std::span<const double> x, int64_t sample,
                                    double* grad) const {
    const double* W1 = x.data();
    const double* b1 = W1 + hidden_ * in_;
    const double* W2 = b1 + hidden_;
    const double* b2 = W2 + out_ * hidden_;
    const double* a0 = points_.data() + static_cast<std::size_t>(sample) * 2;
    const int64_t y = labels_[static_cast<std::size_t>(sample)];

    std::vector<double> z1(hidden_), a1(hidden_), z2(out_), prob(out_);
    kernels::matvec({W1, hidden_ * in_}, {a0, in_}, z1, hidden_, in_);
    for (std::size_t i = 0; i < hidden_; ++i) a1[i] = std::tanh(z1[i] + b1[i]);
    kernels::matvec({W2, out_ * hidden_}, a1, z2, out_, hidden_);
    double zmax = -1e300;
    for (std::size_t i = 0; i < out_; ++i) {
        z2[i] += b2[i];
        zmax = std::max(zmax, z2[i]);
    }
    double zsum = 0.0;
    for (std::size_t i = 0; i < out_; ++i) {
        prob[i] = std::exp(z2[i] - zmax);
        zsum += prob[i];
    }
    for (std::size_t i = 0; i < out_; ++i) prob[i] /= zsum;
    double loss = -std::log(std::max(prob[static_cast<std::size_t>(y)], 1e-300));
    if (!grad) return loss;

    double* gW1 = grad;
    double* gb1 = gW1 + hidden_ * in_;
    double* gW2 = gb1 + hidden_;
    double* gb2 = gW2 + out_ * hidden_;
    std::vector<double> dz2(out_), da1(hidden_);
    for (std::size_t i = 0; i < out_; ++i)
        dz2[i] = prob[i] - (static_cast<int64_t>(i) == y ? 1.0 : 0.0);
    for (std::size_t i = 0; i < out_; ++i) {
        kernels::axpy(dz2[i], a1, {gW2 + i * hidden_, hidden_});
        gb2[i] += dz2[i];
    }
    kernels::matvec_t({W2, out_ * hidden_}, dz2, da1, out_, hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) {
        double dz1 = da1[i] * (1.0 - a1[i] * a1[i]);
        gW1[i * in_] += dz1 * a0[0];
        gW1[i * in_ + 1] += dz1 * a0[1];
        gb1[i] += dz1;
    }
    return loss;
}

double MlpProblem::loss(std::span<const double> x) const {
    check_dim(dim(), x.size(), "mlp loss");
    double s = 0.0;
    for (int64_t i = 0; i < n_; ++i) s += sample_loss_grad(x, i, nullptr);
    return s / static_cast<double>(n_);
}

std::vector<double> MlpProblem::forward(std::span<const double> x, int64_t sample) const {
    check_dim(dim(), x.size(), "mlp forward");
    // rerun the forward pass and return probabilities
    const double* W1 = x.data();
    const double* b1 = W1 + hidden_ * in_;
    const double* W2 = b1 + hidden_;
    const double* b2 = W2 + out_ * hidden_;
    const double* a0 = points_.data() + static_cast<std::size_t>(sample) * 2;
    std::vector<double> z1(hidden_), a1(hidden_), z2(out_), prob(out_);
    kernels::matvec({W1, hidden_ * in_}, {a0, in_}, z1, hidden_, in_);
    for (std::size_t i = 0; i < hidden_; ++i) a1[i] = std::tanh(z1[i] + b1[i]);
    kernels::matvec({W2, out_ * hidden_}, a1, z2, out_, hidden_);
    double zmax = -1e300;
    for (std::size_t i = 0; i < out_; ++i) {
        z2[i] += b2[i];
        zmax = std::max(zmax, z2[i]);
    }
    double zsum = 0.0;
    for (std::size_t i = 0; i < out_; ++i) {
        prob[i] = std::exp(z2[i] - zmax);
        zsum += prob[i];
    }
    for (std::size_t i = 0; i < out_; ++i) prob[i] /= zsum;
    return prob;
}

void MlpProblem::grad_at_batch(std::span<const double> x, std::span<const int64_t> batch,
                               std::span<double> out) const {
    check_dim(dim(), x.size(), "mlp grad");
    if (batch.empty()) throw validation_error("mlp: empty batch");
    std::fill(out.begin(), out.end(), 0.0);
    for (int64_t i : batch) {
        if (i < 0 || i >= n_) throw validation_error("mlp: batch index out of range");
        sample_loss_grad(x, i, out.data());
    }
    kernels::scal(1.0 / static_cast<double>(batch.size()), out);
}

void MlpProblem::sample_batch(Rng& rng, int64_t count, std::vector<int64_t>& out) const {
    if (count < 1 || count > n_) throw validation_error("mlp: bad batch size");
    out.clear();
    for (int64_t j = n_ - count; j < n_; ++j) {
        int64_t t = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(j) + 1));
        if (std::find(out.begin(), out.end(), t) != out.end())
            out.push_back(j);
        else
            out.push_back(t);
    }
}

void MlpProblem::grad(std::span<const double> x, Rng& rng, std::span<double> out) const {
    std::vector<int64_t> batch;
    sample_batch(rng, batch_, batch);
    grad_at_batch(x, batch, out);
}

std::size_t problem_dim(const Problem& p) {
    return std::visit([](const auto& q) { return q.dim(); }, p);
}

double problem_loss(const Problem& p, std::span<const double> x) {
    return std::visit([&](const auto& q) { return q.loss(x); }, p);
}

void problem_grad(const Problem& p, std::span<const double> x, Rng& rng,
                  std::span<double> out) {
    std::visit([&](const auto& q) { q.grad(x, rng, out); }, p);
}

std::optional<std::vector<double>> problem_x_star(const Problem& p) {
    if (const auto* q = std::get_if<QuadraticProblem>(&p))
        return std::vector<double>(q->x_star().begin(), q->x_star().end());
    if (const auto* f = std::get_if<FiniteSumProblem>(&p))
        return std::vector<double>(f->x_star().begin(), f->x_star().end());
    return std::nullopt;
}

int64_t problem_dataset_size(const Problem& p) {
    if (const auto* f = std::get_if<FiniteSumProblem>(&p)) return f->size();
    if (const auto* m = std::get_if<MlpProblem>(&p)) return m->size();
    return 0;
}

int64_t problem_batch_size(const Problem& p) {
    if (const auto* f = std::get_if<FiniteSumProblem>(&p)) return f->batch_size();
    if (const auto* m = std::get_if<MlpProblem>(&p)) return m->batch_size();
    return 0;
}

}  // namespace stalesgd
