#include "stalesgd/problems.hpp"
#include "stalesgd/errors.hpp"
#include "stalesgd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <numeric>
#include <vector>

using namespace stalesgd;

namespace {

// all size-k index subsets of {0..n-1}
void for_each_subset(int64_t n, int64_t k, const std::function<void(const std::vector<int64_t>&)>& fn) {
    std::vector<int64_t> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    for (;;) {
        fn(idx);
        int64_t i = k - 1;
        while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
        if (i < 0) break;
        ++idx[static_cast<std::size_t>(i)];
        for (int64_t j = i + 1; j < k; ++j)
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j) - 1] + 1;
    }
}

}  // namespace

TEST_CASE("quadratic loss and gradient basics") {
    auto q = QuadraticProblem::diagonal({1.0, 1.0}, {0.0, 0.0}, 0.0);
    std::vector<double> x{3.0, 4.0};
    CHECK(q.loss(x) == doctest::Approx(12.5).epsilon(1e-15));
    Rng rng(1);
    std::vector<double> g(2);
    q.grad(std::vector<double>{0.0, 0.0}, rng, g);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(q.loss(std::vector<double>{0.0, 0.0}) == 0.0);
    CHECK_THROWS_AS(q.loss(std::vector<double>{1.0}), validation_error);
}

TEST_CASE("quadratic constants") {
    auto id2 = QuadraticProblem::diagonal({1.0, 1.0}, {0.0, 0.0}, 0.0);
    auto k = id2.constants(1.0);
    CHECK(k.c == 1.0);
    CHECK(k.L == 1.0);
    CHECK(k.M == doctest::Approx(1.0));

    auto d14 = QuadraticProblem::diagonal({1.0, 4.0}, {0.0, 0.0}, 0.0);
    auto k2 = d14.constants(1.0);
    CHECK(k2.c == 1.0);
    CHECK(k2.L == 4.0);
    CHECK(k2.M == doctest::Approx(4.0));

    auto noisy = QuadraticProblem::diagonal({1.0, 1.0}, {0.0, 0.0}, 0.1);
    CHECK(noisy.constants(1.0).M == doctest::Approx(std::sqrt(1.02)).epsilon(1e-12));
}

TEST_CASE("quadratic strong convexity inequality") {
    auto q = QuadraticProblem::rotated({0.5, 2.0, 5.0}, {1.0, -1.0, 0.5}, 0.0, 11);
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> x(3), y(3), gx(3), gy(3);
        for (int i = 0; i < 3; ++i) {
            x[static_cast<std::size_t>(i)] = 3.0 * rng.next_normal();
            y[static_cast<std::size_t>(i)] = 3.0 * rng.next_normal();
        }
        q.full_grad(x, gx);
        q.full_grad(y, gy);
        double lhs = 0.0, nrm = 0.0;
        for (int i = 0; i < 3; ++i) {
            auto s = static_cast<std::size_t>(i);
            lhs += (x[s] - y[s]) * (gx[s] - gy[s]);
            nrm += (x[s] - y[s]) * (x[s] - y[s]);
        }
        CHECK(lhs >= 0.5 * nrm - 1e-9);
    }
}

TEST_CASE("quadratic noise has the configured scale") {
    auto q = QuadraticProblem::diagonal({1.0}, {0.0}, 0.5);
    Rng rng(42);
    double m1 = 0.0, m2 = 0.0;
    int n = 200000;
    std::vector<double> g(1);
    std::vector<double> x{0.0};
    for (int i = 0; i < n; ++i) {
        q.grad(x, rng, g);
        m1 += g[0];
        m2 += g[0] * g[0];
    }
    m1 /= n;
    m2 /= n;
    CHECK(std::abs(m1) < 0.01);
    CHECK(std::sqrt(m2) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("finite-sum batch average over all batches equals the full gradient") {
    for (int64_t b : {1, 2, 3}) {
        auto fs = FiniteSumProblem::synthetic(4, 3, 0.3, 99, b);
        std::vector<double> x{0.3, -0.7, 1.1};
        std::vector<double> full(3), acc(3, 0.0), g(3);
        fs.full_grad(x, full);
        int64_t count = 0;
        for_each_subset(4, b, [&](const std::vector<int64_t>& batch) {
            fs.grad_at_batch(x, batch, g);
            for (int i = 0; i < 3; ++i) acc[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
            ++count;
        });
        for (int i = 0; i < 3; ++i) {
            auto s = static_cast<std::size_t>(i);
            CHECK(std::abs(acc[s] / static_cast<double>(count) - full[s]) < 1e-12);
        }
    }
}

TEST_CASE("finite-sum unbiasedness by enumeration up to n=8") {
    auto fs = FiniteSumProblem::synthetic(8, 4, 0.5, 7, 3);
    std::vector<double> x{1.0, 0.0, -2.0, 0.25};
    std::vector<double> full(4), acc(4, 0.0), g(4);
    fs.full_grad(x, full);
    int64_t count = 0;
    for_each_subset(8, 3, [&](const std::vector<int64_t>& batch) {
        fs.grad_at_batch(x, batch, g);
        for (int i = 0; i < 4; ++i) acc[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
        ++count;
    });
    CHECK(count == 56);  // C(8,3)
    for (int i = 0; i < 4; ++i) {
        auto s = static_cast<std::size_t>(i);
        CHECK(std::abs(acc[s] / static_cast<double>(count) - full[s]) < 1e-12);
    }
}

TEST_CASE("finite-sum optimum and batch sampling") {
    auto fs = FiniteSumProblem::synthetic(64, 8, 0.2, 123, 4);
    // gradient at the stored least-squares solution vanishes
    std::vector<double> g(8);
    fs.full_grad(fs.x_star(), g);
    for (double v : g) CHECK(std::abs(v) < 1e-9);

    // batches are distinct indices in range, deterministic per seed
    Rng r1(5), r2(5);
    std::vector<int64_t> b1, b2;
    fs.sample_batch(r1, 6, b1);
    fs.sample_batch(r2, 6, b2);
    CHECK(b1 == b2);
    auto sorted = b1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    for (int64_t i : b1) {
        CHECK(i >= 0);
        CHECK(i < 64);
    }
}

TEST_CASE("batch subsets are uniformly distributed (frequency window)") {
    auto fs = FiniteSumProblem::synthetic(6, 2, 0.1, 3, 2);
    Rng rng(17);
    std::vector<int64_t> batch;
    std::vector<int> seen(6, 0);
    int draws = 60000;
    for (int i = 0; i < draws; ++i) {
        fs.sample_batch(rng, 2, batch);
        for (int64_t b : batch) seen[static_cast<std::size_t>(b)]++;
    }
    for (int v : seen) {
        double f = static_cast<double>(v) / (2.0 * draws);
        CHECK(f == doctest::Approx(1.0 / 6.0).epsilon(0.05));
    }
}

TEST_CASE("mlp forward produces a probability simplex") {
    auto m = MlpProblem::blobs(16, 300, 21, 10);
    std::vector<double> x(m.dim());
    Rng rng(8);
    m.default_init(rng, x);
    for (int64_t s = 0; s < 20; ++s) {
        auto p = m.forward(x, s);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("mlp loss at zero weights is ln(3)") {
    auto m = MlpProblem::blobs(8, 120, 4, 10);
    std::vector<double> x(m.dim(), 0.0);
    CHECK(m.loss(x) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("mlp backprop matches central finite differences") {
    auto m = MlpProblem::blobs(6, 60, 31, 60);
    std::vector<double> x(m.dim());
    Rng rng(77);
    m.default_init(rng, x);
    for (auto& v : x) v += 0.1 * rng.next_normal();

    // full-batch gradient (batch == dataset makes it deterministic)
    std::vector<int64_t> all(60);
    std::iota(all.begin(), all.end(), 0);
    std::vector<double> g(m.dim());
    m.grad_at_batch(x, all, g);

    double h = 1e-5;
    for (std::size_t i = 0; i < m.dim(); i += 7) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        double fd = (m.loss(xp) - m.loss(xm)) / (2.0 * h);
        CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("problem variant helpers") {
    Problem q = QuadraticProblem::diagonal({2.0}, {1.0}, 0.0);
    CHECK(problem_dim(q) == 1);
    CHECK(problem_x_star(q).has_value());
    CHECK(problem_batch_size(q) == 0);
    Problem fs = FiniteSumProblem::synthetic(16, 2, 0.1, 5, 4);
    CHECK(problem_dataset_size(fs) == 16);
    CHECK(problem_batch_size(fs) == 4);
    Problem m = MlpProblem::blobs(4, 30, 2, 5);
    CHECK(problem_x_star(m) == std::nullopt);
}
