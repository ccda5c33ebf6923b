#pragma once

#include <cmath>
#include <cstdint>

namespace stalesgd {

// Counter-free splittable PRNG. Worker streams are derived by hashing
// (master seed, stream id, iteration), which keeps every gradient draw
// reproducible regardless of thread interleaving.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // avoid the all-zero fixed point and decorrelate nearby seeds
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in (0, 1] (safe for log())
    double next_double_open() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) {
        // rejection-free for our purposes: n is tiny relative to 2^64
        return next_u64() % n;
    }

    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double_open();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double next_exponential(double mean) {
        return -mean * std::log(next_double_open());
    }

    // Marsaglia-Tsang for shape >= 1; boost for shape < 1.
    double next_gamma(double shape, double scale) {
        if (shape < 1.0) {
            double u = next_double_open();
            return next_gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = next_normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u = next_double_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stable sub-seed derivation for independent streams.
inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t counter) {
    uint64_t z = master ^ (stream * 0x9e3779b97f4a7c15ull) ^ (counter * 0xd1342543de82ef95ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace stalesgd
