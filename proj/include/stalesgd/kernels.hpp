#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stalesgd::kernels {

// Vector primitives used by the gradient oracles and the update loops.
// A scalar reference implementation always exists; wider backends are
// selected at runtime from CPU capabilities and must agree with the
// reference to rounding-level tolerance (see tests).
struct Backend {
    const char* name;
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);  // y += a*x
    void (*scal)(double, double*, std::size_t);                 // x *= a
    double (*sq_dist)(const double*, const double*, std::size_t);
    // y = A x, A row-major (rows x cols)
    void (*matvec)(const double*, const double*, double*, std::size_t, std::size_t);
    // y = A^T x, A row-major (rows x cols), y has cols entries
    void (*matvec_t)(const double*, const double*, double*, std::size_t, std::size_t);
};

const Backend& scalar_backend();
const Backend& active_backend();
std::vector<std::string> available_backends();
// Force a backend by name ("scalar", "avx2", "neon"); throws validation_error
// if it is not available on this machine.
void set_backend(const std::string& name);

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active_backend().dot(a.data(), b.data(), a.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    active_backend().axpy(a, x.data(), y.data(), y.size());
}
inline void scal(double a, std::span<double> x) {
    active_backend().scal(a, x.data(), x.size());
}
inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    return active_backend().sq_dist(a.data(), b.data(), a.size());
}
inline double sq_norm(std::span<const double> a) {
    return active_backend().dot(a.data(), a.data(), a.size());
}
inline void matvec(std::span<const double> A, std::span<const double> x, std::span<double> y,
                   std::size_t rows, std::size_t cols) {
    active_backend().matvec(A.data(), x.data(), y.data(), rows, cols);
}
inline void matvec_t(std::span<const double> A, std::span<const double> x, std::span<double> y,
                     std::size_t rows, std::size_t cols) {
    active_backend().matvec_t(A.data(), x.data(), y.data(), rows, cols);
}

}  // namespace stalesgd::kernels
