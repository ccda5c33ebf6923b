#include "stalesgd/kernels.hpp"

#include "stalesgd/errors.hpp"

#include <atomic>
#include <cstring>

namespace stalesgd::kernels {

#if defined(STALESGD_HAVE_AVX2_TU)
const Backend& avx2_backend();
#endif
#if defined(STALESGD_HAVE_NEON_TU)
const Backend& neon_backend();
#endif

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal_scalar(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

double sq_dist_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void matvec_scalar(const double* A, const double* x, double* y, std::size_t rows,
                   std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(A + r * cols, x, cols);
}

void matvec_t_scalar(const double* A, const double* x, double* y, std::size_t rows,
                     std::size_t cols) {
    std::memset(y, 0, cols * sizeof(double));
    for (std::size_t r = 0; r < rows; ++r) axpy_scalar(x[r], A + r * cols, y, cols);
}

const Backend kScalar{"scalar",     dot_scalar,    axpy_scalar, scal_scalar,
                      sq_dist_scalar, matvec_scalar, matvec_t_scalar};

std::atomic<const Backend*> g_active{nullptr};

const Backend* pick_default() {
#if defined(STALESGD_HAVE_AVX2_TU)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return &avx2_backend();
#endif
#if defined(STALESGD_HAVE_NEON_TU)
    return &neon_backend();
#endif
    return &kScalar;
}

}  // namespace

const Backend& scalar_backend() { return kScalar; }

const Backend& active_backend() {
    const Backend* b = g_active.load(std::memory_order_acquire);
    if (!b) {
        b = pick_default();
        g_active.store(b, std::memory_order_release);
    }
    return *b;
}

std::vector<std::string> available_backends() {
    std::vector<std::string> out{"scalar"};
#if defined(STALESGD_HAVE_AVX2_TU)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) out.push_back("avx2");
#endif
#if defined(STALESGD_HAVE_NEON_TU)
    out.push_back("neon");
#endif
    return out;
}

void set_backend(const std::string& name) {
    if (name == "scalar") {
        g_active.store(&kScalar, std::memory_order_release);
        return;
    }
#if defined(STALESGD_HAVE_AVX2_TU)
    if (name == "avx2") {
        if (!(__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")))
            throw validation_error("avx2 backend not supported on this cpu");
        g_active.store(&avx2_backend(), std::memory_order_release);
        return;
    }
#endif
#if defined(STALESGD_HAVE_NEON_TU)
    if (name == "neon") {
        g_active.store(&neon_backend(), std::memory_order_release);
        return;
    }
#endif
    throw validation_error("unknown kernel backend: " + name);
}

}  // namespace stalesgd::kernels
