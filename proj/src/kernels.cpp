#include "t2t/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>

namespace t2t::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel_enabled(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------------------
// serial
// ---------------------------------------------------------------------------

namespace serial {

// i-k-j order: each c[i][j] accumulates over ascending k, which the parallel
// version reproduces exactly.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            const double* bk = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            const double* bk = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double dot = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) dot += ai[kk] * bj[kk];
            ci[j] += dot;
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < k; ++r) {
        double* cr = c + r * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double air = a[i * k + r];
            const double* bi = b + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += air * bi[j];
        }
    }
}

void vadd(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void vsub(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
void vmul(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void vtanh(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
void vsigmoid(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}
void vexp(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
void vlog(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
}

namespace {
inline void softmax_one_row(const double* x, double* y, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        s += y[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}
inline void log_softmax_one_row(const double* x, double* y, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
}
}  // namespace

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) softmax_one_row(x + i * cols, y + i * cols, cols);
}
void log_softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) log_softmax_one_row(x + i * cols, y + i * cols, cols);
}

double sum_blocked(const double* x, std::size_t n) {
    const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    double acc = 0.0;
    for (std::size_t bi = 0; bi < nblocks; ++bi) {
        const std::size_t lo = bi * kReduceBlock;
        const std::size_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
        double partial = 0.0;
        for (std::size_t i = lo; i < hi; ++i) partial += x[i];
        acc += partial;
    }
    return acc;
}

bool all_finite(const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// par
// ---------------------------------------------------------------------------

namespace par {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            const double* bk = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            const double* bk = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double dot = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) dot += ai[kk] * bj[kk];
            ci[j] += dot;
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    // Parallel over output rows r; the i-accumulation order per element
    // matches the serial loop.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long r = 0; r < static_cast<long long>(k); ++r) {
        double* cr = c + static_cast<std::size_t>(r) * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double air = a[i * k + static_cast<std::size_t>(r)];
            const double* bi = b + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += air * bi[j];
        }
    }
}

#define T2T_PAR_ELEMENTWISE(body)                                  \
    _Pragma("omp parallel for schedule(static)")                   \
    for (long long i = 0; i < static_cast<long long>(n); ++i) {    \
        const std::size_t ii = static_cast<std::size_t>(i);        \
        body;                                                      \
    }

void vadd(const double* a, const double* b, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = a[ii] + b[ii])
#else
    serial::vadd(a, b, y, n);
#endif
}
void vsub(const double* a, const double* b, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = a[ii] - b[ii])
#else
    serial::vsub(a, b, y, n);
#endif
}
void vmul(const double* a, const double* b, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = a[ii] * b[ii])
#else
    serial::vmul(a, b, y, n);
#endif
}
void vtanh(const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = std::tanh(x[ii]))
#else
    serial::vtanh(x, y, n);
#endif
}
void vsigmoid(const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = 1.0 / (1.0 + std::exp(-x[ii])))
#else
    serial::vsigmoid(x, y, n);
#endif
}
void vexp(const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = std::exp(x[ii]))
#else
    serial::vexp(x, y, n);
#endif
}
void vlog(const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
    T2T_PAR_ELEMENTWISE(y[ii] = std::log(x[ii]))
#else
    serial::vlog(x, y, n);
#endif
}

#undef T2T_PAR_ELEMENTWISE

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(rows); ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        serial::softmax_rows(x + off, y + off, 1, cols);
    }
}

void log_softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(rows); ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        serial::log_softmax_rows(x + off, y + off, 1, cols);
    }
}

double sum_blocked(const double* x, std::size_t n) {
    return blocked_sum(n, [x](std::size_t i) { return x[i]; });
}

bool all_finite(const double* x, std::size_t n) {
    std::atomic<bool> ok{true};
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        if (!std::isfinite(x[static_cast<std::size_t>(i)]))
            ok.store(false, std::memory_order_relaxed);
    }
    return ok.load();
}

}  // namespace par

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

namespace {
inline bool go_par(std::size_t work, std::size_t threshold) {
    return parallel_enabled() && max_threads() > 1 && work >= threshold;
}
}  // namespace

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    if (go_par(m * k * n, kMatmulParallelFlops)) par::matmul(a, b, c, m, k, n);
    else serial::matmul(a, b, c, m, k, n);
}
void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n) {
    if (go_par(m * k * n, kMatmulParallelFlops)) par::matmul_acc(a, b, c, m, k, n);
    else serial::matmul_acc(a, b, c, m, k, n);
}
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    if (go_par(m * k * n, kMatmulParallelFlops)) par::matmul_nt_acc(a, b, c, m, k, n);
    else serial::matmul_nt_acc(a, b, c, m, k, n);
}
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    if (go_par(m * k * n, kMatmulParallelFlops)) par::matmul_tn_acc(a, b, c, m, k, n);
    else serial::matmul_tn_acc(a, b, c, m, k, n);
}

#define T2T_DISPATCH_EW(name, ...)                                   \
    if (go_par(n, kElementwiseParallelSize)) par::name(__VA_ARGS__); \
    else serial::name(__VA_ARGS__);

void vadd(const double* a, const double* b, double* y, std::size_t n) { T2T_DISPATCH_EW(vadd, a, b, y, n) }
void vsub(const double* a, const double* b, double* y, std::size_t n) { T2T_DISPATCH_EW(vsub, a, b, y, n) }
void vmul(const double* a, const double* b, double* y, std::size_t n) { T2T_DISPATCH_EW(vmul, a, b, y, n) }
void vtanh(const double* x, double* y, std::size_t n) { T2T_DISPATCH_EW(vtanh, x, y, n) }
void vsigmoid(const double* x, double* y, std::size_t n) { T2T_DISPATCH_EW(vsigmoid, x, y, n) }
void vexp(const double* x, double* y, std::size_t n) { T2T_DISPATCH_EW(vexp, x, y, n) }
void vlog(const double* x, double* y, std::size_t n) { T2T_DISPATCH_EW(vlog, x, y, n) }

#undef T2T_DISPATCH_EW

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    if (go_par(rows * cols, kElementwiseParallelSize) && rows > 1)
        par::softmax_rows(x, y, rows, cols);
    else
        serial::softmax_rows(x, y, rows, cols);
}
void log_softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    if (go_par(rows * cols, kElementwiseParallelSize) && rows > 1)
        par::log_softmax_rows(x, y, rows, cols);
    else
        serial::log_softmax_rows(x, y, rows, cols);
}

double sum_blocked(const double* x, std::size_t n) {
    if (go_par(n, kElementwiseParallelSize)) return par::sum_blocked(x, n);
    return serial::sum_blocked(x, n);
}

bool all_finite(const double* x, std::size_t n) {
    if (go_par(n, kElementwiseParallelSize)) return par::all_finite(x, n);
    return serial::all_finite(x, n);
}

}  // namespace t2t::kernels
