#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace t2t::kernels {

// Numeric kernels used by the tensor layer, the tabular-lab enumeration and
// the optimizer loop. Every kernel exists twice: a plain serial reference
// (kernels::serial) and an OpenMP version (kernels::par). The two are
// bit-identical by construction: each output element is owned by exactly one
// thread and accumulated in the same order as the serial code, and whole-array
// reductions fold fixed-size block partials in ascending block order. The
// unqualified entry points dispatch on problem size and the global switch.

bool parallel_enabled();
void set_parallel_enabled(bool on);
int max_threads();

// Dispatch thresholds (work units below which the serial path is used).
inline constexpr std::size_t kMatmulParallelFlops = 1u << 16;
inline constexpr std::size_t kElementwiseParallelSize = 1u << 15;
inline constexpr std::size_t kReduceBlock = 4096;

namespace serial {

// C = A[m x k] * B[k x n]
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
// C += A[m x k] * B[k x n]
void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);
// C[m x n] += A[m x k] * B^T, B stored [n x k]
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
// C[k x n] += A^T * B, A stored [m x k], B stored [m x n]
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

void vadd(const double* a, const double* b, double* y, std::size_t n);
void vsub(const double* a, const double* b, double* y, std::size_t n);
void vmul(const double* a, const double* b, double* y, std::size_t n);
void vtanh(const double* x, double* y, std::size_t n);
void vsigmoid(const double* x, double* y, std::size_t n);
void vexp(const double* x, double* y, std::size_t n);
void vlog(const double* x, double* y, std::size_t n);

// Row-wise stable softmax / log-softmax over the last axis.
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void log_softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);

double sum_blocked(const double* x, std::size_t n);
bool all_finite(const double* x, std::size_t n);

}  // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

void vadd(const double* a, const double* b, double* y, std::size_t n);
void vsub(const double* a, const double* b, double* y, std::size_t n);
void vmul(const double* a, const double* b, double* y, std::size_t n);
void vtanh(const double* x, double* y, std::size_t n);
void vsigmoid(const double* x, double* y, std::size_t n);
void vexp(const double* x, double* y, std::size_t n);
void vlog(const double* x, double* y, std::size_t n);

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void log_softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);

double sum_blocked(const double* x, std::size_t n);
bool all_finite(const double* x, std::size_t n);

}  // namespace par

// Size-dispatching entry points.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_acc(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void vadd(const double* a, const double* b, double* y, std::size_t n);
void vsub(const double* a, const double* b, double* y, std::size_t n);
void vmul(const double* a, const double* b, double* y, std::size_t n);
void vtanh(const double* x, double* y, std::size_t n);
void vsigmoid(const double* x, double* y, std::size_t n);
void vexp(const double* x, double* y, std::size_t n);
void vlog(const double* x, double* y, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void log_softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
double sum_blocked(const double* x, std::size_t n);
bool all_finite(const double* x, std::size_t n);

// Deterministic parallel sum of term(i) for i in [0, n). Block partials are
// folded in ascending block order, so the result does not depend on the
// thread count. F must be safe to call concurrently.
template <class F>
double blocked_sum(std::size_t n, F&& term) {
    if (n == 0) return 0.0;
    const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
    if (nblocks == 1 || !parallel_enabled()) {
        double acc = 0.0;
        for (std::size_t bi = 0; bi < nblocks; ++bi) {
            const std::size_t lo = bi * kReduceBlock;
            const std::size_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
            double partial = 0.0;
            for (std::size_t i = lo; i < hi; ++i) partial += term(i);
            acc += partial;
        }
        return acc;
    }
    std::vector<double> partials(nblocks, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long bi = 0; bi < static_cast<long long>(nblocks); ++bi) {
        const std::size_t lo = static_cast<std::size_t>(bi) * kReduceBlock;
        const std::size_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
        double partial = 0.0;
        for (std::size_t i = lo; i < hi; ++i) partial += term(i);
        partials[static_cast<std::size_t>(bi)] = partial;
    }
    double acc = 0.0;
    for (double p : partials) acc += p;
    return acc;
}

}  // namespace t2t::kernels
