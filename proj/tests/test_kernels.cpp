#include <cstring>
#include <limits>
#include <vector>

#include "doctest.h"
#include "t2t/kernels.hpp"
#include "t2t/rng.hpp"

using namespace t2t;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul serial matches hand result") {
    // [[1,2],[3,4]] * I
    std::vector<double> a{1, 2, 3, 4}, b{1, 0, 0, 1}, c(4, -1);
    kernels::serial::matmul(a.data(), b.data(), c.data(), 2, 2, 2);
    CHECK(c == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("parallel kernels are bit-identical to serial") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t m = 17 + static_cast<std::size_t>(trial) * 13;
        const std::size_t k = 31 + static_cast<std::size_t>(trial) * 7;
        const std::size_t n = 23 + static_cast<std::size_t>(trial) * 11;
        auto A = random_vec(m * k, rng);
        auto B = random_vec(k * n, rng);

        std::vector<double> c1(m * n), c2(m * n);
        kernels::serial::matmul(A.data(), B.data(), c1.data(), m, k, n);
        kernels::par::matmul(A.data(), B.data(), c2.data(), m, k, n);
        CHECK(bit_equal(c1, c2));

        auto Bt = random_vec(n * k, rng);
        std::vector<double> d1(m * n, 0.5), d2(m * n, 0.5);
        kernels::serial::matmul_nt_acc(A.data(), Bt.data(), d1.data(), m, k, n);
        kernels::par::matmul_nt_acc(A.data(), Bt.data(), d2.data(), m, k, n);
        CHECK(bit_equal(d1, d2));

        auto Bm = random_vec(m * n, rng);
        std::vector<double> e1(k * n, 0.25), e2(k * n, 0.25);
        kernels::serial::matmul_tn_acc(A.data(), Bm.data(), e1.data(), m, k, n);
        kernels::par::matmul_tn_acc(A.data(), Bm.data(), e2.data(), m, k, n);
        CHECK(bit_equal(e1, e2));
    }
}

TEST_CASE("elementwise and softmax parallel paths are bit-identical") {
    Rng rng(11);
    const std::size_t n = 40000;  // above the dispatch threshold
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);

    std::vector<double> r1(n), r2(n);
    kernels::serial::vadd(x.data(), y.data(), r1.data(), n);
    kernels::par::vadd(x.data(), y.data(), r2.data(), n);
    CHECK(bit_equal(r1, r2));

    kernels::serial::vtanh(x.data(), r1.data(), n);
    kernels::par::vtanh(x.data(), r2.data(), n);
    CHECK(bit_equal(r1, r2));

    kernels::serial::vsigmoid(x.data(), r1.data(), n);
    kernels::par::vsigmoid(x.data(), r2.data(), n);
    CHECK(bit_equal(r1, r2));

    const std::size_t rows = 200, cols = 200;
    kernels::serial::softmax_rows(x.data(), r1.data(), rows, cols);
    kernels::par::softmax_rows(x.data(), r2.data(), rows, cols);
    CHECK(bit_equal(std::vector<double>(r1.begin(), r1.begin() + rows * cols),
                    std::vector<double>(r2.begin(), r2.begin() + rows * cols)));

    kernels::serial::log_softmax_rows(x.data(), r1.data(), rows, cols);
    kernels::par::log_softmax_rows(x.data(), r2.data(), rows, cols);
    CHECK(bit_equal(std::vector<double>(r1.begin(), r1.begin() + rows * cols),
                    std::vector<double>(r2.begin(), r2.begin() + rows * cols)));
}

TEST_CASE("blocked sums are bit-identical across serial, parallel and dispatch") {
    Rng rng(3);
    for (std::size_t n : {std::size_t{1}, std::size_t{4095}, std::size_t{4096},
                          std::size_t{4097}, std::size_t{100000}}) {
        auto x = random_vec(n, rng);
        const double s1 = kernels::serial::sum_blocked(x.data(), n);
        const double s2 = kernels::par::sum_blocked(x.data(), n);
        const double s3 = kernels::sum_blocked(x.data(), n);
        CHECK(s1 == s2);
        CHECK(s1 == s3);
        const double b = kernels::blocked_sum(n, [&](std::size_t i) { return x[i]; });
        CHECK(s1 == b);
    }
    CHECK(kernels::sum_blocked(nullptr, 0) == 0.0);
}

TEST_CASE("all_finite flags NaN and Inf in both paths") {
    std::vector<double> v(50000, 1.0);
    CHECK(kernels::serial::all_finite(v.data(), v.size()));
    CHECK(kernels::par::all_finite(v.data(), v.size()));
    v[33333] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(kernels::serial::all_finite(v.data(), v.size()));
    CHECK_FALSE(kernels::par::all_finite(v.data(), v.size()));
    v[33333] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(kernels::par::all_finite(v.data(), v.size()));
}

TEST_CASE("dispatch honors the global parallel switch") {
    CHECK(kernels::parallel_enabled());
    kernels::set_parallel_enabled(false);
    CHECK_FALSE(kernels::parallel_enabled());
    Rng rng(5);
    auto x = random_vec(1 << 16, rng);
    // Still correct with the switch off.
    const double s = kernels::sum_blocked(x.data(), x.size());
    CHECK(s == kernels::serial::sum_blocked(x.data(), x.size()));
    kernels::set_parallel_enabled(true);
}
