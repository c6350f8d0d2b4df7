#include "dmoe/matrix.hpp"

#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmoe {

void throw_shape_error(const std::string& op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(op + ": incompatible shapes (" + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + ") vs (" + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
}

namespace {

// Parallel region only when the work is worth the fork overhead and we are
// not already inside one (nested teams would only add entry costs).
constexpr std::size_t kParallelFlops = 1u << 16;

inline bool can_parallelize() {
#ifdef _OPENMP
    return !omp_in_parallel();
#else
    return false;
#endif
}

// Eight independent accumulators so the reduction vectorizes; the summation
// order is fixed, so results stay bitwise reproducible.
inline double dot(const double* x, const double* y, std::size_t n) {
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t k = 0; k < 8; ++k) acc[k] += x[i + k] * y[i + k];
    double tail = 0.0;
    for (; i < n; ++i) tail += x[i] * y[i];
    return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
           tail;
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

void matmul_into(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw_shape_error("matmul", a, b);
    c.resize(a.rows, b.cols);
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    const bool par = m * k * n >= kParallelFlops && can_parallelize();
#pragma omp parallel for schedule(static) if (par)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* arow = a.row(static_cast<std::size_t>(i));
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t p = 0; p < k; ++p) axpy(arow[p], b.row(p), crow, n);
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c;
    matmul_into(c, a, b);
    return c;
}

void matmul_nt_into(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw_shape_error("matmul_nt", a, b);
    c.resize(a.rows, b.rows);
    const std::size_t m = a.rows, k = a.cols, n = b.rows;
    const bool par = m * k * n >= kParallelFlops && can_parallelize();
#pragma omp parallel for schedule(static) if (par)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* arow = a.row(static_cast<std::size_t>(i));
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < n; ++j) crow[j] = dot(arow, b.row(j), k);
    }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c;
    matmul_nt_into(c, a, b);
    return c;
}

void matmul_tn_into(Matrix& c, const Matrix& a, const Matrix& b, bool accumulate) {
    if (a.rows != b.rows) throw_shape_error("matmul_tn", a, b);
    const std::size_t k = a.rows, m = a.cols, n = b.cols;
    if (!accumulate || c.rows != m || c.cols != n) c.resize(m, n);
    const bool par = m * k * n >= kParallelFlops && can_parallelize();
#pragma omp parallel for schedule(static) if (par)
    for (long long j = 0; j < static_cast<long long>(m); ++j) {
        double* crow = c.row(static_cast<std::size_t>(j));
        for (std::size_t p = 0; p < k; ++p)
            axpy(a(p, static_cast<std::size_t>(j)), b.row(p), crow, n);
    }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix c;
    matmul_tn_into(c, a, b, false);
    return c;
}

void matmul_nn_acc(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw_shape_error("matmul_nn_acc", a, b);
    if (c.rows != a.rows || c.cols != b.cols) throw_shape_error("matmul_nn_acc(out)", c, b);
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    const bool par = m * k * n >= kParallelFlops && can_parallelize();
#pragma omp parallel for schedule(static) if (par)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* arow = a.row(static_cast<std::size_t>(i));
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t p = 0; p < k; ++p) axpy(arow[p], b.row(p), crow, n);
    }
}

}  // namespace dmoe
