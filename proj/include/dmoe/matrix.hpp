#pragma once

// Dense row-major 2-D array of doubles plus the handful of GEMM forms the
// models need. Kernels parallelize over output rows only, so results are
// bitwise identical for any thread count.

#include <cstddef>
#include <string>
#include <vector>

namespace dmoe {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    // Reshape without preserving contents; reuses capacity.
    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        data.assign(r * c, 0.0);
    }

    void fill(double v) { data.assign(data.size(), v); }
};

// c = a * b, a is (m x k), b is (k x n).
Matrix matmul(const Matrix& a, const Matrix& b);
void matmul_into(Matrix& c, const Matrix& a, const Matrix& b);

// c = a * b^T, a is (m x k), b is (n x k). The workhorse for forward passes:
// both operands stream row-major.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
void matmul_nt_into(Matrix& c, const Matrix& a, const Matrix& b);

// c (+)= a^T * b, a is (k x m), b is (k x n). Used for weight gradients
// (accumulation over the batch dimension k).
void matmul_tn_into(Matrix& c, const Matrix& a, const Matrix& b, bool accumulate);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// c (+)= a * b without transposition, accumulating variant for input gradients.
void matmul_nn_acc(Matrix& c, const Matrix& a, const Matrix& b);

[[noreturn]] void throw_shape_error(const std::string& op, const Matrix& a, const Matrix& b);

}  // namespace dmoe
