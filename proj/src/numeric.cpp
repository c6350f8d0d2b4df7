#include "dmoe/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmoe {

Matrix relu(const Matrix& x) {
    Matrix y = x;
    relu_inplace(y);
    return y;
}

void relu_inplace(Matrix& x) {
    for (double& v : x.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(Matrix& dy, const Matrix& activated) {
    if (!dy.same_shape(activated)) throw_shape_error("relu_backward", dy, activated);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (!(activated.data[i] > 0.0)) dy.data[i] = 0.0;
}

namespace {

void softmax_span(double* x, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const double floor = std::numeric_limits<double>::min();
    for (std::size_t i = 0; i < n; ++i) {
        x[i] /= sum;
        if (x[i] < floor) x[i] = floor;
    }
}

}  // namespace

std::vector<double> softmax(std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    if (!out.empty()) softmax_span(out.data(), out.size());
    return out;
}

void softmax_rows_inplace(Matrix& x) {
    for (std::size_t r = 0; r < x.rows; ++r) softmax_span(x.row(r), x.cols);
}

double cross_entropy(std::span<const double> p, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= p.size())
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(p.size()) + " classes");
    return -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-30));
}

void sgd_step(Matrix& params, const Matrix& grad, double lr) {
    if (!params.same_shape(grad)) throw_shape_error("sgd_step", params, grad);
    for (std::size_t i = 0; i < params.data.size(); ++i) params.data[i] -= lr * grad.data[i];
}

double grad_check(const std::function<double(const Matrix&)>& f, const Matrix& params,
                  const Matrix& analytic_grad) {
    if (!params.same_shape(analytic_grad)) throw_shape_error("grad_check", params, analytic_grad);
    constexpr double step = 1e-5;
    Matrix work = params;
    double max_err = 0.0;
    for (std::size_t i = 0; i < work.data.size(); ++i) {
        const double saved = work.data[i];
        work.data[i] = saved + step;
        const double fp = f(work);
        work.data[i] = saved - step;
        const double fm = f(work);
        work.data[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("grad_check: non-finite function value at entry " +
                                     std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic_grad.data[i] - numeric) /
                           std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

void add_bias_rows(Matrix& y, const Matrix& b) {
    if (b.cols != 1 || b.rows != y.cols) throw_shape_error("add_bias_rows", y, b);
    for (std::size_t r = 0; r < y.rows; ++r) {
        double* yr = y.row(r);
        for (std::size_t c = 0; c < y.cols; ++c) yr[c] += b.data[c];
    }
}

void colsum_into(Matrix& out, const Matrix& m) {
    out.resize(m.cols, 1);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* mr = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) out.data[c] += mr[c];
    }
}

void add_scaled_rows(Matrix& acc, const Matrix& w, std::size_t c, const Matrix& src) {
    if (acc.rows != src.rows || acc.cols != src.cols) throw_shape_error("add_scaled_rows", acc, src);
    for (std::size_t r = 0; r < src.rows; ++r) {
        const double g = w(r, c);
        const double* s = src.row(r);
        double* a = acc.row(r);
        for (std::size_t j = 0; j < src.cols; ++j) a[j] += g * s[j];
    }
}

void rowdot_into(std::vector<double>& out, const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape_error("rowdot", a, b);
    out.assign(a.rows, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double* ar = a.row(r);
        const double* br = b.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) acc += ar[c] * br[c];
        out[r] = acc;
    }
}

bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace dmoe
