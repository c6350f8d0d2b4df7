#pragma once

// Activations, losses, their gradients, the SGD update, and the
// finite-difference gradient checker. Everything is 64-bit.

#include <functional>
#include <span>
#include <vector>

#include "dmoe/matrix.hpp"

namespace dmoe {

// Elementwise max(0, x).
Matrix relu(const Matrix& x);
void relu_inplace(Matrix& x);

// dx = dy where the forward output was positive, else 0. `activated` is the
// post-relu value; relu(q) > 0 iff q > 0, so the mask needs no pre-activation.
void relu_backward_inplace(Matrix& dy, const Matrix& activated);

// Exp-normalization with max subtraction; entries floored at DBL_MIN so the
// output is strictly positive even for inputs like [1000, 0].
std::vector<double> softmax(std::span<const double> x);
void softmax_rows_inplace(Matrix& x);

// -log p[label], p[label] floored at 1e-30.
double cross_entropy(std::span<const double> p, int label);

// params -= lr * grad.
void sgd_step(Matrix& params, const Matrix& grad, double lr);

// Max over entries of |analytic - numeric| / max(1, |numeric|), numeric by
// central differences with step 1e-5. `f` is evaluated at perturbed copies of
// `params`; it must return a finite value.
double grad_check(const std::function<double(const Matrix&)>& f, const Matrix& params,
                  const Matrix& analytic_grad);

// --- small helpers shared by the model code ---

// y[r,:] += b for every row; b is (n x 1).
void add_bias_rows(Matrix& y, const Matrix& b);
// out[j] = sum_r m(r, j).
void colsum_into(Matrix& out, const Matrix& m);
// acc += weight_col[r] * src[r,:] rowwise, where weight_col is column c of w.
void add_scaled_rows(Matrix& acc, const Matrix& w, std::size_t c, const Matrix& src);
// out[r] = dot(a.row(r), b.row(r)).
void rowdot_into(std::vector<double>& out, const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

}  // namespace dmoe
