#pragma once

#include <cstddef>
#include <span>

#include "tsup/mat.hpp"
#include "tsup/rng.hpp"

namespace tsup {

// Products. The `_tn` / `_nt` variants transpose the first / second operand
// without materializing it.
Mat matmul(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);  // aᵀ b
Mat matmul_nt(const Mat& a, const Mat& b);  // a bᵀ
Mat transpose(const Mat& a);

/// Accumulates aᵀ b into `out` (shape a.cols x b.cols).
void add_matmul_tn(Mat& out, const Mat& a, const Mat& b);
/// Adds the column sums of `a` into the single-row `out`.
void add_col_sums(Mat& out, const Mat& a);
/// Adds the single-row `bias` to every row of `a`.
void add_row_broadcast(Mat& a, const Mat& bias);

/// Row-wise softmax with per-row max subtraction.
Mat softmax_rows(const Mat& x);

/// gain ⊙ (x − mean) / √(var + eps) + bias, biased variance.
Vec layer_norm_row(std::span<const double> x, std::span<const double> gain,
                   std::span<const double> bias, double eps = 1e-5);

double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> u);
/// Throws ZeroNormError when either vector is zero.
double cosine(std::span<const double> u, std::span<const double> v);

struct SymEig {
  Vec values;   // descending
  Mat vectors;  // column j pairs with values[j]
  int sweeps = 0;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymEig sym_eig(const Mat& c, double tol = 1e-12, int max_sweeps = 100);

/// n normal draws; `stddev` = 0 yields a constant vector.
Vec sample_gaussian(Rng& rng, std::size_t n, double mean, double stddev);

/// GELU, tanh approximation.
double gelu(double x);
double gelu_grad(double x);

}  // namespace tsup
