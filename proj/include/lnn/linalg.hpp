#pragma once

#include "lnn/types.hpp"

namespace lnn {

/// Singular value decomposition W = U diag(sigma) V^T with a fixed gauge:
/// singular values descending, and the first non-negligible entry of every
/// right singular vector non-negative.
struct Svd {
  Matrix U;
  Vector sigma;
  Matrix V;
};

/// Thin SVD (k = min(rows, cols) triplets) unless `full` is set, in which
/// case U and V are square and sigma still has k entries.
Svd gauged_svd(const Matrix& W, bool full = false);

double nuclear_norm(const Matrix& W);
double spectral_norm(const Matrix& W);
double sigma_min(const Matrix& W);

/// x^e with 0^0 = 1 and negative x clamped to 0.
double psd_pow(double x, double e);

}  // namespace lnn
