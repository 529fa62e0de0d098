#pragma once

// Independent reference computations used to check the library. None of
// these call into the code under test except where a loss gradient is
// needed as input.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = normal(rng);
  return M;
}

/// S^e for symmetric PSD S by eigendecomposition; e = 0 gives the identity.
/// Eigenvalues below 1e-12 of the largest are roundoff and count as zero.
inline Matrix psd_power(const Matrix& S, double e) {
  if (e == 0.0) return Matrix::Identity(S.rows(), S.cols());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (S + S.transpose()));
  Vector d = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(d.maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = d(i) > cutoff ? std::pow(d(i), e) : 0.0;
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

inline Matrix kron(const Matrix& A, const Matrix& B) {
  Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return K;
}

/// Dense preconditioner sum_j [W^T W]^{(n-j)/n} (x) [W W^T]^{(j-1)/n}
/// acting on column-first vec(G).
inline Matrix kronecker_preconditioner(const Matrix& W, int n) {
  const Matrix WtW = W.transpose() * W;
  const Matrix WWt = W * W.transpose();
  Matrix P = Matrix::Zero(W.size(), W.size());
  for (int j = 1; j <= n; ++j) {
    P += kron(psd_power(WtW, static_cast<double>(n - j) / n),
              psd_power(WWt, static_cast<double>(j - 1) / n));
  }
  return P;
}

inline Matrix apply_kronecker(const Matrix& W, const Matrix& G, int n) {
  const Vector v = kronecker_preconditioner(W, n) * Eigen::Map<const Vector>(G.data(), G.size());
  return Eigen::Map<const Matrix>(v.data(), G.rows(), G.cols());
}

/// Central finite-difference gradient of a scalar function of a matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& W,
                          double h = 1e-6) {
  Matrix G(W.rows(), W.cols());
  for (Eigen::Index i = 0; i < W.size(); ++i) {
    Matrix Wp = W;
    Matrix Wm = W;
    Wp.data()[i] += h;
    Wm.data()[i] -= h;
    G.data()[i] = (f(Wp) - f(Wm)) / (2.0 * h);
  }
  return G;
}

/// Classic RK4 for a scalar ODE y' = f(t, y) over [t0, t1].
inline double rk4_scalar(const std::function<double(double, double)>& f, double y0, double t0,
                         double t1, int steps) {
  const double h = (t1 - t0) / steps;
  double y = y0;
  double t = t0;
  for (int i = 0; i < steps; ++i) {
    const double k1 = f(t, y);
    const double k2 = f(t + h / 2, y + h / 2 * k1);
    const double k3 = f(t + h / 2, y + h / 2 * k2);
    const double k4 = f(t + h, y + h * k3);
    y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    t += h;
  }
  return y;
}

/// Gradient flow of W -> l(W W^T) on the factor W itself (RK4), returning
/// W W^T after every step. `grad` is the gradient of l at a symmetric matrix.
inline std::vector<Matrix> direct_symmetric_flow(const Matrix& W0,
                                                 const std::function<Matrix(const Matrix&)>& grad,
                                                 double h, int steps) {
  const auto rhs = [&](const Matrix& W) {
    const Matrix G = grad(W * W.transpose());
    return Matrix(-(G + G.transpose()) * W);
  };
  std::vector<Matrix> out{W0 * W0.transpose()};
  Matrix W = W0;
  for (int i = 0; i < steps; ++i) {
    const Matrix k1 = rhs(W);
    const Matrix k2 = rhs(W + h / 2 * k1);
    const Matrix k3 = rhs(W + h / 2 * k2);
    const Matrix k4 = rhs(W + h * k3);
    W += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    out.push_back(W * W.transpose());
  }
  return out;
}

/// Smallest Frobenius distance from W to any sampled candidate whose
/// smallest singular value is at most delta. Candidates are random
/// perturbations of W at several scales plus random rank-one deflations.
inline double random_search_low_sigma(const Matrix& W, double delta, int candidates,
                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = W.norm();
  double best = std::numeric_limits<double>::infinity();
  const Eigen::Index k = std::min(W.rows(), W.cols());
  for (int i = 0; i < candidates; ++i) {
    Matrix C;
    if (i % 2 == 0) {
      C = W + random_matrix(static_cast<int>(W.rows()), static_cast<int>(W.cols()), rng,
                            scale * std::pow(10.0, -3.0 * unit(rng)));
    } else {
      Vector x = random_matrix(static_cast<int>(W.rows()), 1, rng);
      Vector y = random_matrix(static_cast<int>(W.cols()), 1, rng);
      x.normalize();
      y.normalize();
      C = W - scale * unit(rng) * x * y.transpose();
    }
    Eigen::JacobiSVD<Matrix> svd(C);
    if (svd.singularValues()(k - 1) <= delta) best = std::min(best, (C - W).norm());
  }
  return best;
}

/// Nuclear norm of a 2x2 matrix: sigma_1 + sigma_2 = sqrt(||M||_F^2 + 2|det M|).
inline double nuclear_norm_2x2(const Matrix& M) {
  const double det = M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0);
  return std::sqrt(M.squaredNorm() + 2.0 * std::abs(det));
}

/// Minimizer of a unimodal scalar function: coarse grid, then golden section.
inline double grid_golden_min(const std::function<double(double)>& f, double lo, double hi,
                              int gridPoints = 2001) {
  double best = lo;
  double bestValue = f(lo);
  const double step = (hi - lo) / (gridPoints - 1);
  for (int i = 1; i < gridPoints; ++i) {
    const double x = lo + i * step;
    if (const double v = f(x); v < bestValue) {
      best = x;
      bestValue = v;
    }
  }
  double a = best - step;
  double b = best + step;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double c = b - phi * (b - a);
    const double d = a + phi * (b - a);
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
  }
  return 0.5 * (a + b);
}

/// Composite Gauss-Legendre (5-point) quadrature of f over [a, b].
inline double gauss_legendre(const std::function<double(double)>& f, double a, double b,
                             int panels) {
  static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                              0.9061798459386640};
  static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                              0.2369268850561891, 0.2369268850561891};
  const double hw = (b - a) / panels;
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * hw;
    for (int i = 0; i < 5; ++i) sum += w[i] * f(mid + 0.5 * hw * x[i]);
  }
  return 0.5 * hw * sum;
}

}  // namespace oracle
