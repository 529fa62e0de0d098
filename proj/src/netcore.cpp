#include "lnn/netcore.hpp"

#include "lnn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace lnn {

LayerDims::LayerDims(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 3) {
    throw ShapeError("LayerDims: need at least two layers (three widths)");
  }
  for (int d : dims_) {
    if (d <= 0) throw ShapeError("LayerDims: widths must be positive");
  }
  const int narrow = std::min(dims_.front(), dims_.back());
  for (std::size_t j = 1; j + 1 < dims_.size(); ++j) {
    if (dims_[j] < narrow) {
      throw ShapeError("LayerDims: hidden width " + std::to_string(dims_[j]) +
                       " constrains rank below min(d0, dn) = " + std::to_string(narrow));
    }
  }
}

LayerDims LayerDims::uniform(int in, int out, int hidden, int depth) {
  std::vector<int> d(static_cast<std::size_t>(depth) + 1, hidden);
  d.front() = in;
  d.back() = out;
  return LayerDims(std::move(d));
}

WeightStack::WeightStack(LayerDims dims, std::vector<Matrix> layers)
    : dims_(std::move(dims)), layers_(std::move(layers)) {
  if (static_cast<int>(layers_.size()) != dims_.depth()) {
    throw ShapeError("WeightStack: expected " + std::to_string(dims_.depth()) + " layers, got " +
                     std::to_string(layers_.size()));
  }
  for (int j = 1; j <= dims_.depth(); ++j) {
    const Matrix& W = layers_[j - 1];
    if (W.rows() != dims_[j] || W.cols() != dims_[j - 1]) {
      throw ShapeError("WeightStack: layer " + std::to_string(j) + " is " +
                       std::to_string(W.rows()) + "x" + std::to_string(W.cols()) + ", expected " +
                       std::to_string(dims_[j]) + "x" + std::to_string(dims_[j - 1]));
    }
  }
}

WeightStack WeightStack::zeros(const LayerDims& dims) {
  std::vector<Matrix> layers;
  for (int j = 1; j <= dims.depth(); ++j) layers.push_back(Matrix::Zero(dims[j], dims[j - 1]));
  return WeightStack(dims, std::move(layers));
}

double WeightStack::norm() const {
  double sq = 0.0;
  for (const auto& W : layers_) sq += W.squaredNorm();
  return std::sqrt(sq);
}

Matrix partial_product(const WeightStack& stack, int hi, int lo) {
  if (hi < lo) {
    const int d = stack.dims()[static_cast<std::size_t>(lo - 1)];
    return Matrix::Identity(d, d);
  }
  Matrix P = stack.layer(lo);
  for (int j = lo + 1; j <= hi; ++j) P = stack.layer(j) * P;
  return P;
}

EndToEndMatrix end_to_end(const WeightStack& stack) {
  return EndToEndMatrix(partial_product(stack, stack.depth(), 1));
}

std::vector<Matrix> balance_gaps(const WeightStack& stack) {
  std::vector<Matrix> gaps;
  for (int j = 1; j < stack.depth(); ++j) {
    const Matrix& lower = stack.layer(j);
    const Matrix& upper = stack.layer(j + 1);
    gaps.push_back(upper.transpose() * upper - lower * lower.transpose());
  }
  return gaps;
}

double unbalancedness_magnitude(const WeightStack& stack) {
  double worst = 0.0;
  for (const auto& gap : balance_gaps(stack)) worst = std::max(worst, gap.norm());
  return worst;
}

WeightStack balanced_factorize(const EndToEndMatrix& target, const LayerDims& dims) {
  const Matrix& M = target.matrix();
  if (M.rows() != dims.output() || M.cols() != dims.input()) {
    throw ShapeError("balanced_factorize: target is " + std::to_string(M.rows()) + "x" +
                     std::to_string(M.cols()) + ", dims expect " + std::to_string(dims.output()) +
                     "x" + std::to_string(dims.input()));
  }
  const int n = dims.depth();
  const Svd svd = gauged_svd(M);
  const Eigen::Index k = svd.sigma.size();
  Vector root(k);
  for (Eigen::Index r = 0; r < k; ++r) root(r) = std::pow(svd.sigma(r), 1.0 / n);

  std::vector<Matrix> layers;
  for (int j = 1; j <= n; ++j) {
    Matrix W = Matrix::Zero(dims[j], dims[j - 1]);
    if (j == 1) {
      W.topRows(k) = root.asDiagonal() * svd.V.transpose();
    } else if (j == n) {
      W.leftCols(k) = svd.U * root.asDiagonal();
    } else {
      W.topLeftCorner(k, k) = root.asDiagonal();
    }
    layers.push_back(std::move(W));
  }
  return WeightStack(dims, std::move(layers));
}

WeightStack random_near_zero_stack(const LayerDims& dims, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Matrix> layers;
  for (int j = 1; j <= dims.depth(); ++j) {
    Matrix W(dims[j], dims[j - 1]);
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = scale * normal(rng);
    layers.push_back(std::move(W));
  }
  return WeightStack(dims, std::move(layers));
}

WeightStack balance_project(const WeightStack& stack) {
  return balanced_factorize(end_to_end(stack), stack.dims());
}

WeightStack saddle_witness(double loss_at_w, double loss_at_zero, const Matrix& W,
                           const LayerDims& dims) {
  if (W.rows() != dims.output() || W.cols() != dims.input()) {
    throw ShapeError("saddle_witness: W does not match the network's input/output widths");
  }
  const double eps = W.norm();
  if (eps == 0.0) throw DegenerateInputError("saddle_witness: W must be nonzero");
  if (!(loss_at_w < loss_at_zero)) {
    throw InputError("saddle_witness: W must strictly improve on the loss at the origin");
  }
  const int n = dims.depth();
  const double root = std::pow(eps, 1.0 / n);
  const Matrix scaled = std::pow(eps, -1.0 + 1.0 / n) * W;
  const int dn = dims.output();
  const int d0 = dims.input();

  std::vector<Matrix> layers;
  for (int j = 1; j <= n; ++j) layers.push_back(Matrix::Zero(dims[j], dims[j - 1]));
  if (d0 >= dn) {
    layers[0].topRows(dn) = scaled;
    for (int j = 2; j <= n; ++j) layers[j - 1].topLeftCorner(dn, dn) = root * Matrix::Identity(dn, dn);
  } else {
    layers[n - 1].leftCols(d0) = scaled;
    for (int j = 1; j < n; ++j) layers[j - 1].topLeftCorner(d0, d0) = root * Matrix::Identity(d0, d0);
  }
  return WeightStack(dims, std::move(layers));
}

}  // namespace lnn
