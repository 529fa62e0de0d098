#pragma once

#include "lnn/types.hpp"

#include <cstdint>
#include <vector>

namespace lnn {

/// Layer widths d_0 (input), d_1, ..., d_n (output) of a linear network.
///
/// Requires n >= 2 and every hidden width at least min(d_0, d_n), so the
/// network can express any linear map of its input/output shape.
class LayerDims {
 public:
  explicit LayerDims(std::vector<int> dims);

  /// Uniform-width network: d_0 = in, d_n = out, every hidden width `hidden`.
  static LayerDims uniform(int in, int out, int hidden, int depth);

  int depth() const { return static_cast<int>(dims_.size()) - 1; }
  int input() const { return dims_.front(); }
  int output() const { return dims_.back(); }
  int operator[](std::size_t j) const { return dims_[j]; }
  const std::vector<int>& values() const { return dims_; }

  friend bool operator==(const LayerDims&, const LayerDims&) = default;

 private:
  std::vector<int> dims_;
};

/// Ordered weight matrices W_1 ... W_n; layer j maps R^{d_{j-1}} to R^{d_j}.
class WeightStack {
 public:
  /// `layers[0]` is W_1. Throws ShapeError unless the shapes chain.
  WeightStack(LayerDims dims, std::vector<Matrix> layers);

  static WeightStack zeros(const LayerDims& dims);

  const LayerDims& dims() const { return dims_; }
  int depth() const { return dims_.depth(); }
  /// 1-based layer access, matching W_1 ... W_n.
  const Matrix& layer(int j) const { return layers_[j - 1]; }
  const std::vector<Matrix>& layers() const { return layers_; }

  /// Frobenius norm of the concatenation of all layers.
  double norm() const;

 private:
  LayerDims dims_;
  std::vector<Matrix> layers_;
};

/// The product W_n ... W_1 of a stack.
class EndToEndMatrix {
 public:
  explicit EndToEndMatrix(Matrix m) : m_(std::move(m)) {}
  const Matrix& matrix() const { return m_; }
  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index cols() const { return m_.cols(); }

 private:
  Matrix m_;
};

/// W_{hi:lo} = W_hi ... W_lo (1-based, inclusive). An empty range (hi < lo)
/// yields the identity of size d_{lo-1}.
Matrix partial_product(const WeightStack& stack, int hi, int lo);

EndToEndMatrix end_to_end(const WeightStack& stack);

/// max_j ||W_{j+1}^T W_{j+1} - W_j W_j^T||_F over adjacent layer pairs.
double unbalancedness_magnitude(const WeightStack& stack);

/// Per-pair matrices W_{j+1}^T W_{j+1} - W_j W_j^T, j = 1 .. n-1.
std::vector<Matrix> balance_gaps(const WeightStack& stack);

/// Balanced stack with the given product: the singular values of `target`
/// are split evenly (S^{1/n}) across layers and padded with zeros.
WeightStack balanced_factorize(const EndToEndMatrix& target, const LayerDims& dims);

/// I.i.d. Gaussian entries with standard deviation `scale`.
WeightStack random_near_zero_stack(const LayerDims& dims, double scale, std::uint64_t seed);

/// Re-factorizes the stack's own product into a balanced stack.
WeightStack balance_project(const WeightStack& stack);

/// Stack whose product is W and whose weights shrink like ||W||^{1/n}.
///
/// When d_0 >= d_n, W_1 carries ||W||^{-1+1/n} W in its top d_n rows and
/// W_2..W_n carry ||W||^{1/n} I_{d_n} in their top-left blocks; the d_0 < d_n
/// case mirrors this through W_n. The stack norm is
/// ||W||^{1/n} sqrt(1 + (n-1) min(d_0, d_n)).
///
/// Requires loss_at_w < loss_at_zero (the witness shows the origin is not a
/// local minimum of the overparameterized objective).
WeightStack saddle_witness(double loss_at_w, double loss_at_zero, const Matrix& W,
                           const LayerDims& dims);

}  // namespace lnn
