#pragma once

#include "lnn/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lnn {

/// Regression data with training instances and labels stored as columns.
struct RegressionData {
  RegressionData(Matrix X, Matrix Y);

  Matrix X;  // d_0 x m
  Matrix Y;  // d_n x m
  int samples() const { return static_cast<int>(X.cols()); }
  Matrix instance_covariance() const { return X * X.transpose() / samples(); }
  Matrix cross_covariance() const { return Y * X.transpose() / samples(); }
};

struct Measurement {
  Matrix A;
  double b = 0.0;
};

/// Linear measurements <W, A_i> = b_i of an unknown d_n x d_0 matrix.
class SensingTask {
 public:
  SensingTask(int d0, int dn, std::vector<Measurement> measurements);

  int d0() const { return d0_; }
  int dn() const { return dn_; }
  int size() const { return static_cast<int>(measurements_.size()); }
  const std::vector<Measurement>& measurements() const { return measurements_; }

  /// m x (d_0 d_n) matrix whose rows are vec(A_i) in column-first order.
  Matrix measurement_matrix() const;
  Vector targets() const;
  /// True when the vec(A_i) are linearly independent.
  bool independent() const;

  std::string to_json() const;
  static SensingTask from_json(const std::string& text);

  friend bool operator==(const SensingTask& a, const SensingTask& b);

 private:
  int d0_;
  int dn_;
  std::vector<Measurement> measurements_;
};

/// A differentiable convex loss over d_n x d_0 matrices.
///
/// Kinds: whitened square 1/2||W - Lambda_yx||_F^2 (constant term dropped),
/// square 1/(2m)||WX - Y||_F^2, l_p 1/m sum_i ||W x_i - y_i||_p^p, and matrix
/// sensing 1/(2m) sum_i (<W, A_i> - b_i)^2. The global minimum and one
/// minimizer are computed once at construction.
class LossSpec {
 public:
  enum class Kind { WhitenedSquare, Square, Lp, Sensing };

  struct Whitened {
    Matrix target;
  };
  struct Square {
    RegressionData data;
  };
  struct Lp {
    RegressionData data;
    int p;
  };
  struct Sensing {
    SensingTask task;
  };

  static LossSpec whitened_square(Matrix target);
  static LossSpec square(RegressionData data);
  /// p must be 2 or an even integer >= 4.
  static LossSpec lp(RegressionData data, int p);
  static LossSpec sensing(SensingTask task);

  Kind kind() const;
  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double value(const Matrix& W) const;
  Matrix gradient(const Matrix& W) const;

  /// l* = inf_W l(W).
  double optimal_value() const { return optimal_; }
  const Matrix& minimizer() const { return minimizer_; }

  const std::variant<Whitened, Square, Lp, Sensing>& params() const { return params_; }

 private:
  explicit LossSpec(std::variant<Whitened, Square, Lp, Sensing> params);
  void check_shape(const Matrix& W) const;

  std::variant<Whitened, Square, Lp, Sensing> params_;
  int rows_ = 0;
  int cols_ = 0;
  Matrix minimizer_;
  double optimal_ = 0.0;
};

double loss_value(const LossSpec& spec, const Matrix& W);
Matrix loss_gradient(const LossSpec& spec, const Matrix& W);

/// Largest delta with ||W - Lambda||_F < sigma_min(Lambda) - delta, if any.
std::optional<double> deficiency_margin_whitened(const Matrix& W, const Matrix& lambda_yx);

/// Monte-Carlo falsifier for "W has deficiency margin delta": returns false
/// as soon as some W' with sigma_min(W') <= delta satisfies l(W') <= l(W).
/// A true result only means no counterexample was found.
bool deficiency_margin_generic(const LossSpec& spec, const Matrix& W, double delta, int samples,
                               std::uint64_t seed);

struct LowSigmaProjection {
  double distance;
  Matrix witness;
};

/// Nearest matrix (Frobenius) whose smallest singular value is <= delta.
LowSigmaProjection distance_to_low_sigma(const Matrix& W, double delta);

/// alpha such that the loss is alpha-strongly convex, when one exists.
std::optional<double> strong_convexity_constant(const LossSpec& spec);

using Entry = std::pair<int, int>;

/// Matrix completion as sensing: one measurement A = e_i e_j^T per observed
/// entry, b = ground_truth(i, j) plus Gaussian noise of standard deviation
/// `noise`.
SensingTask make_completion_task(const Matrix& ground_truth, const std::vector<Entry>& observed,
                                 double noise = 0.0, std::uint64_t seed = 0);

/// `count` distinct entries of a rows x cols matrix, sampled without
/// replacement.
std::vector<Entry> random_entries(int rows, int cols, int count, std::uint64_t seed);

/// Three-measurement 2x2 task observing w_12 = 1, w_21 = 1, w_22 = 0, under
/// which every zero-loss solution forces w_11 to infinity as det stays
/// positive.
SensingTask norm_divergence_task();

}  // namespace lnn
