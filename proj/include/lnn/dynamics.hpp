#pragma once

#include "lnn/losses.hpp"
#include "lnn/netcore.hpp"
#include "lnn/types.hpp"

#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace lnn {

enum class Method { Euler, Rk4 };

struct FlowConfig {
  Method method = Method::Rk4;
  double stepSize = 1e-3;
  double maxTime = 1.0;
  /// Stop once l - l* drops to this value; 0 disables early stopping.
  double stopLossDelta = 0.0;
  int recordEvery = 1;
  /// A step that raises the loss by more than 1e-9 (relative to max(1, l))
  /// is redone as two half steps, recursively up to this depth.
  int maxHalvings = 20;
};

/// Snapshot of a run. `time` is flow time, or the iteration index for
/// discrete methods.
struct TrajectoryRecord {
  double time = 0.0;
  double lossValue = 0.0;
  Matrix endToEnd;
  double unbalancedness = 0.0;
  std::optional<double> determinant;
  double frobeniusNorm = 0.0;
  double nuclearNorm = 0.0;

  /// Fills the derived fields (determinant when square, norms) from W.
  static TrajectoryRecord make(double time, double loss, Matrix W, double unbalancedness);
};

using Trajectory = std::vector<TrajectoryRecord>;

/// Raised when an entry becomes non-finite or exceeds 1e12 in magnitude.
/// `partial` holds every record taken before the blow-up.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, Trajectory records)
      : Error(what), partial(std::move(records)) {}
  Trajectory partial;
};

/// Observer called with (time, stack) at every recorded point.
using StackObserver = std::function<void(double, const WeightStack&)>;

/// Gradients of phi(W_1..W_n) = l(W_n...W_1) with respect to each layer:
/// W_{n:j+1}^T grad l(W_{n:1}) W_{j-1:1}^T.
std::vector<Matrix> phi_gradient(const WeightStack& stack, const LossSpec& spec);

/// Gradient flow over all layers jointly.
Trajectory run_gradient_flow(const WeightStack& stack0, const LossSpec& spec, const FlowConfig& cfg,
                             const StackObserver& observe = {});

/// Plain gradient descent over all layers; records every `recordEvery`
/// iterations plus the last one.
Trajectory run_gradient_descent(const WeightStack& stack0, const LossSpec& spec, double stepSize,
                                int maxIters, double stopLossDelta, int recordEvery = 1,
                                const StackObserver& observe = {});

/// Eigen-structure of the end-to-end preconditioner P(W) acting on
/// vec(G) (column-first): eigenvector u_r v_c^T has eigenvalue
/// sum_j sigma_r^{2(n-j)/n} sigma_c^{2(j-1)/n}, where sigma_r is taken as 0
/// beyond min(d_0, d_n) and a zero exponent yields 1.
struct PreconditionerSpectrum {
  Vector eigenvalues;
  /// (r, c) per eigenvalue: column r of U and column c of V.
  std::vector<std::pair<int, int>> pairs;
  Matrix U;  // d_n x d_n
  Matrix V;  // d_0 x d_0

  Matrix eigenvector(std::size_t i) const;
};

PreconditionerSpectrum preconditioner_spectrum(const Matrix& W, int n);

/// sum_{j=1}^n [W W^T]^{(j-1)/n} G [W^T W]^{(n-j)/n}.
Matrix apply_preconditioned_gradient(const Matrix& W, const Matrix& G, int n);

/// Integrates dW/dt = -P(W) grad l(W). n = 1 is plain gradient flow on l.
Trajectory run_end_to_end_flow(const Matrix& W0, const LossSpec& spec, int n,
                               const FlowConfig& cfg);

/// Same flow as run_end_to_end_flow, integrated in singular-value
/// coordinates W = U diag(s) V^T with |s_r| stored in log scale. Singular
/// values can therefore never cross zero, which keeps det W exact in sign
/// when it decays far below the truncation error of the entries. Requires
/// a square W0 with distinct nonzero singular values; the determinant field
/// of each record is computed from the factors.
Trajectory run_end_to_end_flow_spectral(const Matrix& W0, const LossSpec& spec, int n,
                                        const FlowConfig& cfg);

/// Iterates W <- W - zeta P(W) grad l(W).
Trajectory run_discretized_e2e(const Matrix& W0, const LossSpec& spec, int n, double zeta,
                               int maxIters, double stopLossDelta, int recordEvery = 1);

/// End-to-end right-hand side for a single output (W = w^T a row vector):
/// -||w||^{2(n-1)/n} (grad + (n-1) <w_hat, grad> w_hat).
Vector single_output_rhs(const Vector& w, const Vector& grad, int n);

/// Two-layer symmetric network x -> W W^T x. Integrates the lifted
/// dynamics of W_s = W W^T directly:
/// dW_s/dt = -(G + G^T) W_s - W_s (G + G^T), G = grad l_s(W_s).
Trajectory run_symmetric_flow(const Matrix& W0, const LossSpec& spec, const FlowConfig& cfg);

}  // namespace lnn
