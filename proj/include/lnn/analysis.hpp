#pragma once

#include "lnn/dynamics.hpp"
#include "lnn/losses.hpp"
#include "lnn/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lnn {

/// Singular triplets of an end-to-end trajectory, matched for continuity
/// across consecutive samples. Signs are absorbed into sigma, which may
/// therefore be negative; triplets are not kept in descending order.
struct SvdTrajectory {
  std::vector<double> times;
  std::vector<Vector> sigma;
  std::vector<Matrix> left;   // d_n x k per time
  std::vector<Matrix> right;  // d_0 x k per time
  /// One entry per low-confidence match (score < 0.5).
  std::vector<std::string> warnings;

  std::size_t size() const { return times.size(); }
  int rank_slots() const { return sigma.empty() ? 0 : static_cast<int>(sigma.front().size()); }
  Matrix reconstruct(std::size_t i) const;
};

struct BoundReport {
  double boundValue = 0.0;
  double achievedValue = 0.0;
  bool satisfied = false;
  std::string context;

  std::string to_json() const;
};

SvdTrajectory track_svd(const Trajectory& trajectory);

/// Compares centered finite differences of each tracked sigma_r with
/// n (sigma_r^2)^{1-1/n} <-grad l(W), u_r v_r^T>. The achieved value is the
/// largest relative deviation, measured against max(|predicted|, 1e-3 times
/// the largest predicted rate); deviations at roundoff level are ignored.
/// Satisfied iff the achieved value is at most 1e-2.
///
/// Throws PreconditionError when fewer than three samples are given or when
/// the sampling is too coarse. The local timescale is the inverse of the
/// larger of |rate / sigma| and the rotation rate of the tracked singular
/// vectors; every finite-difference span must be at most 1e-2 of it. Near an
/// avoided crossing the vectors rotate fast, so this demands fine sampling.
BoundReport verify_sigma_rates(const SvdTrajectory& svd, const LossSpec& spec, int n);

/// Piecewise-constant rate g(t): value[i] on [breaks[i], breaks[i+1]), the
/// last value extending to infinity. breaks[0] must be 0.
struct RateSchedule {
  std::vector<double> breaks;
  std::vector<double> values;

  static RateSchedule constant(double c) { return {{0.0}, {c}}; }
  double at(double t) const;
  double integral(double t) const;
  /// Smallest t with integral(t) == target, if reached.
  std::optional<double> time_to_integral(double target) const;
};

struct SigmaSolution {
  double value = 0.0;
  bool blowUp = false;
  std::optional<double> blowUpTime;
};

/// Closed-form solution of d sigma/dt = n (sigma^2)^{1-1/n} g(t).
/// For n = 2 sigma grows exponentially; for n >= 3 it can reach infinity in
/// finite time, which is reported through `blowUp`.
SigmaSolution sigma_closed_form(double sigma0, const RateSchedule& g, int n, double t);

/// Achieved value counts sign changes of det W(t) between nonzero records
/// (|det| <= 1e-12 counts as zero and is skipped); satisfied iff there are
/// none.
BoundReport check_det_sign(const Trajectory& trajectory);

/// Flow time after which phi - phi* <= eps for an alpha-strongly convex loss
/// and deficiency margin delta: ln((phi0 - phiStar)/eps) / (2 alpha delta^{2(n-1)/n}).
double gf_convergence_time_bound(double phi0, double phiStar, double eps, double alpha,
                                 double delta, int n);

/// Constants under which gradient descent on a whitened square loss
/// provably reaches gap eps.
struct DiscreteGdBounds {
  double maxUnbalancedness = 0.0;
  double maxStepSize = 0.0;
  double delta = 0.0;
  int depth = 0;

  /// Iteration count (eta delta^{2(n-1)/n})^{-1} ln(phi0/eps).
  double iterations_to_eps(double eps, double phi0, double stepSize) const;
};

DiscreteGdBounds discrete_gd_bounds(const Matrix& lambda_yx, double delta, int n);

enum class NormKind { Frobenius, Nuclear, Spectral };

/// Checks ||W(t)|| >= c (l(W(t)) - l*)^{-1/2} + c' at every record of a run on
/// `norm_divergence_task()`, with c = ||e1 e1^T|| / sqrt(6) and
/// c' = min(-sqrt(6) c, -2 (||e1e1^T|| + ||e1e2^T|| + ||e2e1^T|| + ||e2e2^T||)).
/// Achieved value is the smallest slack ||W|| - bound; satisfied iff >= 0.
BoundReport norm_divergence_bound(const Trajectory& trajectory, const SensingTask& task,
                                  NormKind norm);

struct NormDivergenceConstants {
  double c;
  double cPrime;
};
NormDivergenceConstants norm_divergence_constants(NormKind norm);

double matrix_norm(const Matrix& W, NormKind norm);

/// argmin ||W||_* subject to <W, A_i> = b_i, by operator splitting with
/// fixed penalty 1.0 between the affine constraint set and singular-value
/// soft-thresholding.
Matrix min_nuclear_norm_solve(const SensingTask& task, double tol = 1e-8, int maxIters = 50000);

/// Number of singular values >= threshold * sigma_max(W).
int effective_rank(const Matrix& W, double threshold = 1e-3);

}  // namespace lnn
