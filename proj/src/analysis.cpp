#include "lnn/analysis.hpp"

#include "lnn/linalg.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace lnn {

Matrix SvdTrajectory::reconstruct(std::size_t i) const {
  return left.at(i) * sigma.at(i).asDiagonal() * right.at(i).transpose();
}

std::string BoundReport::to_json() const {
  nlohmann::json out;
  out["bound"] = boundValue;
  out["achieved"] = achievedValue;
  out["satisfied"] = satisfied;
  out["context"] = context;
  return out.dump(2);
}

SvdTrajectory track_svd(const Trajectory& trajectory) {
  if (trajectory.empty()) throw PreconditionError("track_svd: empty trajectory");
  SvdTrajectory out;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const Svd svd = gauged_svd(trajectory[i].endToEnd);
    out.times.push_back(trajectory[i].time);
    if (i == 0) {
      out.sigma.push_back(svd.sigma);
      out.left.push_back(svd.U);
      out.right.push_back(svd.V);
      continue;
    }
    const Vector& prev_sigma = out.sigma.back();
    const Matrix& prev_u = out.left.back();
    const Matrix& prev_v = out.right.back();
    const Eigen::Index k = svd.sigma.size();

    // Larger triplets claim their successors first; their directions are
    // the best conditioned.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return std::abs(prev_sigma(a)) > std::abs(prev_sigma(b));
    });

    const Matrix overlap_u = prev_u.transpose() * svd.U;
    const Matrix overlap_v = prev_v.transpose() * svd.V;
    std::vector<bool> taken(static_cast<std::size_t>(k), false);
    Vector sigma(k);
    Matrix U(svd.U.rows(), k);
    Matrix V(svd.V.rows(), k);
    for (Eigen::Index r : order) {
      Eigen::Index best = -1;
      double best_score = -1.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        if (taken[c]) continue;
        const double score = std::abs(overlap_u(r, c)) * std::abs(overlap_v(r, c));
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
      taken[best] = true;
      if (best_score < 0.5) {
        out.warnings.push_back("t=" + std::to_string(trajectory[i].time) + " triplet " +
                               std::to_string(r) + ": match score " + std::to_string(best_score));
      }
      double s = svd.sigma(best);
      Vector u = svd.U.col(best);
      Vector v = svd.V.col(best);
      if (overlap_u(r, best) < 0) {
        u = -u;
        s = -s;
      }
      if (prev_v.col(r).dot(v) < 0) {
        v = -v;
        s = -s;
      }
      sigma(r) = s;
      U.col(r) = u;
      V.col(r) = v;
    }
    out.sigma.push_back(std::move(sigma));
    out.left.push_back(std::move(U));
    out.right.push_back(std::move(V));
  }
  return out;
}

BoundReport verify_sigma_rates(const SvdTrajectory& svd, const LossSpec& spec, int n) {
  if (n < 1) throw InputError("verify_sigma_rates: depth must be >= 1");
  const std::size_t N = svd.size();
  if (N < 3) throw PreconditionError("verify_sigma_rates: need at least three samples");
  const int k = svd.rank_slots();
  const double exponent = 1.0 - 1.0 / n;

  double sigma_scale = 0.0;
  double min_span = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < N; ++i) {
    if (svd.sigma[i].size() > 0) sigma_scale = std::max(sigma_scale, svd.sigma[i].cwiseAbs().maxCoeff());
    if (i + 1 < N) min_span = std::min(min_span, svd.times[i + 1] - svd.times[i]);
  }

  // predicted[i][r] at interior samples.
  std::vector<Vector> predicted(N);
  double max_rate = 0.0;
  double worst_coarseness = 0.0;
  for (std::size_t i = 1; i + 1 < N; ++i) {
    const Matrix W = svd.reconstruct(i);
    const Matrix G = spec.gradient(W);
    const double span = svd.times[i + 1] - svd.times[i - 1];
    predicted[i].resize(k);
    for (int r = 0; r < k; ++r) {
      const double s = svd.sigma[i](r);
      const double align = -svd.left[i].col(r).dot(G * svd.right[i].col(r));
      const double rate = n * psd_pow(s * s, exponent) * align;
      predicted[i](r) = rate;
      max_rate = std::max(max_rate, std::abs(rate));
      // Vectors of numerically zero sigma span a null space and carry no rate.
      if (std::abs(s) <= 1e-12 * sigma_scale) continue;
      const double rotation = ((svd.left[i + 1].col(r) - svd.left[i - 1].col(r)).norm() +
                               (svd.right[i + 1].col(r) - svd.right[i - 1].col(r)).norm()) /
                              span;
      worst_coarseness = std::max(worst_coarseness, span * std::max(std::abs(rate / s), rotation));
    }
  }
  if (worst_coarseness > 1e-2) {
    throw PreconditionError("verify_sigma_rates: sampling too coarse (span / timescale = " +
                            std::to_string(worst_coarseness) + ")");
  }

  // Deviations below what roundoff in sigma can resolve over one
  // finite-difference span are ignored. Rates below 1e-3 of the largest are
  // compared in absolute terms.
  const double roundoff = 64.0 * std::numeric_limits<double>::epsilon() * sigma_scale / (2.0 * min_span);
  const double floor = std::max(1e-3 * max_rate, std::numeric_limits<double>::min());
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < N; ++i) {
    const double span = svd.times[i + 1] - svd.times[i - 1];
    for (int r = 0; r < k; ++r) {
      const double fd = (svd.sigma[i + 1](r) - svd.sigma[i - 1](r)) / span;
      const double dev = std::abs(fd - predicted[i](r));
      if (dev <= roundoff) continue;
      worst = std::max(worst, dev / std::max(std::abs(predicted[i](r)), floor));
    }
  }
  return {1e-2, worst, worst <= 1e-2, "sigma_rates n=" + std::to_string(n)};
}

double RateSchedule::at(double t) const {
  std::size_t i = 0;
  while (i + 1 < breaks.size() && breaks[i + 1] <= t) ++i;
  return values.at(i);
}

double RateSchedule::integral(double t) const {
  double total = 0.0;
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    const double lo = breaks[i];
    const double hi = i + 1 < breaks.size() ? breaks[i + 1] : std::numeric_limits<double>::infinity();
    if (t <= lo) break;
    total += values[i] * (std::min(t, hi) - lo);
  }
  return total;
}

std::optional<double> RateSchedule::time_to_integral(double target) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    const double lo = breaks[i];
    const bool last = i + 1 == breaks.size();
    const double hi = last ? std::numeric_limits<double>::infinity() : breaks[i + 1];
    const double v = values[i];
    if (v != 0.0) {
      const double dt = (target - acc) / v;
      if (dt >= 0.0 && dt <= hi - lo) return lo + dt;
    } else if (target == acc) {
      return lo;
    }
    if (last) break;
    acc += v * (hi - lo);
  }
  return std::nullopt;
}

SigmaSolution sigma_closed_form(double sigma0, const RateSchedule& g, int n, double t) {
  if (n < 2) throw InputError("sigma_closed_form: depth must be >= 2");
  if (g.breaks.empty() || g.breaks.size() != g.values.size() || g.breaks.front() != 0.0) {
    throw InputError("sigma_closed_form: malformed rate schedule");
  }
  if (sigma0 == 0.0) return {0.0, false, std::nullopt};
  // With g_n := n g the ODE reads d sigma/dt = (sigma^2)^{1-1/n} g_n.
  const double G = n * g.integral(t);
  if (n == 2) return {sigma0 > 0 ? sigma0 * std::exp(G) : sigma0 * std::exp(-G), false, std::nullopt};

  const double beta = 2.0 / n - 1.0;
  const double sign = sigma0 > 0 ? 1.0 : -1.0;
  const double start = std::pow(std::abs(sigma0), beta);
  // Positive sigma blows up when G reaches start / -beta, negative sigma
  // when G reaches -start / -beta.
  const double critical = sign * start / -beta;
  const double base = start + sign * beta * G;
  if (base <= 0.0) {
    return {sign * std::numeric_limits<double>::infinity(), true, g.time_to_integral(critical / n)};
  }
  return {sign * std::pow(base, 1.0 / beta), false, std::nullopt};
}

BoundReport check_det_sign(const Trajectory& trajectory) {
  if (trajectory.empty()) throw PreconditionError("check_det_sign: empty trajectory");
  auto sign_of = [](const TrajectoryRecord& rec) {
    if (!rec.determinant) throw PreconditionError("check_det_sign: end-to-end matrix is not square");
    const double d = *rec.determinant;
    if (std::abs(d) <= 1e-12) return 0;
    return d > 0 ? 1 : -1;
  };
  // Records at (numerical) zero are neutral: a determinant that decays
  // into the zero band and stays there is not a sign change.
  int flips = 0;
  int prev = 0;
  for (const auto& rec : trajectory) {
    const int s = sign_of(rec);
    if (s == 0) continue;
    if (prev != 0 && s != prev) ++flips;
    prev = s;
  }
  const int initial = sign_of(trajectory.front());
  return {0.0, static_cast<double>(flips), flips == 0,
          "det_sign initial=" + std::to_string(initial)};
}

double gf_convergence_time_bound(double phi0, double phiStar, double eps, double alpha,
                                 double delta, int n) {
  if (!(eps > 0.0) || !(alpha > 0.0) || !(delta > 0.0)) {
    throw InputError("gf_convergence_time_bound: eps, alpha and delta must be positive");
  }
  if (phi0 < phiStar) throw InputError("gf_convergence_time_bound: phi0 < phiStar");
  return std::log((phi0 - phiStar) / eps) / (2.0 * alpha * std::pow(delta, 2.0 * (n - 1) / n));
}

double DiscreteGdBounds::iterations_to_eps(double eps, double phi0, double stepSize) const {
  const int n = depth;
  return std::log(phi0 / eps) / (stepSize * std::pow(delta, 2.0 * (n - 1) / n));
}

DiscreteGdBounds discrete_gd_bounds(const Matrix& lambda_yx, double delta, int n) {
  if (!(delta > 0.0)) throw InputError("discrete_gd_bounds: delta must be positive");
  if (n < 2) throw InputError("discrete_gd_bounds: depth must be >= 2");
  const double norm = lambda_yx.norm();
  const double n3 = static_cast<double>(n) * n * n;
  DiscreteGdBounds out;
  out.delta = delta;
  out.depth = n;
  out.maxUnbalancedness = delta * delta / (256.0 * n3 * std::pow(norm, 2.0 * (n - 1) / n));
  out.maxStepSize = std::pow(delta, (4.0 * n - 2.0) / n) /
                    (6144.0 * n3 * std::pow(norm, (6.0 * n - 4.0) / n));
  return out;
}

double matrix_norm(const Matrix& W, NormKind norm) {
  switch (norm) {
    case NormKind::Frobenius:
      return W.norm();
    case NormKind::Nuclear:
      return nuclear_norm(W);
    case NormKind::Spectral:
      return spectral_norm(W);
  }
  return W.norm();
}

NormDivergenceConstants norm_divergence_constants(NormKind norm) {
  auto basis = [norm](int i, int j) {
    Matrix E = Matrix::Zero(2, 2);
    E(i, j) = 1.0;
    return matrix_norm(E, norm);
  };
  const double c = basis(0, 0) / std::sqrt(6.0);
  const double sum = basis(0, 0) + basis(0, 1) + basis(1, 0) + basis(1, 1);
  return {c, std::min(-std::sqrt(6.0) * c, -2.0 * sum)};
}

BoundReport norm_divergence_bound(const Trajectory& trajectory, const SensingTask& task,
                                  NormKind norm) {
  if (!(task == norm_divergence_task())) {
    throw PreconditionError("norm_divergence_bound: trajectory must come from the 2x2 divergence task");
  }
  if (trajectory.empty()) throw PreconditionError("norm_divergence_bound: empty trajectory");
  const auto& first = trajectory.front();
  if (!first.determinant || *first.determinant == 0.0) {
    throw PreconditionError("norm_divergence_bound: initial determinant must be nonzero");
  }
  const auto [c, c_prime] = norm_divergence_constants(norm);
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& rec : trajectory) {
    const double gap = rec.lossValue;  // l* = 0 on this task
    const double bound =
        gap > 0.0 ? c / std::sqrt(gap) + c_prime : std::numeric_limits<double>::infinity();
    worst = std::min(worst, matrix_norm(rec.endToEnd, norm) - bound);
  }
  const char* name = norm == NormKind::Frobenius ? "frobenius"
                     : norm == NormKind::Nuclear ? "nuclear"
                                                 : "spectral";
  return {0.0, worst, worst >= 0.0, std::string("norm_divergence min slack, ") + name};
}

Matrix min_nuclear_norm_solve(const SensingTask& task, double tol, int maxIters) {
  const Matrix M = task.measurement_matrix();
  const Vector b = task.targets();
  const Eigen::Index rows = task.dn();
  const Eigen::Index cols = task.d0();
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(M);
  const Vector start = cod.solve(b);
  const double inconsistency = (M * start - b).norm();
  if (inconsistency > 1e-8 * (1.0 + b.norm())) {
    throw InfeasibleError("min_nuclear_norm_solve: constraints are inconsistent (residual " +
                          std::to_string(inconsistency) + ")");
  }
  auto project = [&](const Matrix& X) -> Matrix {
    const Eigen::Map<const Vector> x(X.data(), X.size());
    const Vector y = x - cod.solve(M * x - b);
    return Eigen::Map<const Matrix>(y.data(), rows, cols);
  };
  auto shrink = [](const Matrix& X, double tau) -> Matrix {
    const Svd svd = gauged_svd(X);
    const Vector s = (svd.sigma.array() - tau).max(0.0).matrix();
    return svd.U * s.asDiagonal() * svd.V.transpose();
  };

  constexpr double rho = 1.0;
  Matrix Z = Eigen::Map<const Matrix>(start.data(), rows, cols);
  Matrix U = Matrix::Zero(rows, cols);
  Matrix W = Z;
  double primal = 0.0;
  double dual = 0.0;
  for (int it = 0; it < maxIters; ++it) {
    W = project(Z - U);
    const Matrix Z_prev = Z;
    Z = shrink(W + U, 1.0 / rho);
    U += W - Z;
    primal = (W - Z).norm();
    dual = rho * (Z - Z_prev).norm();
    if (primal <= tol && dual <= tol) return W;
  }
  throw ConvergenceError("min_nuclear_norm_solve: no convergence in " + std::to_string(maxIters) +
                             " iterations",
                         primal, dual);
}

int effective_rank(const Matrix& W, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InputError("effective_rank: threshold must lie in (0, 1)");
  }
  if (W.size() == 0) return 0;
  const Vector s = Eigen::JacobiSVD<Matrix>(W).singularValues();
  if (s(0) == 0.0) return 0;
  return static_cast<int>((s.array() >= threshold * s(0)).count());
}

}  // namespace lnn
