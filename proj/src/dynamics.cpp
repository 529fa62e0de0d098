#include "lnn/dynamics.hpp"

#include "lnn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace lnn {

namespace {

using State = std::vector<Matrix>;

// Squared singular values padded with zeros to `size`. Values below the
// numerical rank cutoff 1e-13 sigma_max count as exact zeros so that
// fractional powers do not amplify roundoff.
Vector padded_sigma_sq(const Vector& sigma, Eigen::Index size) {
  Vector out = Vector::Zero(size);
  const double cutoff = sigma.size() > 0 ? 1e-13 * sigma(0) : 0.0;
  for (Eigen::Index r = 0; r < sigma.size(); ++r) {
    if (sigma(r) > cutoff) out(r) = sigma(r) * sigma(r);
  }
  return out;
}

constexpr double kDivergenceLimit = 1e12;

State axpy(const State& x, double a, const State& y) {
  State out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * y[i];
  return out;
}

bool finite_and_bounded(const State& x) {
  for (const auto& M : x) {
    if (!M.allFinite()) return false;
    if (M.size() > 0 && M.cwiseAbs().maxCoeff() > kDivergenceLimit) return false;
  }
  return true;
}

struct OdeProblem {
  std::function<State(const State&)> rhs;
  std::function<double(const State&)> loss;
  std::function<TrajectoryRecord(double, const State&, double)> record;
  std::function<void(double, const State&)> observe;
  // Applied after every accepted step (e.g. re-orthonormalization).
  std::function<void(State&)> project;
  double optimal = 0.0;
};

State step(const OdeProblem& ode, Method method, const State& x, double h) {
  const State k1 = ode.rhs(x);
  if (method == Method::Euler) return axpy(x, h, k1);
  const State k2 = ode.rhs(axpy(x, 0.5 * h, k1));
  const State k3 = ode.rhs(axpy(x, 0.5 * h, k2));
  const State k4 = ode.rhs(axpy(x, h, k3));
  State out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

// One step of size h; a step that raises the loss is replaced by two half
// steps, so the macro time grid never changes.
std::pair<State, double> advance(const OdeProblem& ode, const FlowConfig& cfg, const State& x,
                                 double loss, double h, int depth) {
  State next = step(ode, cfg.method, x, h);
  if (ode.project && finite_and_bounded(next)) ode.project(next);
  const double next_loss = finite_and_bounded(next) ? ode.loss(next) : HUGE_VAL;
  const bool increased =
      !std::isfinite(next_loss) || next_loss > loss + 1e-9 * std::max(1.0, std::abs(loss));
  if (!increased || depth >= cfg.maxHalvings) return {std::move(next), next_loss};
  auto [mid, mid_loss] = advance(ode, cfg, x, loss, 0.5 * h, depth + 1);
  if (!std::isfinite(mid_loss)) return {std::move(mid), mid_loss};
  return advance(ode, cfg, mid, mid_loss, 0.5 * h, depth + 1);
}

Trajectory integrate(State x, const OdeProblem& ode, const FlowConfig& cfg) {
  if (!(cfg.stepSize > 0.0)) throw InputError("FlowConfig: stepSize must be positive");
  if (!(cfg.maxTime >= 0.0)) throw InputError("FlowConfig: maxTime must be non-negative");
  if (cfg.recordEvery <= 0) throw InputError("FlowConfig: recordEvery must be positive");

  Trajectory records;
  double loss = ode.loss(x);
  auto take = [&](double t) {
    records.push_back(ode.record(t, x, loss));
    if (ode.observe) ode.observe(t, x);
  };
  take(0.0);
  const auto steps = static_cast<long long>(std::llround(cfg.maxTime / cfg.stepSize));
  for (long long s = 1; s <= steps; ++s) {
    if (cfg.stopLossDelta > 0.0 && loss - ode.optimal <= cfg.stopLossDelta) break;
    auto [next, next_loss] = advance(ode, cfg, x, loss, cfg.stepSize, 0);
    if (!finite_and_bounded(next) || !std::isfinite(next_loss)) {
      throw DivergenceError("flow diverged at t = " + std::to_string(s * cfg.stepSize),
                            std::move(records));
    }
    x = std::move(next);
    loss = next_loss;
    const bool stop = cfg.stopLossDelta > 0.0 && loss - ode.optimal <= cfg.stopLossDelta;
    if (s % cfg.recordEvery == 0 || s == steps || stop) take(static_cast<double>(s) * cfg.stepSize);
  }
  return records;
}

// Discrete iteration x <- x + update(x); time is the iteration index.
Trajectory iterate(State x, const OdeProblem& ode, int maxIters, double stopLossDelta,
                   int recordEvery) {
  if (maxIters < 0) throw InputError("maxIters must be non-negative");
  if (recordEvery <= 0) throw InputError("recordEvery must be positive");
  Trajectory records;
  double loss = ode.loss(x);
  auto take = [&](int it) {
    records.push_back(ode.record(it, x, loss));
    if (ode.observe) ode.observe(it, x);
  };
  take(0);
  for (int it = 1; it <= maxIters; ++it) {
    if (stopLossDelta > 0.0 && loss - ode.optimal <= stopLossDelta) break;
    State update = ode.rhs(x);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += update[i];
    if (!finite_and_bounded(x)) {
      throw DivergenceError("iteration diverged at step " + std::to_string(it), std::move(records));
    }
    loss = ode.loss(x);
    const bool stop = stopLossDelta > 0.0 && loss - ode.optimal <= stopLossDelta;
    if (it % recordEvery == 0 || it == maxIters || stop) take(it);
  }
  return records;
}

Matrix chain_product(const State& layers) {
  Matrix P = layers.front();
  for (std::size_t j = 1; j < layers.size(); ++j) P = layers[j] * P;
  return P;
}

OdeProblem stack_problem(const WeightStack& stack0, const LossSpec& spec, double direction,
                         const StackObserver& observe) {
  const LayerDims dims = stack0.dims();
  if (dims.output() != spec.rows() || dims.input() != spec.cols()) {
    throw ShapeError("network widths do not match the loss dimensions");
  }
  OdeProblem ode;
  ode.optimal = spec.optimal_value();
  ode.rhs = [&spec, dims, direction](const State& x) {
    auto grads = phi_gradient(WeightStack(dims, x), spec);
    for (auto& g : grads) g *= direction;
    return grads;
  };
  ode.loss = [&spec](const State& x) { return spec.value(chain_product(x)); };
  ode.record = [dims](double t, const State& x, double loss) {
    const WeightStack stack(dims, x);
    return TrajectoryRecord::make(t, loss, end_to_end(stack).matrix(),
                                  unbalancedness_magnitude(stack));
  };
  if (observe) {
    ode.observe = [dims, observe](double t, const State& x) { observe(t, WeightStack(dims, x)); };
  }
  return ode;
}

OdeProblem e2e_problem(const LossSpec& spec, int n, double direction) {
  if (n < 1) throw InputError("end-to-end dynamics: depth must be >= 1");
  OdeProblem ode;
  ode.optimal = spec.optimal_value();
  ode.rhs = [&spec, n, direction](const State& x) {
    return State{direction * apply_preconditioned_gradient(x[0], spec.gradient(x[0]), n)};
  };
  ode.loss = [&spec](const State& x) { return spec.value(x[0]); };
  ode.record = [](double t, const State& x, double loss) {
    return TrajectoryRecord::make(t, loss, x[0], 0.0);
  };
  return ode;
}

Matrix nearest_orthogonal(const Matrix& A) {
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

// Spectral state: {U, V, tau, sign} with W = U diag(sign * exp(tau)) V^T.
Matrix spectral_matrix(const State& x) {
  const Vector s = x[3].col(0).cwiseProduct(x[2].col(0).array().exp().matrix());
  return x[0] * s.asDiagonal() * x[1].transpose();
}

}  // namespace

TrajectoryRecord TrajectoryRecord::make(double time, double loss, Matrix W, double unbalancedness) {
  TrajectoryRecord rec;
  rec.time = time;
  rec.lossValue = loss;
  rec.unbalancedness = unbalancedness;
  if (W.rows() == W.cols()) rec.determinant = W.determinant();
  rec.frobeniusNorm = W.norm();
  rec.nuclearNorm = nuclear_norm(W);
  rec.endToEnd = std::move(W);
  return rec;
}

std::vector<Matrix> phi_gradient(const WeightStack& stack, const LossSpec& spec) {
  const int n = stack.depth();
  // below[j] = W_{j:1} (below[0] = I), above[j] = W_{n:j+1} (above[n] = I).
  std::vector<Matrix> below(static_cast<std::size_t>(n) + 1);
  std::vector<Matrix> above(static_cast<std::size_t>(n) + 1);
  below[0] = Matrix::Identity(stack.dims().input(), stack.dims().input());
  for (int j = 1; j <= n; ++j) below[j] = stack.layer(j) * below[j - 1];
  above[n] = Matrix::Identity(stack.dims().output(), stack.dims().output());
  for (int j = n - 1; j >= 0; --j) above[j] = above[j + 1] * stack.layer(j + 1);

  const Matrix G = spec.gradient(below[n]);
  std::vector<Matrix> grads;
  grads.reserve(n);
  for (int j = 1; j <= n; ++j) grads.push_back(above[j].transpose() * G * below[j - 1].transpose());
  return grads;
}

Trajectory run_gradient_flow(const WeightStack& stack0, const LossSpec& spec, const FlowConfig& cfg,
                             const StackObserver& observe) {
  return integrate(stack0.layers(), stack_problem(stack0, spec, -1.0, observe), cfg);
}

Trajectory run_gradient_descent(const WeightStack& stack0, const LossSpec& spec, double stepSize,
                                int maxIters, double stopLossDelta, int recordEvery,
                                const StackObserver& observe) {
  if (!(stepSize > 0.0)) throw InputError("run_gradient_descent: stepSize must be positive");
  return iterate(stack0.layers(), stack_problem(stack0, spec, -stepSize, observe), maxIters,
                 stopLossDelta, recordEvery);
}

Matrix PreconditionerSpectrum::eigenvector(std::size_t i) const {
  const auto [r, c] = pairs.at(i);
  return U.col(r) * V.col(c).transpose();
}

PreconditionerSpectrum preconditioner_spectrum(const Matrix& W, int n) {
  if (n < 1) throw InputError("preconditioner_spectrum: depth must be >= 1");
  const Svd svd = gauged_svd(W, /*full=*/true);
  const auto dn = static_cast<int>(W.rows());
  const auto d0 = static_cast<int>(W.cols());
  const Vector sq = padded_sigma_sq(svd.sigma, std::max(dn, d0));
  auto sigma_sq = [&](int r) { return sq(r); };

  PreconditionerSpectrum out;
  out.U = svd.U;
  out.V = svd.V;
  out.eigenvalues.resize(static_cast<Eigen::Index>(dn) * d0);
  Eigen::Index idx = 0;
  for (int c = 0; c < d0; ++c) {
    for (int r = 0; r < dn; ++r) {
      double sum = 0.0;
      for (int j = 1; j <= n; ++j) {
        sum += psd_pow(sigma_sq(r), static_cast<double>(n - j) / n) *
               psd_pow(sigma_sq(c), static_cast<double>(j - 1) / n);
      }
      out.eigenvalues(idx++) = sum;
      out.pairs.emplace_back(r, c);
    }
  }
  return out;
}

Matrix apply_preconditioned_gradient(const Matrix& W, const Matrix& G, int n) {
  if (n < 1) throw InputError("apply_preconditioned_gradient: depth must be >= 1");
  if (G.rows() != W.rows() || G.cols() != W.cols()) {
    throw ShapeError("apply_preconditioned_gradient: G and W shapes differ");
  }
  if (n == 1) return G;
  // W W^T = U diag(lambda) U^T and W^T W = V diag(mu) V^T share the singular
  // values of W, so each term is diagonal in the (U, V) basis.
  const Svd svd = gauged_svd(W, /*full=*/true);
  const Eigen::Index dn = W.rows();
  const Eigen::Index d0 = W.cols();
  const Vector sq = padded_sigma_sq(svd.sigma, std::max(dn, d0));
  auto sigma_sq = [&](Eigen::Index r) { return sq(r); };
  Matrix H = svd.U.transpose() * G * svd.V;
  for (Eigen::Index c = 0; c < d0; ++c) {
    for (Eigen::Index r = 0; r < dn; ++r) {
      double weight = 0.0;
      for (int j = 1; j <= n; ++j) {
        weight += psd_pow(sigma_sq(r), static_cast<double>(j - 1) / n) *
                  psd_pow(sigma_sq(c), static_cast<double>(n - j) / n);
      }
      H(r, c) *= weight;
    }
  }
  return svd.U * H * svd.V.transpose();
}

Trajectory run_end_to_end_flow(const Matrix& W0, const LossSpec& spec, int n,
                               const FlowConfig& cfg) {
  return integrate(State{W0}, e2e_problem(spec, n, -1.0), cfg);
}

Trajectory run_end_to_end_flow_spectral(const Matrix& W0, const LossSpec& spec, int n,
                                        const FlowConfig& cfg) {
  if (n < 1) throw InputError("end-to-end dynamics: depth must be >= 1");
  if (W0.rows() != W0.cols()) throw ShapeError("spectral flow: W0 must be square");
  if (spec.rows() != W0.rows() || spec.cols() != W0.cols()) {
    throw ShapeError("spectral flow: loss dimensions do not match W0");
  }
  const Eigen::Index d = W0.rows();
  const Svd svd = gauged_svd(W0, /*full=*/true);
  for (Eigen::Index r = 0; r < d; ++r) {
    if (!(svd.sigma(r) > 0.0)) throw PreconditionError("spectral flow: W0 must be nonsingular");
    if (r > 0 && svd.sigma(r) >= svd.sigma(r - 1) * (1.0 - 1e-9)) {
      throw PreconditionError("spectral flow: W0 must have distinct singular values");
    }
  }
  // Fold det(U) det(V) into the sign of the last singular value so that both
  // factors are rotations and det W = prod(sign) exp(sum tau).
  Matrix U = svd.U;
  Matrix V = svd.V;
  Matrix sign = Matrix::Ones(d, 1);
  if (U.determinant() < 0.0) {
    U.col(d - 1) *= -1.0;
    sign(d - 1, 0) *= -1.0;
  }
  if (V.determinant() < 0.0) {
    V.col(d - 1) *= -1.0;
    sign(d - 1, 0) *= -1.0;
  }
  const Matrix tau = svd.sigma.array().log().matrix();

  OdeProblem ode;
  ode.optimal = spec.optimal_value();
  ode.rhs = [&spec, n, d](const State& x) {
    const Vector a = x[2].col(0).array().exp().matrix();
    const Vector s = x[3].col(0).cwiseProduct(a);
    const Matrix H = x[0].transpose() * spec.gradient(spectral_matrix(x)) * x[1];
    // M = U^T dW/dt V in the rotating frame.
    Matrix M(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index r = 0; r < d; ++r) {
        double weight = 0.0;
        for (int j = 1; j <= n; ++j) {
          weight += std::pow(a(r), 2.0 * (j - 1) / n) * std::pow(a(c), 2.0 * (n - j) / n);
        }
        M(r, c) = -weight * H(r, c);
      }
    }
    Matrix dtau(d, 1);
    for (Eigen::Index r = 0; r < d; ++r) dtau(r, 0) = M(r, r) / s(r);
    // Off-diagonal: M_rc = x s_c - s_r y, M_cr = s_c y - x s_r with
    // x = (U^T dU)_rc and y = (V^T dV)_rc.
    Matrix omegaU = Matrix::Zero(d, d);
    Matrix omegaV = Matrix::Zero(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = r + 1; c < d; ++c) {
        const double gap = s(c) * s(c) - s(r) * s(r);
        const double xu = (M(r, c) * s(c) + M(c, r) * s(r)) / gap;
        const double yv = (M(r, c) * s(r) + M(c, r) * s(c)) / gap;
        omegaU(r, c) = xu;
        omegaU(c, r) = -xu;
        omegaV(r, c) = yv;
        omegaV(c, r) = -yv;
      }
    }
    return State{x[0] * omegaU, x[1] * omegaV, dtau, Matrix::Zero(d, 1)};
  };
  ode.project = [](State& x) {
    x[0] = nearest_orthogonal(x[0]);
    x[1] = nearest_orthogonal(x[1]);
  };
  ode.loss = [&spec](const State& x) { return spec.value(spectral_matrix(x)); };
  ode.record = [](double t, const State& x, double loss) {
    TrajectoryRecord rec = TrajectoryRecord::make(t, loss, spectral_matrix(x), 0.0);
    rec.determinant = x[3].col(0).prod() * std::exp(x[2].sum());
    return rec;
  };
  return integrate(State{U, V, tau, sign}, ode, cfg);
}

Trajectory run_discretized_e2e(const Matrix& W0, const LossSpec& spec, int n, double zeta,
                               int maxIters, double stopLossDelta, int recordEvery) {
  if (!(zeta > 0.0)) throw InputError("run_discretized_e2e: step size must be positive");
  return iterate(State{W0}, e2e_problem(spec, n, -zeta), maxIters, stopLossDelta, recordEvery);
}

Vector single_output_rhs(const Vector& w, const Vector& grad, int n) {
  if (n < 2) throw InputError("single_output_rhs: depth must be >= 2");
  if (w.size() != grad.size()) throw ShapeError("single_output_rhs: w and grad sizes differ");
  const double norm = w.norm();
  if (norm == 0.0) return Vector::Zero(w.size());
  const Vector unit = w / norm;
  const double scale = std::pow(norm, 2.0 * (n - 1) / n);
  return -scale * (grad + (n - 1) * unit.dot(grad) * unit);
}

Trajectory run_symmetric_flow(const Matrix& W0, const LossSpec& spec, const FlowConfig& cfg) {
  if (W0.rows() != W0.cols()) throw ShapeError("run_symmetric_flow: W0 must be square");
  if (spec.rows() != W0.rows() || spec.cols() != W0.cols()) {
    throw ShapeError("run_symmetric_flow: loss dimensions do not match W0");
  }
  OdeProblem ode;
  ode.optimal = spec.optimal_value();
  ode.rhs = [&spec](const State& x) {
    const Matrix& Ws = x[0];
    const Matrix G = spec.gradient(Ws);
    const Matrix S = G + G.transpose();
    return State{-(S * Ws) - Ws * S};
  };
  ode.loss = [&spec](const State& x) { return spec.value(x[0]); };
  ode.record = [](double t, const State& x, double loss) {
    return TrajectoryRecord::make(t, loss, x[0], 0.0);
  };
  return integrate(State{W0 * W0.transpose()}, ode, cfg);
}

}  // namespace lnn
