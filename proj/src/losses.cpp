#include "lnn/losses.hpp"

#include "lnn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

namespace lnn {

namespace {

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// x * |x|^(q - 1): odd power with the sign of x kept for any q.
double signed_pow(double x, int q) { return std::copysign(std::pow(std::abs(x), q), x); }

Eigen::Map<const Vector> vec(const Matrix& W) { return {W.data(), W.size()}; }

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

double lp_value(const RegressionData& data, int p, const Matrix& W) {
  const Matrix r = W * data.X - data.Y;
  return r.array().abs().pow(p).sum() / data.samples();
}

// Rows of W decouple for the l_p loss; each is minimized by damped Newton
// started at the least-squares solution.
Matrix lp_minimizer(const RegressionData& data, int p) {
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(data.X.transpose());
  Matrix W = cod.solve(data.Y.transpose()).transpose();
  if (p == 2) return W;
  const double m = data.samples();
  for (Eigen::Index k = 0; k < W.rows(); ++k) {
    Vector w = W.row(k).transpose();
    const Vector y = data.Y.row(k).transpose();
    auto row_value = [&](const Vector& u) {
      return (data.X.transpose() * u - y).array().abs().pow(p).sum() / m;
    };
    for (int it = 0; it < 200; ++it) {
      const Vector r = data.X.transpose() * w - y;
      if (r.cwiseAbs().maxCoeff() < 1e-14 * (1.0 + y.cwiseAbs().maxCoeff())) break;
      Vector g = Vector::Zero(w.size());
      Matrix H = Matrix::Zero(w.size(), w.size());
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        const Vector x = data.X.col(i);
        g += (p / m) * signed_pow(r(i), p - 1) * x;
        H += (p * (p - 1) / m) * std::pow(r(i), p - 2) * x * x.transpose();
      }
      H.diagonal().array() += 1e-14 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
      const Vector step = H.ldlt().solve(g);
      const double f0 = row_value(w);
      double t = 1.0;
      Vector next = w - step;
      while (row_value(next) > f0 && t > 1e-12) {
        t *= 0.5;
        next = w - t * step;
      }
      if ((next - w).norm() <= 1e-15 * (1.0 + w.norm())) break;
      w = next;
    }
    W.row(k) = w.transpose();
  }
  return W;
}

}  // namespace

RegressionData::RegressionData(Matrix x, Matrix y) : X(std::move(x)), Y(std::move(y)) {
  if (X.cols() != Y.cols()) {
    throw ShapeError("RegressionData: X has " + std::to_string(X.cols()) + " samples, Y has " +
                     std::to_string(Y.cols()));
  }
  if (X.cols() == 0) throw InputError("RegressionData: no samples");
}

SensingTask::SensingTask(int d0, int dn, std::vector<Measurement> measurements)
    : d0_(d0), dn_(dn), measurements_(std::move(measurements)) {
  if (d0 <= 0 || dn <= 0) throw ShapeError("SensingTask: dimensions must be positive");
  if (measurements_.empty()) throw InputError("SensingTask: no measurements");
  for (const auto& m : measurements_) {
    if (m.A.rows() != dn || m.A.cols() != d0) {
      throw ShapeError("SensingTask: measurement matrix is " + shape_str(m.A.rows(), m.A.cols()) +
                       ", expected " + shape_str(dn, d0));
    }
  }
}

Matrix SensingTask::measurement_matrix() const {
  Matrix M(size(), static_cast<Eigen::Index>(d0_) * dn_);
  for (int i = 0; i < size(); ++i) M.row(i) = vec(measurements_[i].A).transpose();
  return M;
}

Vector SensingTask::targets() const {
  Vector b(size());
  for (int i = 0; i < size(); ++i) b(i) = measurements_[i].b;
  return b;
}

bool SensingTask::independent() const {
  const Eigen::FullPivLU<Matrix> lu(measurement_matrix());
  return lu.rank() == size();
}

bool operator==(const SensingTask& a, const SensingTask& b) {
  if (a.d0_ != b.d0_ || a.dn_ != b.dn_ || a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i) {
    if (a.measurements_[i].b != b.measurements_[i].b) return false;
    if (a.measurements_[i].A != b.measurements_[i].A) return false;
  }
  return true;
}

LossSpec::LossSpec(std::variant<Whitened, Square, Lp, Sensing> params) : params_(std::move(params)) {
  std::visit(
      [this](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Whitened>) {
          rows_ = static_cast<int>(p.target.rows());
          cols_ = static_cast<int>(p.target.cols());
          minimizer_ = p.target;
          optimal_ = 0.0;
        } else if constexpr (std::is_same_v<T, Square>) {
          rows_ = static_cast<int>(p.data.Y.rows());
          cols_ = static_cast<int>(p.data.X.rows());
          const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(p.data.X.transpose());
          minimizer_ = cod.solve(p.data.Y.transpose()).transpose();
          optimal_ = (minimizer_ * p.data.X - p.data.Y).squaredNorm() / (2.0 * p.data.samples());
        } else if constexpr (std::is_same_v<T, Lp>) {
          rows_ = static_cast<int>(p.data.Y.rows());
          cols_ = static_cast<int>(p.data.X.rows());
          minimizer_ = lp_minimizer(p.data, p.p);
          optimal_ = lp_value(p.data, p.p, minimizer_);
        } else {
          rows_ = p.task.dn();
          cols_ = p.task.d0();
          const Matrix M = p.task.measurement_matrix();
          const Vector b = p.task.targets();
          const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(M);
          const Vector w = cod.solve(b);
          minimizer_ = unvec(w, rows_, cols_);
          optimal_ = (M * w - b).squaredNorm() / (2.0 * p.task.size());
          // Consistent systems have l* = 0 exactly; drop roundoff.
          if (optimal_ < 1e-28 * (1.0 + b.squaredNorm())) optimal_ = 0.0;
        }
      },
      params_);
}

LossSpec LossSpec::whitened_square(Matrix target) { return LossSpec(Whitened{std::move(target)}); }

LossSpec LossSpec::square(RegressionData data) { return LossSpec(Square{std::move(data)}); }

LossSpec LossSpec::lp(RegressionData data, int p) {
  if (!(p == 2 || (p >= 4 && p % 2 == 0))) {
    throw InputError("LossSpec::lp: p must be 2 or an even integer >= 4, got " + std::to_string(p));
  }
  return LossSpec(Lp{std::move(data), p});
}

LossSpec LossSpec::sensing(SensingTask task) { return LossSpec(Sensing{std::move(task)}); }

LossSpec::Kind LossSpec::kind() const {
  switch (params_.index()) {
    case 0:
      return Kind::WhitenedSquare;
    case 1:
      return Kind::Square;
    case 2:
      return Kind::Lp;
    default:
      return Kind::Sensing;
  }
}

void LossSpec::check_shape(const Matrix& W) const {
  if (W.rows() != rows_ || W.cols() != cols_) {
    throw ShapeError("loss: W is " + shape_str(W.rows(), W.cols()) + ", expected " +
                     shape_str(rows_, cols_));
  }
}

double LossSpec::value(const Matrix& W) const {
  check_shape(W);
  return std::visit(
      [&W](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Whitened>) {
          return 0.5 * (W - p.target).squaredNorm();
        } else if constexpr (std::is_same_v<T, Square>) {
          return (W * p.data.X - p.data.Y).squaredNorm() / (2.0 * p.data.samples());
        } else if constexpr (std::is_same_v<T, Lp>) {
          return lp_value(p.data, p.p, W);
        } else {
          double sum = 0.0;
          for (const auto& m : p.task.measurements()) {
            const double r = W.cwiseProduct(m.A).sum() - m.b;
            sum += r * r;
          }
          return sum / (2.0 * p.task.size());
        }
      },
      params_);
}

Matrix LossSpec::gradient(const Matrix& W) const {
  check_shape(W);
  return std::visit(
      [&W](const auto& p) -> Matrix {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Whitened>) {
          return W - p.target;
        } else if constexpr (std::is_same_v<T, Square>) {
          return (W * p.data.X - p.data.Y) * p.data.X.transpose() / p.data.samples();
        } else if constexpr (std::is_same_v<T, Lp>) {
          const Matrix r = W * p.data.X - p.data.Y;
          const Matrix powered = r.unaryExpr([q = p.p - 1](double x) { return signed_pow(x, q); });
          return (static_cast<double>(p.p) / p.data.samples()) * powered * p.data.X.transpose();
        } else {
          Matrix G = Matrix::Zero(W.rows(), W.cols());
          for (const auto& m : p.task.measurements()) {
            G += (W.cwiseProduct(m.A).sum() - m.b) * m.A;
          }
          return G / p.task.size();
        }
      },
      params_);
}

double loss_value(const LossSpec& spec, const Matrix& W) { return spec.value(W); }

Matrix loss_gradient(const LossSpec& spec, const Matrix& W) { return spec.gradient(W); }

std::optional<double> deficiency_margin_whitened(const Matrix& W, const Matrix& lambda_yx) {
  if (W.rows() != lambda_yx.rows() || W.cols() != lambda_yx.cols()) {
    throw ShapeError("deficiency_margin_whitened: shapes differ");
  }
  const double margin = sigma_min(lambda_yx) - (W - lambda_yx).norm();
  if (margin > 0.0) return margin;
  return std::nullopt;
}

LowSigmaProjection distance_to_low_sigma(const Matrix& W, double delta) {
  if (!(delta > 0.0)) throw InputError("distance_to_low_sigma: delta must be positive");
  const Svd svd = gauged_svd(W);
  const Eigen::Index last = svd.sigma.size() - 1;
  const double smallest = svd.sigma(last);
  if (smallest <= delta) return {0.0, W};
  Vector sigma = svd.sigma;
  sigma(last) = delta;
  return {smallest - delta, svd.U * sigma.asDiagonal() * svd.V.transpose()};
}

bool deficiency_margin_generic(const LossSpec& spec, const Matrix& W, double delta, int samples,
                               std::uint64_t seed) {
  if (!(delta > 0.0)) throw InputError("deficiency_margin_generic: delta must be positive");
  const double at_w = spec.value(W);
  auto beats = [&](const Matrix& candidate) {
    return spec.value(distance_to_low_sigma(candidate, delta).witness) <= at_w;
  };
  if (beats(spec.minimizer()) || beats(W)) return false;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(-3.0, 0.0);
  for (int s = 0; s < samples; ++s) {
    const Matrix& base = (s % 2 == 0) ? spec.minimizer() : W;
    Matrix R(W.rows(), W.cols());
    for (Eigen::Index i = 0; i < R.size(); ++i) R(i) = normal(rng);
    const double scale = std::pow(10.0, log_scale(rng)) * (1.0 + base.norm());
    if (beats(base + scale * R / R.norm())) return false;
  }
  return true;
}

std::optional<double> strong_convexity_constant(const LossSpec& spec) {
  auto positive = [](double lambda, double scale) -> std::optional<double> {
    if (lambda > 1e-12 * std::max(1.0, scale)) return lambda;
    return std::nullopt;
  };
  switch (spec.kind()) {
    case LossSpec::Kind::WhitenedSquare:
      return 1.0;
    case LossSpec::Kind::Square: {
      const auto& data = std::get<LossSpec::Square>(spec.params()).data;
      const Matrix cov = data.instance_covariance();
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
      return positive(eig.eigenvalues()(0), eig.eigenvalues().maxCoeff());
    }
    case LossSpec::Kind::Lp: {
      const auto& lp = std::get<LossSpec::Lp>(spec.params());
      if (lp.p != 2) return std::nullopt;
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(lp.data.instance_covariance());
      return positive(2.0 * eig.eigenvalues()(0), eig.eigenvalues().maxCoeff());
    }
    case LossSpec::Kind::Sensing: {
      const auto& task = std::get<LossSpec::Sensing>(spec.params()).task;
      const Matrix M = task.measurement_matrix();
      if (M.rows() < M.cols()) return std::nullopt;
      const Matrix Q = M.transpose() * M / task.size();
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(Q);
      return positive(eig.eigenvalues()(0), eig.eigenvalues().maxCoeff());
    }
  }
  return std::nullopt;
}

SensingTask make_completion_task(const Matrix& ground_truth, const std::vector<Entry>& observed,
                                 double noise, std::uint64_t seed) {
  std::set<Entry> seen;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = static_cast<int>(ground_truth.rows());
  const auto cols = static_cast<int>(ground_truth.cols());
  std::vector<Measurement> measurements;
  for (const auto& [i, j] : observed) {
    if (i < 0 || i >= rows || j < 0 || j >= cols) {
      throw InputError("make_completion_task: entry (" + std::to_string(i) + ", " +
                       std::to_string(j) + ") out of range");
    }
    if (!seen.insert({i, j}).second) {
      throw InputError("make_completion_task: duplicate entry (" + std::to_string(i) + ", " +
                       std::to_string(j) + ")");
    }
    Matrix A = Matrix::Zero(rows, cols);
    A(i, j) = 1.0;
    const double b = ground_truth(i, j) + (noise > 0.0 ? noise * normal(rng) : 0.0);
    measurements.push_back({std::move(A), b});
  }
  return SensingTask(cols, rows, std::move(measurements));
}

std::vector<Entry> random_entries(int rows, int cols, int count, std::uint64_t seed) {
  if (count < 0 || count > rows * cols) {
    throw InputError("random_entries: cannot pick " + std::to_string(count) + " of " +
                     std::to_string(rows * cols) + " entries");
  }
  std::vector<int> flat(static_cast<std::size_t>(rows) * cols);
  std::iota(flat.begin(), flat.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates; std::shuffle's output is implementation-defined.
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<int> pick(k, static_cast<int>(flat.size()) - 1);
    std::swap(flat[k], flat[pick(rng)]);
  }
  std::vector<Entry> out;
  for (int k = 0; k < count; ++k) out.emplace_back(flat[k] / cols, flat[k] % cols);
  std::sort(out.begin(), out.end());
  return out;
}

SensingTask norm_divergence_task() {
  Matrix truth = Matrix::Zero(2, 2);
  truth(0, 1) = 1.0;
  truth(1, 0) = 1.0;
  return make_completion_task(truth, {{0, 1}, {1, 0}, {1, 1}});
}

}  // namespace lnn
