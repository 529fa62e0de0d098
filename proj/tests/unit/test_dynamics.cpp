#include "lnn/dynamics.hpp"
#include "lnn/linalg.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>

using namespace lnn;

namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix M(2, 2);
  M << a, b, c, d;
  return M;
}

FlowConfig flow(double h, double T, int recordEvery = 1) {
  FlowConfig cfg;
  cfg.stepSize = h;
  cfg.maxTime = T;
  cfg.recordEvery = recordEvery;
  return cfg;
}

WeightStack random_stack(const LayerDims& dims, std::mt19937_64& rng, double scale) {
  std::vector<Matrix> layers;
  for (int j = 1; j <= dims.depth(); ++j) layers.push_back(oracle::random_matrix(dims[j], dims[j - 1], rng, scale));
  return WeightStack(dims, std::move(layers));
}

}  // namespace

TEST_CASE("phi_gradient examples") {
  std::mt19937_64 rng(1);
  const LossSpec spec = LossSpec::whitened_square(oracle::random_matrix(2, 3, rng));
  for (int n = 2; n <= 4; ++n) {
    for (const Matrix& G : phi_gradient(WeightStack::zeros(LayerDims::uniform(3, 2, 3, n)), spec)) {
      CHECK(G.norm() == 0.0);
    }
  }

  // l(w) = w^2 / 2 on scalars: d/da = b * ab, d/db = a * ab.
  const LossSpec half = LossSpec::whitened_square(Matrix::Zero(1, 1));
  const double a = 0.7;
  const double b = -1.3;
  const auto g = phi_gradient(WeightStack(LayerDims({1, 1, 1}), {Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b)}), half);
  CHECK(g[0](0, 0) == doctest::Approx(b * a * b));
  CHECK(g[1](0, 0) == doctest::Approx(a * a * b));
}

TEST_CASE("phi_gradient matches finite differences of phi") {
  std::mt19937_64 rng(2);
  const Matrix X = oracle::random_matrix(3, 10, rng);
  const Matrix Y = oracle::random_matrix(2, 10, rng);
  const LossSpec specs[] = {LossSpec::square(RegressionData(X, Y)), LossSpec::lp(RegressionData(X, Y), 4)};
  for (const auto& spec : specs) {
    for (int n = 2; n <= 4; ++n) {
      const LayerDims dims = LayerDims::uniform(3, 2, 4, n);
      const WeightStack s = random_stack(dims, rng, 0.7);
      const auto grads = phi_gradient(s, spec);
      for (int j = 1; j <= n; ++j) {
        auto phi = [&](const Matrix& Wj) {
          std::vector<Matrix> layers = s.layers();
          layers[j - 1] = Wj;
          return spec.value(end_to_end(WeightStack(dims, layers)).matrix());
        };
        const Matrix fd = oracle::fd_gradient(phi, s.layer(j));
        CHECK((grads[j - 1] - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
      }
    }
  }
}

TEST_CASE("gradient flow from a balanced init stays balanced and descends") {
  std::mt19937_64 rng(3);
  const Matrix L = oracle::random_matrix(3, 3, rng) + 3.0 * Matrix::Identity(3, 3);
  const LossSpec spec = LossSpec::whitened_square(L);
  for (int n = 2; n <= 4; ++n) {
    const Matrix W0 = L + 0.3 * sigma_min(L) * oracle::random_matrix(3, 3, rng).normalized();
    const WeightStack s0 = balanced_factorize(EndToEndMatrix(W0), LayerDims::uniform(3, 3, 3, n));
    const Trajectory tr = run_gradient_flow(s0, spec, flow(1e-3, 1.0));
    double worst = 0.0;
    bool monotone = true;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      worst = std::max(worst, tr[i].unbalancedness);
      if (i > 0 && tr[i].lossValue > tr[i - 1].lossValue + 1e-9) monotone = false;
    }
    CHECK(worst <= 1e-8);
    CHECK(monotone);
    CHECK(tr.back().lossValue < tr.front().lossValue);
  }
}

TEST_CASE("gradient flow and descent from the origin stay at the origin") {
  std::mt19937_64 rng(4);
  const LossSpec spec = LossSpec::whitened_square(oracle::random_matrix(2, 2, rng));
  const WeightStack zero = WeightStack::zeros(LayerDims({2, 2, 2}));
  for (const auto& rec : run_gradient_flow(zero, spec, flow(1e-2, 1.0, 10))) CHECK(rec.endToEnd.norm() == 0.0);
  for (const auto& rec : run_gradient_descent(zero, spec, 0.1, 50, 0.0, 5)) CHECK(rec.endToEnd.norm() == 0.0);
}

TEST_CASE("one gradient descent step equals one Euler flow step") {
  std::mt19937_64 rng(5);
  const LossSpec spec = LossSpec::whitened_square(oracle::random_matrix(2, 3, rng));
  const WeightStack s0 = random_stack(LayerDims({3, 4, 2}), rng, 0.5);
  const double eta = 1e-4;
  FlowConfig euler = flow(eta, eta);
  euler.method = Method::Euler;
  const Trajectory gf = run_gradient_flow(s0, spec, euler);
  const Trajectory gd = run_gradient_descent(s0, spec, eta, 1, 0.0);
  REQUIRE(gd.size() == 2);
  CHECK((gf.back().endToEnd - gd.back().endToEnd).norm() <= 1e-12);
  const Trajectory rk = run_gradient_flow(s0, spec, flow(eta, eta));
  CHECK((rk.back().endToEnd - gd.back().endToEnd).norm() <= 10 * eta * eta);
}

TEST_CASE("record cadence and early stopping") {
  const LossSpec spec = LossSpec::whitened_square(Matrix::Identity(2, 2));
  const Trajectory tr = run_end_to_end_flow(0.5 * Matrix::Identity(2, 2), spec, 2, flow(0.01, 1.0, 10));
  CHECK(tr.size() == 11);
  CHECK(tr.back().time == doctest::Approx(1.0));
  FlowConfig cfg = flow(0.01, 100.0, 1000);
  cfg.stopLossDelta = 1e-3;
  const Trajectory stopped = run_end_to_end_flow(0.5 * Matrix::Identity(2, 2), spec, 2, cfg);
  CHECK(stopped.back().lossValue <= 1e-3);
  CHECK(stopped.back().time < 100.0);
  CHECK_THROWS_AS(run_end_to_end_flow(Matrix::Identity(2, 2), spec, 2, flow(0.0, 1.0)), InputError);
  CHECK_THROWS_AS(run_end_to_end_flow(Matrix::Identity(2, 2), spec, 2, flow(0.1, 1.0, 0)), InputError);
}

TEST_CASE("trajectory records are consistent with their matrix") {
  std::mt19937_64 rng(6);
  const LossSpec spec = LossSpec::whitened_square(oracle::random_matrix(3, 3, rng));
  for (const auto& rec : run_end_to_end_flow(oracle::random_matrix(3, 3, rng), spec, 3, flow(1e-2, 0.5, 5))) {
    CHECK(rec.lossValue == doctest::Approx(spec.value(rec.endToEnd)).epsilon(1e-10));
    REQUIRE(rec.determinant.has_value());
    CHECK(*rec.determinant == doctest::Approx(rec.endToEnd.determinant()).epsilon(1e-10));
    CHECK(rec.frobeniusNorm == doctest::Approx(rec.endToEnd.norm()).epsilon(1e-10));
    CHECK(rec.nuclearNorm == doctest::Approx(oracle::psd_power(rec.endToEnd.transpose() * rec.endToEnd, 0.5).trace()).epsilon(1e-8));
  }
  const LossSpec rect = LossSpec::whitened_square(oracle::random_matrix(2, 3, rng));
  CHECK_FALSE(run_end_to_end_flow(Matrix::Zero(2, 3), rect, 2, flow(0.1, 0.1)).front().determinant.has_value());
}

TEST_CASE("divergence is reported with the partial trajectory") {
  const LossSpec spec = LossSpec::whitened_square(Matrix::Identity(2, 2));
  const WeightStack s0 = balanced_factorize(EndToEndMatrix(3.0 * Matrix::Identity(2, 2)), LayerDims({2, 2, 2}));
  try {
    run_gradient_descent(s0, spec, 50.0, 1000, 0.0, 1);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK_FALSE(e.partial.empty());
    CHECK(std::isfinite(e.partial.back().lossValue));
  }
}

TEST_CASE("preconditioner_spectrum examples") {
  const Matrix Q = Eigen::HouseholderQR<Matrix>(mat2(1, 2, 3, 4)).householderQ();
  for (int n = 2; n <= 4; ++n) {
    const auto ps = preconditioner_spectrum(Q, n);
    for (Eigen::Index i = 0; i < ps.eigenvalues.size(); ++i) CHECK(ps.eigenvalues(i) == doctest::Approx(n));
    const auto zero = preconditioner_spectrum(Matrix::Zero(2, 3), n);
    CHECK(zero.eigenvalues.size() == 6);
    CHECK(zero.eigenvalues.norm() == 0.0);
  }
  auto ev = preconditioner_spectrum(mat2(2, 0, 0, 1), 2).eigenvalues;
  std::sort(ev.data(), ev.data() + ev.size());
  CHECK((ev - Eigen::Vector4d(2, 3, 3, 4)).norm() <= 1e-10);
  // Independent route: eigendecompose the explicit Kronecker matrix.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(oracle::kronecker_preconditioner(mat2(2, 0, 0, 1), 2));
  CHECK((eig.eigenvalues() - Eigen::Vector4d(2, 3, 3, 4)).norm() <= 1e-10);
}

TEST_CASE("preconditioner eigenpairs match the Kronecker matrix") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 1 + trial % 3;
    const int cols = 1 + (trial / 3) % 3;
    const int n = 2 + trial % 3;
    const Matrix W = oracle::random_matrix(rows, cols, rng);
    const auto ps = preconditioner_spectrum(W, n);
    const Matrix P = oracle::kronecker_preconditioner(W, n);
    REQUIRE(ps.eigenvalues.size() == rows * cols);
    for (Eigen::Index i = 0; i < ps.eigenvalues.size(); ++i) {
      const Matrix E = ps.eigenvector(static_cast<std::size_t>(i));
      const Vector v = Eigen::Map<const Vector>(E.data(), E.size());
      CHECK((P * v - ps.eigenvalues(i) * v).norm() <= 1e-10 * (1.0 + P.norm()));
      CHECK(ps.eigenvalues(i) >= 0.0);
    }
    CHECK(ps.eigenvalues.minCoeff() >= std::pow(sigma_min(W), 2.0 * (n - 1) / n) - 1e-10);
  }
}

TEST_CASE("apply_preconditioned_gradient examples") {
  std::mt19937_64 rng(8);
  const Matrix G = oracle::random_matrix(2, 2, rng);
  CHECK((apply_preconditioned_gradient(Matrix::Identity(2, 2), G, 2) - 2.0 * G).norm() <= 1e-14);
  const Matrix G3 = oracle::random_matrix(3, 2, rng);
  CHECK(apply_preconditioned_gradient(Matrix::Zero(3, 2), G3, 2).norm() == 0.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix W = oracle::random_matrix(3, 2, rng);
    const Matrix H = oracle::random_matrix(3, 2, rng);
    for (int n = 2; n <= 4; ++n) {
      CHECK((apply_preconditioned_gradient(W, H, n) - oracle::apply_kronecker(W, H, n)).norm() <= 1e-9);
    }
  }
  CHECK_THROWS_AS(apply_preconditioned_gradient(Matrix::Zero(2, 2), Matrix::Zero(2, 3), 2), ShapeError);
}

TEST_CASE("end-to-end flow matches full-parameter flow from a balanced init") {
  std::mt19937_64 rng(9);
  const Matrix X = oracle::random_matrix(3, 20, rng);
  const LossSpec spec = LossSpec::square(RegressionData(X, oracle::random_matrix(2, 20, rng)));
  for (int n = 2; n <= 3; ++n) {
    const LayerDims dims = LayerDims::uniform(3, 2, 4, n);
    const WeightStack s0 = balance_project(random_stack(dims, rng, 0.6));
    const Trajectory full = run_gradient_flow(s0, spec, flow(1e-3, 1.0, 100));
    const Trajectory e2e = run_end_to_end_flow(end_to_end(s0).matrix(), spec, n, flow(1e-3, 1.0, 100));
    REQUIRE(full.size() == e2e.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
      CHECK(full[i].time == e2e[i].time);
      CHECK((full[i].endToEnd - e2e[i].endToEnd).norm() <= 1e-4);
    }
  }
}

TEST_CASE("end-to-end flow special cases") {
  std::mt19937_64 rng(10);
  const Matrix L = oracle::random_matrix(2, 3, rng);
  const LossSpec spec = LossSpec::whitened_square(L);
  for (const auto& rec : run_end_to_end_flow(L, spec, 3, flow(1e-2, 1.0, 10))) CHECK((rec.endToEnd - L).norm() <= 1e-14);
  // n = 1 is plain gradient flow: W(t) = L + (W0 - L) e^{-t}.
  const Matrix W0 = oracle::random_matrix(2, 3, rng);
  const Trajectory tr = run_end_to_end_flow(W0, spec, 1, flow(1e-3, 1.0));
  CHECK((tr.back().endToEnd - (L + (W0 - L) * std::exp(-1.0))).norm() <= 1e-10);
}

TEST_CASE("spectral integrator agrees with the plain end-to-end flow") {
  std::mt19937_64 rng(11);
  const LossSpec spec = LossSpec::sensing(norm_divergence_task());
  const Matrix W0 = mat2(5, 1, 1, 0.3);
  for (int n = 2; n <= 3; ++n) {
    const Trajectory a = run_end_to_end_flow(W0, spec, n, flow(1e-3, 2.0, 100));
    const Trajectory b = run_end_to_end_flow_spectral(W0, spec, n, flow(1e-3, 2.0, 100));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK((a[i].endToEnd - b[i].endToEnd).norm() <= 1e-6);
      CHECK(*b[i].determinant == doctest::Approx(b[i].endToEnd.determinant()).epsilon(1e-8));
    }
  }
  const Matrix L = oracle::random_matrix(3, 3, rng);
  const Matrix V0 = oracle::random_matrix(3, 3, rng);
  const LossSpec w = LossSpec::whitened_square(L);
  const Trajectory a = run_end_to_end_flow(V0, w, 3, flow(1e-3, 0.5, 50));
  const Trajectory b = run_end_to_end_flow_spectral(V0, w, 3, flow(1e-3, 0.5, 50));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i].endToEnd - b[i].endToEnd).norm() <= 1e-6);

  CHECK_THROWS_AS(run_end_to_end_flow_spectral(mat2(1, 0, 0, 0), spec, 2, flow(0.1, 1)), PreconditionError);
  CHECK_THROWS_AS(run_end_to_end_flow_spectral(Matrix::Identity(2, 2), spec, 2, flow(0.1, 1)), PreconditionError);
  CHECK_THROWS_AS(run_end_to_end_flow_spectral(Matrix::Identity(2, 3), spec, 2, flow(0.1, 1)), ShapeError);
}

TEST_CASE("discretized end-to-end iteration") {
  std::mt19937_64 rng(12);
  const Matrix X = oracle::random_matrix(3, 15, rng);
  const Matrix Y = oracle::random_matrix(1, 15, rng);
  const LossSpec spec = LossSpec::lp(RegressionData(X, Y), 4);
  const Matrix W0 = oracle::random_matrix(1, 3, rng, 0.1);
  // n = 1 is plain gradient descent on l.
  const double eta = 1e-3;
  Matrix W = W0;
  for (int i = 0; i < 20; ++i) W -= eta * spec.gradient(W);
  CHECK((run_discretized_e2e(W0, spec, 1, eta, 20, 0.0).back().endToEnd - W).norm() <= 1e-14);
  // Small steps agree with one Euler step of the flow to O(zeta^2).
  for (int n = 2; n <= 3; ++n) {
    FlowConfig euler = flow(1e-5, 1e-5);
    euler.method = Method::Euler;
    const Matrix a = run_discretized_e2e(W0, spec, n, 1e-5, 1, 0.0).back().endToEnd;
    const Matrix b = run_end_to_end_flow(W0, spec, n, euler).back().endToEnd;
    CHECK((a - b).norm() <= 1e-10);
  }
  CHECK_THROWS_AS(run_discretized_e2e(W0, spec, 2, 0.0, 1, 0.0), InputError);
}

TEST_CASE("single_output_rhs examples and agreement with the preconditioner") {
  std::mt19937_64 rng(13);
  for (int n = 2; n <= 4; ++n) {
    const Vector w = oracle::random_matrix(4, 1, rng);
    const double scale = std::pow(w.norm(), 2.0 * (n - 1) / n);
    const Vector parallel = 0.7 * w;
    CHECK((single_output_rhs(w, parallel, n) + n * scale * parallel).norm() <= 1e-12);
    Vector ortho = oracle::random_matrix(4, 1, rng);
    ortho -= ortho.dot(w) / w.squaredNorm() * w;
    CHECK((single_output_rhs(w, ortho, n) + scale * ortho).norm() <= 1e-12);
    CHECK(single_output_rhs(Vector::Zero(4), ortho, n).norm() == 0.0);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector v = oracle::random_matrix(4, 1, rng);
      const Vector g = oracle::random_matrix(4, 1, rng);
      const Matrix viaP = -apply_preconditioned_gradient(v.transpose(), g.transpose(), n);
      CHECK((single_output_rhs(v, g, n) - viaP.transpose()).norm() <= 1e-10);
    }
  }
}

TEST_CASE("symmetric flow examples") {
  std::mt19937_64 rng(14);
  const Matrix Q = Eigen::HouseholderQR<Matrix>(oracle::random_matrix(3, 3, rng)).householderQ();
  const LossSpec atI = LossSpec::whitened_square(Matrix::Identity(3, 3));
  for (const auto& rec : run_symmetric_flow(Q, atI, flow(1e-2, 1.0, 10))) {
    CHECK((rec.endToEnd - Matrix::Identity(3, 3)).norm() <= 1e-12);
  }

  for (int trial = 0; trial < 5; ++trial) {
    const Matrix S = oracle::random_matrix(2, 2, rng);
    const LossSpec spec = LossSpec::whitened_square(S * S.transpose());
    const Matrix W0 = oracle::random_matrix(2, 2, rng, 0.5);
    const Trajectory lifted = run_symmetric_flow(W0, spec, flow(1e-3, 1.0));
    const auto direct = oracle::direct_symmetric_flow(W0, [&](const Matrix& Ws) { return spec.gradient(Ws); }, 1e-3, 1000);
    REQUIRE(lifted.size() == direct.size());
    for (std::size_t i = 0; i < lifted.size(); ++i) {
      CHECK((lifted[i].endToEnd - direct[i]).norm() <= 1e-5);
      const Matrix& Ws = lifted[i].endToEnd;
      CHECK((Ws - Ws.transpose()).norm() <= 1e-10);
      CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(Ws).eigenvalues().minCoeff() >= -1e-10);
    }
  }
}

TEST_CASE("end-to-end dynamics are not a gradient field") {
  // Loop integral of g(W) = P(W) grad l(W) around the unit square spanned by
  // E_12 and E_21 at a fixed base point; zero for any gradient field.
  Matrix L(2, 2);
  L << 2, 1, -1, 1;
  const LossSpec spec = LossSpec::whitened_square(L);
  Matrix B(2, 2);
  B << 1.0, 0.5, 0.2, 1.5;
  Matrix D1 = Matrix::Zero(2, 2);
  Matrix D2 = Matrix::Zero(2, 2);
  D1(0, 1) = 1.0;
  D2(1, 0) = 1.0;
  auto field = [&](const Matrix& W) { return apply_preconditioned_gradient(W, spec.gradient(W), 2); };
  auto along = [&](const Matrix& start, const Matrix& dir) {
    return oracle::gauss_legendre([&](double s) { return field(start + s * dir).cwiseProduct(dir).sum(); }, 0.0, 1.0, 50);
  };
  const double loop = along(B, D1) + along(B + D1, D2) - along(B + D2, D1) - along(B, D2);
  MESSAGE("loop integral = " << std::setprecision(17) << loop);
  CHECK(std::abs(loop) > 1e-3);
  // Value frozen from this quadrature (50 panels of 5-point Gauss-Legendre).
  CHECK(loop == doctest::Approx(-1.0259877173833916).epsilon(1e-8));
  // Control: the plain gradient field (n = 1) has a vanishing loop integral.
  auto plain = [&](const Matrix& start, const Matrix& dir) {
    return oracle::gauss_legendre([&](double s) { return spec.gradient(start + s * dir).cwiseProduct(dir).sum(); }, 0.0, 1.0, 50);
  };
  CHECK(std::abs(plain(B, D1) + plain(B + D1, D2) - plain(B + D2, D1) - plain(B, D2)) <= 1e-12);
}
