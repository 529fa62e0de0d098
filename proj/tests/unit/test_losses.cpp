#include "lnn/linalg.hpp"
#include "lnn/losses.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lnn;

namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix M(2, 2);
  M << a, b, c, d;
  return M;
}

SensingTask random_sensing(int d0, int dn, int m, std::mt19937_64& rng) {
  std::vector<Measurement> ms;
  for (int i = 0; i < m; ++i) ms.push_back({oracle::random_matrix(dn, d0, rng), oracle::random_matrix(1, 1, rng)(0, 0)});
  return SensingTask(d0, dn, ms);
}

std::vector<LossSpec> all_kinds(std::mt19937_64& rng) {
  const Matrix X = oracle::random_matrix(3, 12, rng);
  const Matrix Y = oracle::random_matrix(2, 12, rng);
  return {LossSpec::whitened_square(oracle::random_matrix(2, 3, rng)),
          LossSpec::square(RegressionData(X, Y)),
          LossSpec::lp(RegressionData(X, Y), 2),
          LossSpec::lp(RegressionData(X, Y), 4),
          LossSpec::lp(RegressionData(X, Y), 6),
          LossSpec::sensing(random_sensing(3, 2, 4, rng)),
          LossSpec::sensing(random_sensing(3, 2, 9, rng))};
}

}  // namespace

TEST_CASE("loss_value examples") {
  const LossSpec spec = LossSpec::sensing(norm_divergence_task());
  CHECK(loss_value(spec, mat2(0, 1, 1, 0)) == doctest::Approx(0.0));
  CHECK(loss_value(spec, Matrix::Zero(2, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Matrix L = mat2(1, 2, 3, 4);
  CHECK(loss_value(LossSpec::whitened_square(L), L) == 0.0);
  CHECK_THROWS_AS(loss_value(spec, Matrix::Zero(3, 2)), ShapeError);
}

TEST_CASE("loss_gradient examples") {
  const Matrix L = mat2(1, 2, 3, 4);
  CHECK(loss_gradient(LossSpec::whitened_square(L), L).norm() == 0.0);
  const LossSpec spec = LossSpec::sensing(norm_divergence_task());
  CHECK((loss_gradient(spec, Matrix::Zero(2, 2)) - mat2(0, -1, -1, 0) / 3.0).norm() <= 1e-15);
  CHECK_THROWS_AS(loss_gradient(spec, Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("gradients match central finite differences") {
  std::mt19937_64 rng(1);
  for (const LossSpec& spec : all_kinds(rng)) {
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix W = oracle::random_matrix(spec.rows(), spec.cols(), rng, 0.5);
      const Matrix fd = oracle::fd_gradient([&](const Matrix& V) { return spec.value(V); }, W);
      const Matrix g = spec.gradient(W);
      CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
    }
  }
}

TEST_CASE("implemented losses are convex") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const LossSpec& spec : all_kinds(rng)) {
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix A = oracle::random_matrix(spec.rows(), spec.cols(), rng);
      const Matrix B = oracle::random_matrix(spec.rows(), spec.cols(), rng);
      const double c = unit(rng);
      const double lhs = spec.value(c * A + (1 - c) * B);
      const double rhs = c * spec.value(A) + (1 - c) * spec.value(B);
      CHECK(lhs <= rhs + 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("optimal value and minimizer are consistent") {
  std::mt19937_64 rng(3);
  for (const LossSpec& spec : all_kinds(rng)) {
    const Matrix& M = spec.minimizer();
    CHECK(spec.value(M) == doctest::Approx(spec.optimal_value()).epsilon(1e-9));
    CHECK(spec.gradient(M).norm() <= 1e-6);
    for (int trial = 0; trial < 20; ++trial) {
      CHECK(spec.value(oracle::random_matrix(spec.rows(), spec.cols(), rng)) >= spec.optimal_value() - 1e-12);
    }
  }
  // Underdetermined sensing is consistent, so the infimum is exactly 0.
  CHECK(LossSpec::sensing(random_sensing(3, 3, 4, rng)).optimal_value() == 0.0);
}

TEST_CASE("Lp rejects odd or small p") {
  std::mt19937_64 rng(4);
  const RegressionData data(oracle::random_matrix(2, 4, rng), oracle::random_matrix(1, 4, rng));
  CHECK_THROWS_AS(LossSpec::lp(data, 3), InputError);
  CHECK_THROWS_AS(LossSpec::lp(data, 1), InputError);
  CHECK_NOTHROW(LossSpec::lp(data, 8));
  CHECK_THROWS_AS(RegressionData(Matrix::Zero(2, 3), Matrix::Zero(1, 4)), ShapeError);
}

TEST_CASE("deficiency_margin_whitened examples") {
  const Matrix L = 3.0 * Matrix::Identity(2, 2);
  const auto d = deficiency_margin_whitened(2.5 * Matrix::Identity(2, 2), L);
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(3.0 - 0.5 * std::sqrt(2.0)).epsilon(1e-14));
  CHECK(*deficiency_margin_whitened(L, L) == doctest::Approx(3.0));
  CHECK_FALSE(deficiency_margin_whitened(Matrix::Zero(2, 2), mat2(1, 0, 0, 0)).has_value());
}

TEST_CASE("deficiency_margin_generic agrees with the whitened formula") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int compared = 0;
  while (compared < 100) {
    const Matrix L = oracle::random_matrix(2, 2, rng) + 2.0 * Matrix::Identity(2, 2);
    const Matrix W = L + oracle::random_matrix(2, 2, rng, unit(rng));
    const double delta = 0.05 + unit(rng) * sigma_min(L);
    const double slack = sigma_min(L) - (W - L).norm() - delta;
    if (std::abs(slack) < 1e-6) continue;
    const auto exact = deficiency_margin_whitened(W, L);
    const bool expected = exact && *exact > delta;
    CHECK(deficiency_margin_generic(LossSpec::whitened_square(L), W, delta, 200, compared) == expected);
    ++compared;
  }
}

TEST_CASE("deficiency_margin_generic examples") {
  const Matrix L = 2.0 * Matrix::Identity(2, 2);
  const LossSpec spec = LossSpec::whitened_square(L);
  CHECK(deficiency_margin_generic(spec, L, 1.0, 500, 1));
  CHECK_FALSE(deficiency_margin_generic(spec, L, 2.5, 500, 1));
  CHECK_THROWS_AS(deficiency_margin_generic(spec, L, 0.0, 10, 1), InputError);
}

TEST_CASE("distance_to_low_sigma examples") {
  const auto p = distance_to_low_sigma(mat2(5, 0, 0, 2), 1.0);
  CHECK(p.distance == doctest::Approx(1.0));
  CHECK((p.witness - mat2(5, 0, 0, 1)).norm() <= 1e-12);
  const Matrix small = mat2(3, 0, 0, 0.5);
  const auto q = distance_to_low_sigma(small, 1.0);
  CHECK(q.distance == 0.0);
  CHECK(q.witness == small);
  CHECK_THROWS_AS(distance_to_low_sigma(small, 0.0), InputError);
}

TEST_CASE("distance_to_low_sigma is never beaten by random search") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix W = oracle::random_matrix(3, 2, rng);
    const double delta = 0.1 + 0.5 * unit(rng) * sigma_min(W);
    const auto p = distance_to_low_sigma(W, delta);
    Eigen::JacobiSVD<Matrix> svd(p.witness);
    CHECK(svd.singularValues()(1) <= delta + 1e-12);
    CHECK((W - p.witness).norm() == doctest::Approx(p.distance).epsilon(1e-10));
    CHECK(oracle::random_search_low_sigma(W, delta, 10000, rng) >= p.distance - 1e-8);
  }
}

TEST_CASE("strong_convexity_constant examples") {
  std::mt19937_64 rng(7);
  CHECK(*strong_convexity_constant(LossSpec::whitened_square(Matrix::Identity(2, 2))) == 1.0);
  const int m = 3;
  const LossSpec sq = LossSpec::square(RegressionData(Matrix::Identity(m, m), oracle::random_matrix(2, m, rng)));
  CHECK(*strong_convexity_constant(sq) == doctest::Approx(1.0 / m));
  CHECK_FALSE(strong_convexity_constant(LossSpec::sensing(random_sensing(3, 3, 4, rng))).has_value());
  const RegressionData data(oracle::random_matrix(2, 10, rng), oracle::random_matrix(1, 10, rng));
  CHECK_FALSE(strong_convexity_constant(LossSpec::lp(data, 4)).has_value());
}

TEST_CASE("strong convexity certificate satisfies the Polyak-Lojasiewicz inequality") {
  std::mt19937_64 rng(8);
  for (const LossSpec& spec : all_kinds(rng)) {
    const auto alpha = strong_convexity_constant(spec);
    if (!alpha) continue;
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix W = oracle::random_matrix(spec.rows(), spec.cols(), rng, 2.0);
      const double lhs = spec.gradient(W).squaredNorm();
      const double rhs = 2.0 * *alpha * (spec.value(W) - spec.optimal_value());
      CHECK(lhs >= rhs - 1e-9 * std::max(1.0, rhs));
    }
  }
}

TEST_CASE("make_completion_task") {
  std::mt19937_64 rng(9);
  const Matrix gt = oracle::random_matrix(3, 4, rng);
  std::vector<Entry> all;
  for (int i = 0; i < 3; ++i) for (int j = 0; j < 4; ++j) all.emplace_back(i, j);
  const LossSpec full = LossSpec::sensing(make_completion_task(gt, all));
  const Matrix W = oracle::random_matrix(3, 4, rng);
  CHECK(full.value(W) == doctest::Approx((W - gt).squaredNorm() / (2.0 * 12)).epsilon(1e-14));
  CHECK((full.minimizer() - gt).norm() <= 1e-12);

  const Matrix truth = mat2(7, 1, 1, 0);
  CHECK(make_completion_task(truth, {{0, 1}, {1, 0}, {1, 1}}) == norm_divergence_task());

  const Matrix r1 = oracle::random_matrix(5, 1, rng) * oracle::random_matrix(1, 5, rng);
  const auto entries = random_entries(5, 5, 15, 123);
  CHECK(entries.size() == 15);
  CHECK(entries == random_entries(5, 5, 15, 123));
  CHECK(make_completion_task(r1, entries) == make_completion_task(r1, random_entries(5, 5, 15, 123)));
  CHECK(make_completion_task(r1, entries, 0.1, 4) == make_completion_task(r1, entries, 0.1, 4));

  CHECK_THROWS_AS(make_completion_task(gt, {{0, 0}, {0, 0}}), InputError);
  CHECK_THROWS_AS(make_completion_task(gt, {{3, 0}}), InputError);
  CHECK_THROWS_AS(random_entries(2, 2, 5, 1), InputError);
}

TEST_CASE("SensingTask JSON round trip and independence") {
  const SensingTask task = norm_divergence_task();
  CHECK(task.independent());
  CHECK(SensingTask::from_json(task.to_json()) == task);
  std::mt19937_64 rng(10);
  const SensingTask random = random_sensing(3, 2, 5, rng);
  CHECK(SensingTask::from_json(random.to_json()) == random);
  const Matrix A = mat2(1, 0, 0, 0);
  CHECK_FALSE(SensingTask(2, 2, {{A, 1.0}, {2.0 * A, 2.0}}).independent());
  CHECK_THROWS_AS(SensingTask(2, 2, {{Matrix::Zero(2, 3), 1.0}}), ShapeError);
  CHECK_THROWS(SensingTask::from_json("{\"d0\": 2}"));
}
