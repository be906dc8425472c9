#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgi/evalkit.hpp"

using namespace ecgi::evalkit;

namespace {

Eigen::MatrixXd seeded_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
  return m;
}

// Student-t two-sided tail probability by Simpson integration of the density.
double t_two_sided_by_quadrature(double t, double nu) {
  const double t0 = std::abs(t);
  const double ln_norm = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                         0.5 * std::log(nu * M_PI);
  auto density = [&](double s) {
    return std::exp(ln_norm - (nu + 1.0) / 2.0 * std::log1p(s * s / nu));
  };
  const double hi = t0 + 300.0;
  const int n = 600000;  // even
  const double h = (hi - t0) / n;
  double acc = density(t0) + density(hi);
  for (int i = 1; i < n; ++i) acc += density(t0 + i * h) * (i % 2 ? 4.0 : 2.0);
  return 2.0 * acc * h / 3.0;
}

}  // namespace

TEST_CASE("identity estimate scores perfectly") {
  auto truth = seeded_matrix(6, 9, 1);
  auto m = evaluate_metrics(truth, truth);
  CHECK(m.re == 0.0);
  CHECK(m.cc == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m.mse == 0.0);
}

TEST_CASE("doubling the field gives RE 1 with perfect correlation") {
  auto truth = seeded_matrix(5, 8, 2);
  auto m = evaluate_metrics(2.0 * truth, truth);
  CHECK(m.re == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.cc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant offset changes MSE but not CC") {
  auto truth = seeded_matrix(5, 7, 3);
  Eigen::MatrixXd est = truth.array() + 0.1;
  auto m = evaluate_metrics(est, truth);
  CHECK(std::abs(m.cc - 1.0) < 1e-10);
  CHECK(m.mse == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under simultaneous permutations") {
  auto truth = seeded_matrix(6, 10, 4);
  Eigen::MatrixXd est = truth + 0.3 * seeded_matrix(6, 10, 5);
  auto base = evaluate_metrics(est, truth);

  std::vector<int> rp = {5, 2, 0, 4, 1, 3}, cp = {9, 0, 4, 2, 7, 1, 8, 3, 6, 5};
  Eigen::MatrixXd et(6, 10), tt(6, 10);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 10; ++j) {
      et(i, j) = est(rp[i], cp[j]);
      tt(i, j) = truth(rp[i], cp[j]);
    }
  auto perm = evaluate_metrics(et, tt);
  CHECK(perm.re == doctest::Approx(base.re).epsilon(1e-12));
  CHECK(perm.cc == doctest::Approx(base.cc).epsilon(1e-12));
  CHECK(perm.mse == doctest::Approx(base.mse).epsilon(1e-12));
}

TEST_CASE("CC is invariant under per-row positive affine maps") {
  auto truth = seeded_matrix(7, 12, 6);
  Eigen::MatrixXd est = truth + 0.25 * seeded_matrix(7, 12, 7);
  auto base = evaluate_metrics(est, truth);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> a_dist(0.2, 4.0), b_dist(-2.0, 2.0);
  Eigen::MatrixXd mapped = est;
  for (int i = 0; i < mapped.rows(); ++i)
    mapped.row(i) = a_dist(rng) * est.row(i).array() + b_dist(rng);
  auto m = evaluate_metrics(mapped, truth);
  CHECK(std::abs(m.cc - base.cc) < 1e-10);
}

TEST_CASE("zero-norm truth and zero-variance rows") {
  auto est = seeded_matrix(3, 4, 9);
  CHECK_THROWS_AS(evaluate_metrics(est, Eigen::MatrixXd::Zero(3, 4)), std::invalid_argument);

  auto truth = seeded_matrix(3, 4, 10);
  truth.row(1).setConstant(2.0);  // zero temporal variance
  auto m = evaluate_metrics(est, truth);
  CHECK(m.cc_excluded_rows == 1);
}

TEST_CASE("welch test reproduces the published p-value") {
  auto r = welch_t_test(0.1490, 0.0123, 10, 0.1426, 1e-5, 10);
  CHECK(std::abs(r.p - 0.1343) < 0.002);
  CHECK(r.nu == doctest::Approx(9.0).epsilon(1e-4));
}

TEST_CASE("identical samples give t = 0 and p = 1") {
  auto r = welch_t_test(0.5, 0.1, 10, 0.5, 0.2, 12);
  CHECK(r.t == 0.0);
  CHECK(r.p == 1.0);
}

TEST_CASE("clearly separated samples give a vanishing p") {
  auto r = welch_t_test(1.0, 0.1, 30, 0.0, 0.1, 30);
  CHECK(r.t == doctest::Approx(38.73).epsilon(1e-3));
  CHECK(r.p < 1e-10);
  CHECK(r.p >= 0.0);
}

TEST_CASE("p matches a quadrature oracle at moderate separation") {
  for (auto [ma, mb] : {std::pair{0.149, 0.1426}, {0.6, 0.5}, {0.52, 0.5}}) {
    auto r = welch_t_test(ma, 0.0123, 10, mb, 0.01, 10);
    const double oracle = t_two_sided_by_quadrature(r.t, r.nu);
    CHECK(std::abs(r.p - oracle) < 1e-8);
  }
}

TEST_CASE("welch test is antisymmetric in t and symmetric in p") {
  auto ab = welch_t_test(0.3, 0.05, 8, 0.25, 0.07, 9);
  auto ba = welch_t_test(0.25, 0.07, 9, 0.3, 0.05, 8);
  CHECK(ab.t == doctest::Approx(-ba.t).epsilon(1e-14));
  CHECK(ab.p == doctest::Approx(ba.p).epsilon(1e-12));
  CHECK(ab.nu == doctest::Approx(ba.nu).epsilon(1e-12));
}

TEST_CASE("p stays in [0, 1] over random inputs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mean(-2.0, 2.0), sd(0.001, 2.0);
  std::uniform_int_distribution<int> n(2, 40);
  for (int rep = 0; rep < 200; ++rep) {
    auto r = welch_t_test(mean(rng), sd(rng), n(rng), mean(rng), sd(rng), n(rng));
    CHECK(r.p >= 0.0);
    CHECK(r.p <= 1.0);
  }
}

TEST_CASE("degenerate welch inputs are rejected") {
  CHECK_THROWS_AS(welch_t_test(0, 1, 1, 0, 1, 10), std::invalid_argument);
  CHECK_THROWS_AS(welch_t_test(0, 0, 10, 0, 0, 10), std::invalid_argument);
}

TEST_CASE("report summaries aggregate trials") {
  MetricReport rep;
  rep.trials = {{0.1, 0.9, 0.01, 0}, {0.2, 0.8, 0.02, 0}, {0.3, 0.7, 0.03, 0}};
  CHECK(rep.re().mean == doctest::Approx(0.2));
  CHECK(rep.re().sd == doctest::Approx(0.1));
  CHECK(rep.cc().mean == doctest::Approx(0.8));
}
