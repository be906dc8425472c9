#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgi/baselines.hpp"
#include "ecgi/evalkit.hpp"
#include "ecgi/forward_sim.hpp"
#include "ecgi/geometry.hpp"
#include "ecgi/transfer.hpp"
#include "support/tikhonov_oracle.hpp"

using namespace ecgi;
using namespace ecgi::baselines;

namespace {

Eigen::MatrixXd seeded_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
  return m;
}

double stre_objective(const Eigen::MatrixXd& u, const Eigen::MatrixXd& y, const Eigen::MatrixXd& r,
                      const Eigen::MatrixXd& g, const StreConfig& cfg) {
  const int t_count = static_cast<int>(y.cols());
  const int half = cfg.window / 2;
  double obj = 0.0;
  for (int t = 0; t < t_count; ++t) {
    obj += (y.col(t) - r * u.col(t)).squaredNorm();
    obj += cfg.lambda_s * cfg.lambda_s * (g * u.col(t)).squaredNorm();
    for (int d = -half; d <= half; ++d) {
      const int tau = t + d;
      if (tau < 0 || tau >= t_count || tau == t) continue;
      obj += cfg.lambda_t * cfg.lambda_t * (u.col(t) - u.col(tau)).squaredNorm();
    }
  }
  return obj;
}

}  // namespace

TEST_CASE("first-order operator annihilates constants and differences linear fields") {
  auto d = geometry::build_grid(4, 3, 0.5);
  auto op = first_order_operator(d);
  CHECK(op.cols == 12);
  Eigen::VectorXd c = Eigen::VectorXd::Constant(12, 1.7);
  CHECK(op.apply(c).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd x(12);
  for (int i = 0; i < 12; ++i) x[i] = d.node_coords(i, 0);
  Eigen::VectorXd gx = op.apply(x);
  // every edge difference of u=x is either +-1 (horizontal) or 0 (vertical)
  for (int i = 0; i < gx.size(); ++i)
    CHECK((std::abs(std::abs(gx[i]) - 1.0) < 1e-14 || std::abs(gx[i]) < 1e-14));
}

TEST_CASE("tikhonov identity limits") {
  Eigen::MatrixXd y = seeded_matrix(6, 4, 1);
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(6, 6);

  auto near_y = tikhonov_solve(y, eye, nullptr, 1e-8);
  CHECK((near_y - y).cwiseAbs().maxCoeff() < 1e-6);

  auto half_y = tikhonov_solve(y, eye, nullptr, 1.0);
  CHECK((half_y - 0.5 * y).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(tikhonov_solve(y, eye, nullptr, 0.0), std::invalid_argument);
}

TEST_CASE("tikhonov satisfies its normal equations") {
  auto d = geometry::build_grid(4, 4, 1.0);
  auto t = transfer::synth_transfer(d, 8, 2.0, 3);
  Eigen::MatrixXd y = seeded_matrix(8, 10, 2);
  auto gamma = first_order_operator(d);

  for (int order = 0; order < 2; ++order) {
    const geometry::SparseOperator* g = order ? &gamma : nullptr;
    auto u = tikhonov_solve(y, t.R, g, 0.1);
    Eigen::MatrixXd gg = g ? Eigen::MatrixXd(g->dense().transpose() * g->dense())
                           : Eigen::MatrixXd(Eigen::MatrixXd::Identity(16, 16));
    Eigen::MatrixXd a = t.R.transpose() * t.R + 0.01 * gg;
    Eigen::MatrixXd rty = t.R.transpose() * y;
    for (int c = 0; c < y.cols(); ++c)
      CHECK((a * u.col(c) - rty.col(c)).norm() < 1e-8 * rty.col(c).norm());
  }
}

TEST_CASE("tikhonov matches the gradient-descent oracle on seeded systems") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    std::uniform_int_distribution<int> md(3, 8), nd(4, 12);
    const int m = md(rng), n = nd(rng);
    Eigen::MatrixXd r = seeded_matrix(m, n, 100 + rep);
    Eigen::VectorXd y = seeded_matrix(m, 1, 200 + rep);
    Eigen::MatrixXd g = Eigen::MatrixXd::Identity(n, n);

    auto closed = tikhonov_solve(y, r, nullptr, 0.1);
    auto oracle = testsupport::tikhonov_gradient_descent(r, y, g, 0.1);
    CHECK((closed - oracle).norm() / oracle.norm() < 1e-6);
  }
}

TEST_CASE("stre with zero temporal weight reduces to tikhonov") {
  auto d = geometry::build_grid(3, 3, 1.0);
  auto t = transfer::synth_transfer(d, 5, 2.0, 9);
  Eigen::MatrixXd y = seeded_matrix(5, 8, 11);
  auto gamma = first_order_operator(d);

  StreConfig cfg;
  cfg.lambda_s = 0.2;
  cfg.lambda_t = 0.0;
  cfg.window = 2;
  auto stre = stre_solve(y, t.R, &gamma, cfg);
  auto tikh = tikhonov_solve(y, t.R, &gamma, 0.2);
  CHECK((stre - tikh).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("large temporal weight pulls columns toward the temporal mean") {
  Eigen::MatrixXd y = seeded_matrix(5, 9, 13);
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(5, 5);
  StreConfig cfg;
  cfg.lambda_s = 0.01;
  cfg.window = 4;

  double prev = std::numeric_limits<double>::infinity();
  for (double lt : {1e1, 1e2, 1e3}) {
    cfg.lambda_t = lt;
    auto u = stre_solve(y, eye, nullptr, cfg);
    double dev = 0.0;
    const Eigen::VectorXd mean = u.rowwise().mean();
    for (int c = 0; c < u.cols(); ++c) dev = std::max(dev, (u.col(c) - mean).cwiseAbs().maxCoeff());
    CHECK(dev < prev);
    prev = dev;
  }
}

TEST_CASE("stre solution is locally optimal for its objective") {
  Eigen::MatrixXd r = seeded_matrix(2, 3, 17);
  Eigen::MatrixXd y = seeded_matrix(2, 5, 19);
  StreConfig cfg;
  cfg.lambda_s = 0.3;
  cfg.lambda_t = 0.4;
  cfg.window = 2;
  auto u = stre_solve(y, r, nullptr, cfg);

  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  const double at_solution = stre_objective(u, y, r, eye, cfg);
  std::mt19937_64 rng(23);
  std::normal_distribution<double> gauss(0.0, 1e-2);
  for (int rep = 0; rep < 1000; ++rep) {
    Eigen::MatrixXd pert = u;
    for (int i = 0; i < pert.size(); ++i) pert.data()[i] += gauss(rng);
    CHECK(stre_objective(pert, y, r, eye, cfg) >= at_solution);
  }
}

TEST_CASE("sigma point weights and moments") {
  std::mt19937_64 rng(29);
  std::uniform_int_distribution<int> nd(2, 20);
  for (int rep = 0; rep < 6; ++rep) {
    const int n = nd(rng);
    Eigen::MatrixXd half = seeded_matrix(n, n, 300 + rep);
    Eigen::MatrixXd cov = half * half.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd mean = seeded_matrix(n, 1, 400 + rep);

    auto s = ut_sigma_points(mean, cov, 0.0);
    CHECK(std::abs(s.w_mean.sum() - 1.0) < 1e-12);
    CHECK((s.points * s.w_mean - mean).cwiseAbs().maxCoeff() < 1e-10);

    Eigen::MatrixXd centered = s.points.colwise() - mean;
    Eigen::MatrixXd rebuilt = centered * s.w_mean.asDiagonal() * centered.transpose();
    // the non-center weights reconstruct the covariance
    CHECK((rebuilt - cov).cwiseAbs().maxCoeff() < 1e-8 * cov.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("sigma points at N=2, kappa=1 sit at sqrt(3) offsets") {
  Eigen::VectorXd mean(2);
  mean << 1.0, -2.0;
  auto s = ut_sigma_points(mean, Eigen::MatrixXd::Identity(2, 2), 1.0);
  CHECK(s.points.col(1)[0] == doctest::Approx(1.0 + std::sqrt(3.0)).epsilon(1e-12));
  CHECK(s.points.col(2)[1] == doctest::Approx(-2.0 + std::sqrt(3.0)).epsilon(1e-12));
  CHECK(s.points.col(3)[0] == doctest::Approx(1.0 - std::sqrt(3.0)).epsilon(1e-12));
  CHECK(s.w_mean[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s.w_cov[0] == doctest::Approx(1.0 / 3.0 + 2.0).epsilon(1e-12));
}

TEST_CASE("kalman limit: tiny measurement noise tracks the data") {
  auto d = geometry::build_grid(4, 4, 1.0);
  forward_sim::APParameters params;
  forward_sim::StimulusSpec stim;
  stim.nodes = {0, 1, 4, 5};
  auto truth = forward_sim::simulate(d, params, stim, 120, 0.01, 1);

  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(16, 16);
  PkfConfig cfg;
  cfg.init = PkfInit::Truth;
  cfg.m_phi = 1e-12;
  cfg.q_phi = 10.0;
  auto res = pkf_solve(truth.u, eye, d, params, cfg, 0.01, truth.u.col(0));
  // skip the initial column: it is the initialization, not a filtered value
  const Eigen::MatrixXd est = res.u.rightCols(119);
  const Eigen::MatrixXd ref = truth.u.rightCols(119);
  CHECK((est - ref).norm() / ref.norm() < 1e-3);
}

TEST_CASE("pkf initialization sensitivity on a small problem") {
  auto d = geometry::build_grid(8, 8, 1.0);
  forward_sim::APParameters params;
  forward_sim::StimulusSpec stim;
  for (int iy = 0; iy < 2; ++iy)
    for (int ix = 0; ix < 2; ++ix) stim.nodes.push_back(iy * 8 + ix);
  auto truth = forward_sim::simulate(d, params, stim, 300, 0.01, 1);
  auto t = transfer::synth_transfer(d, 16, 3.0, 5);
  auto y = forward_sim::make_bspm(truth, t, 0.01, 77);

  PkfConfig cfg;
  cfg.m_phi = 1e-4;
  cfg.init = PkfInit::Truth;
  auto with_truth = pkf_solve(y, t.R, d, params, cfg, 0.01, truth.u.col(0));
  cfg.init = PkfInit::Zero;
  auto with_zero = pkf_solve(y, t.R, d, params, cfg, 0.01);

  const double re_truth = evalkit::evaluate_metrics(with_truth.u, truth.u).re;
  const double re_zero = evalkit::evaluate_metrics(with_zero.u, truth.u).re;
  CHECK(re_truth < 0.5);
  CHECK(re_zero > 3.0 * re_truth);
}

TEST_CASE("pkf argument validation") {
  auto d = geometry::build_grid(3, 3, 1.0);
  forward_sim::APParameters params;
  Eigen::MatrixXd y = seeded_matrix(4, 5, 1);
  Eigen::MatrixXd r = seeded_matrix(4, 9, 2);
  PkfConfig cfg;
  cfg.init = PkfInit::Truth;
  CHECK_THROWS_AS(pkf_solve(y, r, d, params, cfg, 0.01), std::invalid_argument);  // missing truth
  cfg.init = PkfInit::Zero;
  cfg.m_phi = 0.0;
  CHECK_THROWS_AS(pkf_solve(y, r, d, params, cfg, 0.01), std::invalid_argument);
}
