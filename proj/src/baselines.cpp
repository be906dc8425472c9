#include "ecgi/baselines.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ecgi/common.hpp"

namespace ecgi::baselines {

void StreConfig::validate() const {
  if (lambda_s <= 0.0 || lambda_t < 0.0) throw std::invalid_argument("StreConfig: lambda_s must be > 0");
  if (window < 2 || window % 2 != 0) throw std::invalid_argument("StreConfig: window must be even and >= 2");
}

geometry::SparseOperator first_order_operator(const geometry::SpatialDomain& domain) {
  const int n = domain.node_count();
  std::set<std::pair<int, int>> edges;
  if (domain.kind == geometry::DomainKind::Grid2D) {
    for (int iy = 0; iy < domain.ny; ++iy)
      for (int ix = 0; ix < domain.nx; ++ix) {
        const int id = iy * domain.nx + ix;
        if (ix + 1 < domain.nx) edges.insert({id, id + 1});
        if (iy + 1 < domain.ny) edges.insert({id, id + domain.nx});
      }
  } else {
    for (int f = 0; f < domain.elements.rows(); ++f)
      for (int k = 0; k < 3; ++k) {
        int a = domain.elements(f, k), b = domain.elements(f, (k + 1) % 3);
        edges.insert({std::min(a, b), std::max(a, b)});
      }
  }
  geometry::SparseOperator op;
  op.rows = static_cast<int>(edges.size());
  op.cols = n;
  int row = 0;
  for (const auto& [a, b] : edges) {
    const double len = (domain.node_coords.row(a) - domain.node_coords.row(b)).norm();
    op.entries.push_back({row, a, 1.0 / len});
    op.entries.push_back({row, b, -1.0 / len});
    ++row;
  }
  return op;
}

namespace {

Eigen::MatrixXd normal_matrix(const Eigen::MatrixXd& R, const geometry::SparseOperator* gamma,
                              double lambda) {
  const int n = static_cast<int>(R.cols());
  Eigen::MatrixXd a = R.transpose() * R;
  if (gamma) {
    if (gamma->cols != n) throw std::invalid_argument("tikhonov: operator column mismatch");
    const Eigen::MatrixXd g = gamma->dense();
    a += lambda * lambda * g.transpose() * g;
  } else {
    a.diagonal().array() += lambda * lambda;
  }
  return a;
}

}  // namespace

Eigen::MatrixXd tikhonov_solve(const Eigen::MatrixXd& y, const Eigen::MatrixXd& R,
                               const geometry::SparseOperator* gamma, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("tikhonov_solve: lambda must be positive");
  if (y.rows() != R.rows()) throw std::invalid_argument("tikhonov_solve: sensor count mismatch");

  const Eigen::MatrixXd a = normal_matrix(R, gamma, lambda);
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("tikhonov_solve: normal matrix is not positive definite");
  return llt.solve(R.transpose() * y);
}

Eigen::MatrixXd stre_solve(const Eigen::MatrixXd& y, const Eigen::MatrixXd& R,
                           const geometry::SparseOperator* gamma, const StreConfig& cfg) {
  cfg.validate();
  const int t_count = static_cast<int>(y.cols());
  const int n = static_cast<int>(R.cols());
  if (t_count <= cfg.window) throw std::invalid_argument("stre_solve: need more time steps than the window");

  const Eigen::MatrixXd a_s = normal_matrix(R, gamma, cfg.lambda_s);
  const Eigen::MatrixXd b = R.transpose() * y;
  const double lt2 = 2.0 * cfg.lambda_t * cfg.lambda_t;
  const int half = cfg.window / 2;

  // window sizes (they shrink at the sequence ends)
  Eigen::VectorXd wcount(t_count);
  for (int t = 0; t < t_count; ++t)
    wcount[t] = static_cast<double>(std::min(t, half) + std::min(t_count - 1 - t, half));

  auto apply = [&](const Eigen::MatrixXd& u) {
    Eigen::MatrixXd z = a_s * u;
    if (lt2 > 0.0) {
      z += lt2 * (u * wcount.asDiagonal());
      for (int d = 1; d <= half; ++d) {
        z.rightCols(t_count - d) -= lt2 * u.leftCols(t_count - d);
        z.leftCols(t_count - d) -= lt2 * u.rightCols(t_count - d);
      }
    }
    return z;
  };

  // block-Jacobi preconditioner, one factorization per distinct window size
  std::vector<Eigen::LLT<Eigen::MatrixXd>> precs;
  std::vector<int> prec_of(t_count);
  {
    std::vector<double> seen;
    for (int t = 0; t < t_count; ++t) {
      auto it = std::find(seen.begin(), seen.end(), wcount[t]);
      if (it == seen.end()) {
        seen.push_back(wcount[t]);
        Eigen::MatrixXd m = a_s;
        m.diagonal().array() += lt2 * wcount[t];
        precs.emplace_back(m);
        if (precs.back().info() != Eigen::Success)
          throw std::runtime_error("stre_solve: preconditioner factorization failed");
        prec_of[t] = static_cast<int>(precs.size()) - 1;
      } else {
        prec_of[t] = static_cast<int>(it - seen.begin());
      }
    }
  }
  auto precondition = [&](const Eigen::MatrixXd& r) {
    Eigen::MatrixXd z(n, t_count);
    for (int t = 0; t < t_count; ++t) z.col(t) = precs[prec_of[t]].solve(r.col(t));
    return z;
  };

  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, t_count);
  Eigen::MatrixXd r = b;  // residual b - A*0
  Eigen::MatrixXd z = precondition(r);
  Eigen::MatrixXd p = z;
  double rz = (r.array() * z.array()).sum();
  const double b_norm = b.norm();
  const int max_iter = 50 * t_count + 1000;

  for (int it = 0; it < max_iter; ++it) {
    if (r.norm() <= 1e-8 * b_norm) return u;
    const Eigen::MatrixXd ap = apply(p);
    const double alpha = rz / (p.array() * ap.array()).sum();
    u += alpha * p;
    r -= alpha * ap;
    const Eigen::MatrixXd z_next = precondition(r);
    const double rz_next = (r.array() * z_next.array()).sum();
    p = z_next + (rz_next / rz) * p;
    rz = rz_next;
  }
  throw std::runtime_error("stre_solve: CG did not reach 1e-8 relative residual (got " +
                           std::to_string(r.norm() / b_norm) + ")");
}

SigmaPoints ut_sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double kappa,
                            double p, double q) {
  const int n = static_cast<int>(mean.size());
  if (cov.rows() != n || cov.cols() != n) throw std::invalid_argument("ut_sigma_points: covariance size mismatch");
  if (n + kappa <= 0.0) throw std::invalid_argument("ut_sigma_points: need N + kappa > 0");

  const Eigen::MatrixXd scaled = (n + kappa) * cov;
  Eigen::LLT<Eigen::MatrixXd> llt(scaled);
  if (llt.info() != Eigen::Success) {
    // escalating diagonal jitter before giving up
    const double scale = std::max(scaled.diagonal().maxCoeff(), 1e-30);
    for (double jitter = 1e-12; jitter <= 1e-6 + 1e-18; jitter *= 100.0) {
      Eigen::MatrixXd m = scaled;
      m.diagonal().array() += jitter * scale;
      llt.compute(m);
      if (llt.info() == Eigen::Success) break;
    }
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("ut_sigma_points: covariance factorization failed after jitter");
  }
  const Eigen::MatrixXd l = llt.matrixL();

  SigmaPoints s;
  s.points.resize(n, 2 * n + 1);
  s.points.col(0) = mean;
  for (int i = 0; i < n; ++i) {
    s.points.col(1 + i) = mean + l.col(i);
    s.points.col(1 + n + i) = mean - l.col(i);
  }
  s.w_mean.setConstant(2 * n + 1, 1.0 / (2.0 * (n + kappa)));
  s.w_cov = s.w_mean;
  s.w_mean[0] = kappa / (n + kappa);
  s.w_cov[0] = s.w_mean[0] + (1.0 - p * p + q);
  return s;
}

PkfResult pkf_solve(const Eigen::MatrixXd& y, const Eigen::MatrixXd& R,
                    const geometry::SpatialDomain& domain, const forward_sim::APParameters& params,
                    const PkfConfig& cfg, double dt, const std::optional<Eigen::VectorXd>& truth_u0) {
  params.validate();
  const int n = domain.node_count();
  const int t_count = static_cast<int>(y.cols());
  if (R.cols() != n) throw std::invalid_argument("pkf_solve: transfer column mismatch");
  if (y.rows() != R.rows()) throw std::invalid_argument("pkf_solve: sensor count mismatch");
  if (cfg.q_phi <= 0.0 || cfg.m_phi <= 0.0) throw std::invalid_argument("pkf_solve: noise scales must be positive");

  Eigen::VectorXd u0;
  switch (cfg.init) {
    case PkfInit::Truth:
      if (!truth_u0) throw std::invalid_argument("pkf_solve: truth initialization needs the t=0 field");
      u0 = *truth_u0;
      break;
    case PkfInit::Perturbed: {
      if (!truth_u0) throw std::invalid_argument("pkf_solve: perturbed initialization needs the t=0 field");
      auto rng = make_rng(cfg.init_seed, hash_name("pkf_init"));
      std::normal_distribution<double> gauss(0.0, cfg.init_sigma);
      u0 = *truth_u0;
      for (int i = 0; i < n; ++i) u0[i] += gauss(rng);
      break;
    }
    case PkfInit::RandomSite: {
      auto rng = make_rng(cfg.init_seed, hash_name("pkf_init"));
      std::uniform_int_distribution<int> pick(0, n - 1);
      u0 = Eigen::VectorXd::Zero(n);
      u0[pick(rng)] = 1.0;
      break;
    }
    case PkfInit::Zero: u0 = Eigen::VectorXd::Zero(n); break;
  }

  const auto lap = laplacian_operator(domain);
  PkfResult res;
  res.u.setZero(n, t_count);
  res.v_bar.setZero(n, t_count);
  res.u.col(0) = u0;

  Eigen::VectorXd u_hat = u0;
  Eigen::VectorXd v_bar = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd p_hat = cfg.initial_cov * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd m_phi = cfg.m_phi * Eigen::MatrixXd::Identity(R.rows(), R.rows());

  Eigen::VectorXd du, dv;
  for (int t = 1; t < t_count; ++t) {
    auto sig = ut_sigma_points(u_hat, p_hat, cfg.kappa_ut, cfg.p_ut, cfg.q_ut);
    const int n_sig = static_cast<int>(sig.points.cols());

    Eigen::MatrixXd u_prop(n, n_sig), v_prop(n, n_sig);
    for (int i = 0; i < n_sig; ++i) {
      forward_sim::ap_rhs(sig.points.col(i), v_bar, params, lap, du, dv);
      u_prop.col(i) = sig.points.col(i) + dt * du;
      v_prop.col(i) = v_bar + dt * dv;
    }

    const Eigen::VectorXd u_minus = u_prop * sig.w_mean;
    v_bar = v_prop * sig.w_mean;
    Eigen::MatrixXd centered = u_prop.colwise() - u_minus;
    Eigen::MatrixXd p_minus =
        centered * sig.w_cov.asDiagonal() * centered.transpose() +
        cfg.q_phi * Eigen::MatrixXd::Identity(n, n);

    const Eigen::MatrixXd prt = p_minus * R.transpose();
    const Eigen::MatrixXd s = R * prt + m_phi;
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("pkf_solve: innovation covariance factorization failed at step " +
                               std::to_string(t));
    const Eigen::MatrixXd k = llt.solve(prt.transpose()).transpose();  // P R^T S^{-1}

    u_hat = u_minus + k * (y.col(t) - R * u_minus);
    p_hat = p_minus - k * R * p_minus;

    const double asym = (p_hat - p_hat.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-6) ++res.resymmetrize_count;
    p_hat = 0.5 * (p_hat + p_hat.transpose()).eval();

    res.u.col(t) = u_hat;
    res.v_bar.col(t) = v_bar;
  }
  return res;
}

}  // namespace ecgi::baselines
