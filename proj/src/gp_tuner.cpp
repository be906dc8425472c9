#include "ecgi/gp_tuner.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ecgi/common.hpp"

namespace ecgi::gp_tuner {

void TunerConfig::validate() const {
  if (!(0.0 < w_lo && w_lo < w_hi)) throw std::invalid_argument("TunerConfig: need 0 < w_lo < w_hi");
  if (beta <= 0.0) throw std::invalid_argument("TunerConfig: beta must be positive");
  if (grid_points < 2) throw std::invalid_argument("TunerConfig: need at least two grid points");
  if (max_iterations < 1) throw std::invalid_argument("TunerConfig: need at least one iteration");
  if (convergence_tol <= 0.0) throw std::invalid_argument("TunerConfig: bad convergence threshold");
}

double balance_metric(double l_hb, double l_ph, double l_total) {
  if (l_hb <= 0.0 || l_ph <= 0.0 || l_total <= 0.0)
    throw std::domain_error("balance_metric: nonpositive loss (degenerate training run)");
  return std::log((l_hb / l_ph + l_ph / l_hb) * l_total);
}

namespace {

Eigen::MatrixXd kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double sigma_m, double l) {
  Eigen::MatrixXd k(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < b.size(); ++j) {
      const double d = a[i] - b[j];
      k(i, j) = sigma_m * sigma_m * std::exp(-d * d / (2.0 * l * l));
    }
  return k;
}

double log_marginal_likelihood(const Eigen::VectorXd& w, const Eigen::VectorXd& m, double sigma_m,
                               double l, double noise_sd) {
  const int n = static_cast<int>(w.size());
  Eigen::MatrixXd k = kernel(w, w, sigma_m, l);
  k.diagonal().array() += noise_sd * noise_sd + 1e-12;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = llt.solve(m);
  double log_det = 0.0;
  for (int i = 0; i < n; ++i) log_det += std::log(llt.matrixL()(i, i));
  return -0.5 * m.dot(alpha) - log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace

GPSurrogate gp_fit(const Eigen::VectorXd& w_obs, const Eigen::VectorXd& m_obs) {
  if (w_obs.size() != m_obs.size() || w_obs.size() < 1)
    throw std::invalid_argument("gp_fit: need matching, nonempty observations");

  GPSurrogate s;
  s.w_obs = w_obs;
  s.noise_sd = 1e-4;
  // center the observations; the zero-mean prior then models the variation
  // around the sample mean instead of absorbing the offset into the kernel
  s.mean_offset = m_obs.mean();
  s.m_obs = m_obs.array() - s.mean_offset;
  if (w_obs.size() == 1) {
    // no likelihood signal from one point; documented fallback values
    s.sigma_m = std::max(1.0, std::abs(m_obs[0]));
    s.length_scale = 0.1;
    return s;
  }

  // Length scales below the observation spacing degenerate into a
  // white-noise fit (every point explained independently), which starves
  // the acquisition of exploration signal; floor the grid at half the
  // median adjacent gap.
  std::vector<double> sorted(w_obs.data(), w_obs.data() + w_obs.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> gaps;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] - sorted[i - 1] > 0.0) gaps.push_back(sorted[i] - sorted[i - 1]);
  double l_floor = 1e-2;
  if (!gaps.empty()) {
    std::sort(gaps.begin(), gaps.end());
    l_floor = std::min(std::max(l_floor, 0.5 * gaps[gaps.size() / 2]), 1e2);
  }

  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 25; ++i) {
    const double sigma_m = std::pow(10.0, -2.0 + 4.0 * i / 24.0);
    for (int j = 0; j < 25; ++j) {
      const double l = std::pow(10.0, -2.0 + 4.0 * j / 24.0);
      if (l < l_floor) continue;
      const double lml = log_marginal_likelihood(w_obs, s.m_obs, sigma_m, l, s.noise_sd);
      if (lml > best) {
        best = lml;
        s.sigma_m = sigma_m;
        s.length_scale = l;
      }
    }
  }
  if (!std::isfinite(best)) throw std::runtime_error("gp_fit: kernel matrix ill-conditioned for every candidate");
  return s;
}

GPPrediction gp_predict(const GPSurrogate& s, double w_star) {
  if (s.w_obs.size() < 1) throw std::invalid_argument("gp_predict: empty surrogate");
  Eigen::MatrixXd k = kernel(s.w_obs, s.w_obs, s.sigma_m, s.length_scale);
  k.diagonal().array() += s.noise_sd * s.noise_sd;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    k.diagonal().array() += 1e-10 * k.diagonal().maxCoeff();
    llt.compute(k);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("gp_predict: kernel matrix factorization failed");
  }

  Eigen::VectorXd star(1);
  star[0] = w_star;
  const Eigen::MatrixXd k_star = kernel(star, s.w_obs, s.sigma_m, s.length_scale);  // 1 x n
  const Eigen::VectorXd alpha = llt.solve(s.m_obs);

  GPPrediction p;
  p.mean = (k_star * alpha)(0, 0) + s.mean_offset;
  const Eigen::VectorXd v = llt.solve(k_star.transpose());
  p.variance = s.sigma_m * s.sigma_m - (k_star * v)(0, 0);
  if (p.variance < -1e-10) throw std::runtime_error("gp_predict: negative posterior variance");
  p.variance = std::max(p.variance, 0.0);
  return p;
}

namespace {

double beta_at(const TunerConfig& cfg, int iteration) {
  if (!cfg.beta_schedule) return cfg.beta;
  const double a = static_cast<double>(cfg.grid_points);
  const double i = static_cast<double>(std::max(iteration, 1));
  return 2.0 * std::log(a * i * i * std::numbers::pi * std::numbers::pi / (6.0 * cfg.schedule_delta));
}

}  // namespace

double ucb_select(const GPSurrogate& s, const TunerConfig& cfg, int iteration,
                  const std::vector<double>& exclude) {
  cfg.validate();
  const double beta = beta_at(cfg, iteration);
  const double cell = (cfg.w_hi - cfg.w_lo) / (cfg.grid_points - 1);

  double best_w = cfg.w_lo;
  double best_acq = -std::numeric_limits<double>::infinity();
  for (int g = 0; g < cfg.grid_points; ++g) {
    const double w = cfg.w_lo + g * cell;
    bool skip = false;
    for (double e : exclude)
      if (std::abs(w - e) < 0.5 * cell) skip = true;
    if (skip) continue;
    const auto p = gp_predict(s, w);
    const double acq = -p.mean + std::sqrt(beta) * std::sqrt(p.variance);
    if (acq > best_acq) {  // strict: ties stay at the smallest w
      best_acq = acq;
      best_w = w;
    }
  }
  return best_w;
}

TuneResult tune(const std::function<pdl::LossBreakdown(double)>& trainer, const TunerConfig& cfg) {
  cfg.validate();
  TuneResult result;
  std::vector<double> w_obs, m_obs, excluded;

  double w_curr = 0.5 * (cfg.w_lo + cfg.w_hi);
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    TuneTraceRow row;
    row.iteration = iter;
    row.w = w_curr;
    try {
      row.losses = trainer(w_curr);
      row.m = balance_metric(row.losses.l_hb, row.losses.l_ph, row.losses.l_total);
      w_obs.push_back(w_curr);
      m_obs.push_back(row.m);
    } catch (const std::domain_error&) {
      row.discarded = true;  // degenerate run at this w; exclude and move on
      excluded.push_back(w_curr);
    }

    double w_next;
    if (w_obs.empty()) {
      w_next = excluded.size() % 2 ? cfg.w_lo : cfg.w_hi;
    } else {
      const auto surrogate =
          gp_fit(Eigen::Map<const Eigen::VectorXd>(w_obs.data(), static_cast<int>(w_obs.size())),
                 Eigen::Map<const Eigen::VectorXd>(m_obs.data(), static_cast<int>(m_obs.size())));
      w_next = ucb_select(surrogate, cfg, iter + 1, excluded);
    }

    if (!row.discarded && static_cast<int>(w_obs.size()) >= cfg.min_observations &&
        std::abs(w_next - w_curr) < cfg.convergence_tol) {
      row.converged = true;
      result.trace.push_back(row);
      result.w_opt = w_next;
      result.converged = true;
      return result;
    }
    result.trace.push_back(row);
    w_curr = w_next;
  }

  // budget exhausted: best observed m, flagged as non-converged
  result.converged = false;
  if (!m_obs.empty()) {
    int best = 0;
    for (std::size_t i = 1; i < m_obs.size(); ++i)
      if (m_obs[i] < m_obs[best]) best = static_cast<int>(i);
    result.w_opt = w_obs[best];
  } else {
    result.w_opt = w_curr;
  }
  return result;
}

void save_trace(const TuneResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trace: cannot open " + path);
  out << "iteration,w,L_hb,L_ph,L_total,m,converged_flag\n";
  for (const auto& row : result.trace) {
    out << row.iteration << "," << fmt_exact(row.w) << "," << fmt_exact(row.losses.l_hb) << ","
        << fmt_exact(row.losses.l_ph) << "," << fmt_exact(row.losses.l_total) << ","
        << (row.discarded ? "nan" : fmt_exact(row.m)) << "," << (row.converged ? 1 : 0) << "\n";
  }
}

}  // namespace ecgi::gp_tuner
