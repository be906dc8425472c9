#ifndef ECGI_GP_TUNER_HPP
#define ECGI_GP_TUNER_HPP

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "ecgi/pdl_solver.hpp"

namespace ecgi::gp_tuner {

/// Zero-mean GP over the regularization weight with a square-exponential
/// kernel k(w, w') = sigma_m^2 exp(-|w - w'|^2 / (2 l^2)).
struct GPSurrogate {
  Eigen::VectorXd w_obs;
  Eigen::VectorXd m_obs;
  double sigma_m = 1.0;
  double length_scale = 0.1;
  double noise_sd = 1e-4;     // observation noise added for numerical stability
  double mean_offset = 0.0;   // sample mean removed before the zero-mean fit
};

struct TunerConfig {
  double w_lo = 0.05;
  double w_hi = 1.0;
  double beta = 9.0;          // fixed UCB constant
  bool beta_schedule = false; // optional beta_i = 2 log(|A| i^2 pi^2 / (6 delta))
  double schedule_delta = 0.1;
  int grid_points = 512;
  int max_iterations = 25;
  double convergence_tol = 1e-2;
  int min_observations = 5;  // convergence cannot trigger before this many queries

  void validate() const;
};

struct GPPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

struct TuneTraceRow {
  int iteration = 0;
  double w = 0.0;
  pdl::LossBreakdown losses;
  double m = 0.0;
  bool discarded = false;  // degenerate training at this w
  bool converged = false;
};

struct TuneResult {
  double w_opt = 0.0;
  bool converged = false;
  std::vector<TuneTraceRow> trace;
};

/// m(w) = log[(L_hb/L_ph + L_ph/L_hb) * L_total]; the ratio term bottoms
/// out at 2 when the two losses balance. Nonpositive inputs signal a
/// degenerate training run and raise a domain error.
double balance_metric(double l_hb, double l_ph, double l_total);

/// Hyperparameters by grid search over log-spaced (sigma_m, l) maximizing
/// the log marginal likelihood; a single observation falls back to the
/// documented defaults.
GPSurrogate gp_fit(const Eigen::VectorXd& w_obs, const Eigen::VectorXd& m_obs);

GPPrediction gp_predict(const GPSurrogate& surrogate, double w_star);

/// Argmax of -mean + sqrt(beta) * sd over the candidate grid; ties break
/// toward the smallest w. `exclude` lists weights whose queries failed.
double ucb_select(const GPSurrogate& surrogate, const TunerConfig& cfg, int iteration = 1,
                  const std::vector<double>& exclude = {});

/// GP-UCB loop over the trainer callable until successive queries move
/// less than the convergence threshold.
TuneResult tune(const std::function<pdl::LossBreakdown(double)>& trainer, const TunerConfig& cfg);

/// Trace CSV: iteration, w, L_hb, L_ph, L_total, m, converged_flag.
void save_trace(const TuneResult& result, const std::string& path);

}  // namespace ecgi::gp_tuner

#endif
