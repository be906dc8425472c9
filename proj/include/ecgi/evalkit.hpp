#ifndef ECGI_EVALKIT_HPP
#define ECGI_EVALKIT_HPP

#include <Eigen/Core>
#include <string>
#include <vector>

namespace ecgi::evalkit {

/// Scores of one reconstruction against the reference field.
struct Metrics {
  double re = 0.0;   // relative error
  double cc = 0.0;   // mean per-location temporal correlation
  double mse = 0.0;
  int cc_excluded_rows = 0;  // zero-variance rows left out of CC
};

/// Per-trial metric collection with mean/sd summaries.
struct MetricReport {
  std::vector<Metrics> trials;

  struct Summary {
    double mean = 0.0;
    double sd = 0.0;
  };
  Summary re() const;
  Summary cc() const;
  Summary mse() const;
};

struct WelchResult {
  double t = 0.0;
  double nu = 0.0;  // Welch-Satterthwaite degrees of freedom
  double p = 0.0;   // two-sided
};

/// RE = sqrt(sum |est-truth|^2) / sqrt(sum |truth|^2); CC averages the
/// per-row (per spatial location) Pearson correlation of the time series;
/// MSE is the mean squared entry difference.
Metrics evaluate_metrics(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth);

/// Two-sample t-test with unequal variances. p comes from the regularized
/// incomplete beta evaluated by continued fraction.
WelchResult welch_t_test(double mean_a, double sd_a, int n_a, double mean_b, double sd_b, int n_b);

/// Regularized incomplete beta I_x(a, b), relative error below 1e-10.
double regularized_incomplete_beta(double a, double b, double x);

/// Report file: JSON {method, noise_sigma, trials, RE/CC/MSE {mean, sd, per_trial}}.
void save_report(const MetricReport& report, const std::string& method, double noise_sigma,
                 const std::string& path);

}  // namespace ecgi::evalkit

#endif
