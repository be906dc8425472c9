#include "ecgi/evalkit.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ecgi::evalkit {

using nlohmann::json;

namespace {

MetricReport::Summary summarize(const std::vector<Metrics>& trials, double Metrics::*field) {
  MetricReport::Summary s;
  const double n = static_cast<double>(trials.size());
  if (trials.empty()) return s;
  for (const auto& m : trials) s.mean += m.*field;
  s.mean /= n;
  if (trials.size() > 1) {
    double acc = 0.0;
    for (const auto& m : trials) acc += (m.*field - s.mean) * (m.*field - s.mean);
    s.sd = std::sqrt(acc / (n - 1.0));
  }
  return s;
}

}  // namespace

MetricReport::Summary MetricReport::re() const { return summarize(trials, &Metrics::re); }
MetricReport::Summary MetricReport::cc() const { return summarize(trials, &Metrics::cc); }
MetricReport::Summary MetricReport::mse() const { return summarize(trials, &Metrics::mse); }

Metrics evaluate_metrics(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw std::invalid_argument("evaluate_metrics: shape mismatch");
  const double truth_norm2 = truth.squaredNorm();
  if (truth_norm2 == 0.0) throw std::invalid_argument("evaluate_metrics: zero-norm truth makes RE undefined");

  Metrics m;
  const Eigen::MatrixXd diff = estimate - truth;
  m.re = std::sqrt(diff.squaredNorm()) / std::sqrt(truth_norm2);
  m.mse = diff.squaredNorm() / static_cast<double>(truth.size());

  double cc_sum = 0.0;
  int cc_rows = 0;
  for (int i = 0; i < truth.rows(); ++i) {
    Eigen::RowVectorXd a = estimate.row(i).array() - estimate.row(i).mean();
    Eigen::RowVectorXd b = truth.row(i).array() - truth.row(i).mean();
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
      ++m.cc_excluded_rows;
      continue;
    }
    cc_sum += a.dot(b) / (na * nb);
    ++cc_rows;
  }
  if (cc_rows == 0) throw std::invalid_argument("evaluate_metrics: every row has zero variance");
  m.cc = cc_sum / cc_rows;
  return m;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("regularized_incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;

  // Continued fraction (modified Lentz); converges fastest for
  // x < (a+1)/(a+b+2), otherwise use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
  auto betacf = [](double a, double b, double x) {
    const double tiny = 1e-300;
    const int max_iter = 500;
    const double eps = 1e-14;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
      const double m2 = 2.0 * m;
      double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < eps) return h;
    }
    throw std::runtime_error("regularized_incomplete_beta: continued fraction did not converge");
  };

  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(ln_front) * betacf(a, b, x) / a;
  return 1.0 - std::exp(ln_front) * betacf(b, a, 1.0 - x) / b;
}

WelchResult welch_t_test(double mean_a, double sd_a, int n_a, double mean_b, double sd_b, int n_b) {
  if (n_a < 2 || n_b < 2) throw std::invalid_argument("welch_t_test: need n >= 2 per sample");
  if (sd_a < 0.0 || sd_b < 0.0) throw std::invalid_argument("welch_t_test: negative standard deviation");
  if (sd_a == 0.0 && sd_b == 0.0)
    throw std::invalid_argument("welch_t_test: both variances are zero");

  const double va = sd_a * sd_a / n_a;
  const double vb = sd_b * sd_b / n_b;
  WelchResult r;
  r.t = (mean_a - mean_b) / std::sqrt(va + vb);
  r.nu = (va + vb) * (va + vb) /
         (va * va / (n_a - 1) + vb * vb / (n_b - 1));
  if (r.t == 0.0) {
    r.p = 1.0;
    return r;
  }
  const double x = r.nu / (r.nu + r.t * r.t);
  r.p = regularized_incomplete_beta(r.nu / 2.0, 0.5, x);  // two-sided tail
  return r;
}

void save_report(const MetricReport& report, const std::string& method, double noise_sigma,
                 const std::string& path) {
  json j;
  j["method"] = method;
  j["noise_sigma"] = noise_sigma;
  j["trials"] = report.trials.size();
  auto block = [&](double Metrics::*field, MetricReport::Summary s) {
    json b;
    b["mean"] = s.mean;
    b["sd"] = s.sd;
    json per = json::array();
    for (const auto& m : report.trials) per.push_back(m.*field);
    b["per_trial"] = per;
    return b;
  };
  j["RE"] = block(&Metrics::re, report.re());
  j["CC"] = block(&Metrics::cc, report.cc());
  j["MSE"] = block(&Metrics::mse, report.mse());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report: cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace ecgi::evalkit
