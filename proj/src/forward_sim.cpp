#include "ecgi/forward_sim.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ecgi/common.hpp"

namespace ecgi::forward_sim {

using nlohmann::json;

void APParameters::validate() const {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("APParameters: a must lie in (0, 1)");
  if (D <= 0.0 || k_r <= 0.0 || e0 <= 0.0 || mu1 <= 0.0 || mu2 <= 0.0)
    throw std::invalid_argument("APParameters: D, k_r, e0, mu1, mu2 must be positive");
}

void ap_rhs(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const APParameters& params,
            const geometry::SparseOperator& lap, Eigen::VectorXd& du, Eigen::VectorXd& dv) {
  const int n = static_cast<int>(u.size());
  if (v.size() != n) throw std::invalid_argument("ap_rhs: u and v sizes differ");
  if (lap.rows != n || lap.cols != n) throw std::invalid_argument("ap_rhs: Laplacian size mismatch");

  du = params.D * lap.apply(u);
  dv.resize(n);
  for (int i = 0; i < n; ++i) {
    const double ui = u[i], vi = v[i];
    du[i] += params.k_r * ui * (ui - params.a) * (1.0 - ui) - ui * vi;
    const double denom = ui + params.mu2;
    if (denom == 0.0)
      throw std::domain_error("ap_rhs: u = -mu2 at node " + std::to_string(i) + " makes xi singular");
    const double xi = params.e0 + params.mu1 * vi / denom;
    dv[i] = xi * (-vi - params.k_r * ui * (ui - params.a - 1.0));
  }
}

double stable_dt_bound(const geometry::SpatialDomain& domain, const APParameters& params) {
  if (domain.kind == geometry::DomainKind::Grid2D)
    return domain.h * domain.h / (8.0 * params.D);
  double max_diag = 0.0;
  for (const auto& e : laplacian_operator(domain).entries)
    if (e.row == e.col) max_diag = std::max(max_diag, std::abs(e.value));
  if (max_diag == 0.0) return std::numeric_limits<double>::infinity();  // no coupling (single node)
  return 1.0 / (4.0 * params.D * max_diag);
}

FieldSeries simulate(const geometry::SpatialDomain& domain, const APParameters& params,
                     const StimulusSpec& stim, int steps, double dt, std::uint64_t seed) {
  params.validate();
  if (steps < 1) throw std::invalid_argument("simulate: steps must be >= 1");
  if (dt <= 0.0) throw std::invalid_argument("simulate: dt must be positive");
  const double bound = stable_dt_bound(domain, params);
  if (dt > bound * (1.0 + 1e-12))
    throw std::invalid_argument("simulate: dt = " + std::to_string(dt) +
                                " exceeds the stability bound " + std::to_string(bound));

  const int n = domain.node_count();
  for (int idx : stim.nodes)
    if (idx < 0 || idx >= n) throw std::invalid_argument("simulate: stimulus node out of range");

  FieldSeries out;
  out.dt = dt;
  out.u.setZero(n, steps);
  out.v.setZero(n, steps);
  out.times.resize(steps);
  for (int t = 0; t < steps; ++t) out.times[t] = t * dt;
  (void)seed;  // Euler is deterministic; the seed is recorded in the sidecar only

  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  for (int idx : stim.nodes) u[idx] = stim.onset_value;
  out.u.col(0) = u;

  const auto lap = laplacian_operator(domain);
  Eigen::VectorXd du, dv;
  for (int t = 1; t < steps; ++t) {
    ap_rhs(u, v, params, lap, du, dv);
    u += dt * du;
    v += dt * dv;
    for (int i = 0; i < n; ++i)
      if (std::abs(u[i]) > 10.0)
        throw std::runtime_error("simulate: blow-up at step " + std::to_string(t) + ", node " +
                                 std::to_string(i) + " (|u| = " + std::to_string(std::abs(u[i])) + ")");
    out.u.col(t) = u;
    out.v.col(t) = v;
  }
  return out;
}

Eigen::MatrixXd make_bspm(const FieldSeries& fields, const transfer::TransferModel& transfer,
                          double sigma_eps, std::uint64_t seed) {
  if (transfer.nodes() != fields.nodes())
    throw std::invalid_argument("make_bspm: transfer columns do not match field nodes");
  if (sigma_eps < 0.0) throw std::invalid_argument("make_bspm: sigma_eps must be >= 0");

  Eigen::MatrixXd y = transfer.R * fields.u;
  if (sigma_eps > 0.0) {
    auto rng = make_rng(seed, hash_name("bspm_noise"));
    std::normal_distribution<double> gauss(0.0, sigma_eps);
    for (int t = 0; t < y.cols(); ++t)
      for (int i = 0; i < y.rows(); ++i) y(i, t) += gauss(rng);
  }
  return y;
}

void save_field_matrix(const Eigen::MatrixXd& field, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_field_matrix: cannot open " + path);
  for (int i = 0; i < field.rows(); ++i) {
    for (int j = 0; j < field.cols(); ++j) {
      if (j) out << ",";
      out << fmt_exact(field(i, j));
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_field_matrix: write failed for " + path);
}

Eigen::MatrixXd load_field_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_field_matrix: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line, cell;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("load_field_matrix: ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("load_field_matrix: empty file " + path);
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.front().size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void save_field_series(const FieldSeries& fields, const APParameters& params, std::uint64_t seed,
                       const std::string& u_path, const std::string& v_path, const std::string& meta_path) {
  save_field_matrix(fields.u, u_path);
  save_field_matrix(fields.v, v_path);
  json meta;
  meta["dt"] = fields.dt;
  meta["times"] = std::vector<double>(fields.times.data(), fields.times.data() + fields.times.size());
  meta["N"] = fields.nodes();
  meta["T"] = fields.steps();
  meta["seed"] = seed;
  meta["params"] = {{"a", params.a}, {"D", params.D},   {"k_r", params.k_r},
                    {"e0", params.e0}, {"mu1", params.mu1}, {"mu2", params.mu2}};
  std::ofstream out(meta_path);
  if (!out) throw std::runtime_error("save_field_series: cannot open " + meta_path);
  out << meta.dump(2) << "\n";
}

FieldSeries load_field_series(const std::string& u_path, const std::string& v_path,
                              const std::string& meta_path) {
  FieldSeries f;
  f.u = load_field_matrix(u_path);
  f.v = load_field_matrix(v_path);
  std::ifstream in(meta_path);
  if (!in) throw std::runtime_error("load_field_series: cannot open " + meta_path);
  json meta = json::parse(in);
  f.dt = meta.at("dt").get<double>();
  const auto times = meta.at("times").get<std::vector<double>>();
  f.times = Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<int>(times.size()));
  if (f.u.rows() != f.v.rows() || f.u.cols() != f.v.cols() ||
      f.u.cols() != static_cast<int>(times.size()))
    throw std::runtime_error("load_field_series: inconsistent shapes");
  return f;
}

}  // namespace ecgi::forward_sim
