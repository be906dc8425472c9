#ifndef ECGI_FORWARD_SIM_HPP
#define ECGI_FORWARD_SIM_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "ecgi/geometry.hpp"
#include "ecgi/transfer.hpp"

namespace ecgi::forward_sim {

/// Two-variable reaction-diffusion parameters (all dimensionless).
struct APParameters {
  double a = 0.1;     // excitability threshold
  double D = 10.0;    // diffusion conductivity
  double k_r = 8.0;   // repolarization constant
  double e0 = 0.002;
  double mu1 = 0.3;
  double mu2 = 0.3;

  void validate() const;
};

/// Spatiotemporal potential (u) and recovery current (v) fields,
/// N nodes x T uniformly spaced time steps.
struct FieldSeries {
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
  double dt = 0.0;
  Eigen::VectorXd times;

  int nodes() const { return static_cast<int>(u.rows()); }
  int steps() const { return static_cast<int>(u.cols()); }
};

struct StimulusSpec {
  std::vector<int> nodes;
  double onset_value = 1.0;
};

/// Right-hand side of the reaction-diffusion system at one instant.
/// du = D*(L u) + k_r*u*(u-a)*(1-u) - u*v
/// dv = xi(u,v)*(-v - k_r*u*(u-a-1)),  xi = e0 + mu1*v/(u+mu2)
void ap_rhs(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const APParameters& params,
            const geometry::SparseOperator& lap, Eigen::VectorXd& du, Eigen::VectorXd& dv);

/// Largest forward-Euler step accepted for this domain:
/// h^2/(8 D) on grids, 1/(4 D max|L_ii|) on meshes.
double stable_dt_bound(const geometry::SpatialDomain& domain, const APParameters& params);

/// Explicit forward-Euler trajectory from u = onset on the stimulated
/// nodes (zero elsewhere, v = 0). Returns all `steps` snapshots including
/// the initial one. Aborts with a diagnostic if any |u_i| exceeds 10.
FieldSeries simulate(const geometry::SpatialDomain& domain, const APParameters& params,
                     const StimulusSpec& stim, int steps, double dt, std::uint64_t seed);

/// Body-surface measurements y = R u + eps with i.i.d. Gaussian noise of
/// standard deviation sigma_eps drawn from the seeded generator.
Eigen::MatrixXd make_bspm(const FieldSeries& fields, const transfer::TransferModel& transfer,
                          double sigma_eps, std::uint64_t seed);

/// CSV serialization: one row per node, one column per time step, plus a
/// JSON sidecar carrying {dt, times, N, T, seed, params}.
void save_field_matrix(const Eigen::MatrixXd& field, const std::string& path);
Eigen::MatrixXd load_field_matrix(const std::string& path);
void save_field_series(const FieldSeries& fields, const APParameters& params, std::uint64_t seed,
                       const std::string& u_path, const std::string& v_path, const std::string& meta_path);
FieldSeries load_field_series(const std::string& u_path, const std::string& v_path,
                              const std::string& meta_path);

}  // namespace ecgi::forward_sim

#endif
