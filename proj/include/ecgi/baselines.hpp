#ifndef ECGI_BASELINES_HPP
#define ECGI_BASELINES_HPP

#include <Eigen/Core>
#include <cstdint>
#include <optional>

#include "ecgi/forward_sim.hpp"
#include "ecgi/geometry.hpp"

namespace ecgi::baselines {

struct TikhonovConfig {
  int order = 0;  // 0: identity operator, 1: node-difference operator
  double lambda = 0.05;
};

struct StreConfig {
  double lambda_s = 0.05;
  double lambda_t = 0.05;
  int window = 4;  // even, >= 2

  void validate() const;
};

enum class PkfInit { Truth, Perturbed, RandomSite, Zero };

struct PkfConfig {
  PkfInit init = PkfInit::Truth;
  double init_sigma = 0.05;      // Perturbed initialization noise
  std::uint64_t init_seed = 0;
  double q_phi = 1e-5;           // process noise diagonal
  double m_phi = 1e-4;           // measurement noise diagonal (sigma_eps^2)
  double kappa_ut = 0.0;         // UT spread
  double p_ut = 1.0;             // UT weight constants (Gaussian-optimal)
  double q_ut = 2.0;
  double initial_cov = 1e-3;
};

/// First-order spatial operator: one row per grid/mesh edge with entries
/// (+1, -1) divided by the edge length.
geometry::SparseOperator first_order_operator(const geometry::SpatialDomain& domain);

/// Closed-form ridge solution per time column:
/// u_t = (R^T R + lambda^2 G^T G)^{-1} R^T y_t. gamma = nullptr means the
/// identity operator.
Eigen::MatrixXd tikhonov_solve(const Eigen::MatrixXd& y, const Eigen::MatrixXd& R,
                               const geometry::SparseOperator* gamma, double lambda);

/// Spatiotemporal regularization: the Tikhonov objective plus a windowed
/// temporal penalty, minimized jointly over all columns by preconditioned
/// conjugate gradient (relative residual 1e-8).
Eigen::MatrixXd stre_solve(const Eigen::MatrixXd& y, const Eigen::MatrixXd& R,
                           const geometry::SparseOperator* gamma, const StreConfig& cfg);

struct SigmaPoints {
  Eigen::MatrixXd points;   // N x (2N+1), column 0 is the mean
  Eigen::VectorXd w_mean;   // 2N+1
  Eigen::VectorXd w_cov;
};

/// Unscented transform: mean and mean +- columns of chol((N+kappa) cov).
/// Indefinite covariances get escalating diagonal jitter before failing.
SigmaPoints ut_sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double kappa,
                            double p = 1.0, double q = 2.0);

struct PkfResult {
  Eigen::MatrixXd u;      // N x T estimates (column 0 is the initialization)
  Eigen::MatrixXd v_bar;  // N x T shared recovery estimate
  int resymmetrize_count = 0;
};

/// Physiology-constrained unscented Kalman filter: sigma points propagated
/// one Euler step of the reaction-diffusion model with the shared mean
/// recovery, then the standard Kalman correction against y_t.
/// truth_u0 supplies the t=0 field for Truth/Perturbed initialization.
PkfResult pkf_solve(const Eigen::MatrixXd& y, const Eigen::MatrixXd& R,
                    const geometry::SpatialDomain& domain, const forward_sim::APParameters& params,
                    const PkfConfig& cfg, double dt,
                    const std::optional<Eigen::VectorXd>& truth_u0 = std::nullopt);

}  // namespace ecgi::baselines

#endif
