#ifndef ECGI_PDL_SOLVER_HPP
#define ECGI_PDL_SOLVER_HPP

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgi/autodiff.hpp"
#include "ecgi/forward_sim.hpp"
#include "ecgi/geometry.hpp"
#include "ecgi/neuralnet.hpp"
#include "ecgi/transfer.hpp"

namespace ecgi::pdl {

/// How the diffusion term of the residual is discretized: second-order
/// autodiff in the flat coordinates (grids), or the graph Laplacian applied
/// to node-evaluated outputs (any domain).
enum class DerivativeMode { Continuous, Discrete };

struct CollocationPoint {
  double coords[3] = {0, 0, 0};  // spatial position (dim entries used)
  double t = 0.0;
  int node = -1;  // anchoring mesh node (discrete interior and all boundary points)
};

struct CollocationSet {
  std::vector<CollocationPoint> interior;
  std::vector<CollocationPoint> boundary;
  std::uint64_t seed = 0;
  bool boundary_warning = false;  // boundary points requested on a closed surface
};

/// Loss components of one training step. l_ph and l_total always satisfy
/// the defining identities exactly.
struct LossBreakdown {
  double l_hb = 0.0;
  double l_bc = 0.0;
  double l_f = 0.0;
  double l_ph = 0.0;
  double l_total = 0.0;
  double w = 0.0;
};

LossBreakdown total_loss(double l_hb, double l_bc, double l_f, double w);

struct TrainConfig {
  int epochs = 2000;
  int batch_time_slices = 32;
  int batch_interior = 2048;
  int batch_boundary = 256;
  int n_interior = 50000;  // collocation pool sizes
  int n_boundary = 4096;
  double w = 0.44;
  DerivativeMode mode = DerivativeMode::Continuous;
  nn::NetworkSpec network{3, 5, 10, 2};  // input width is overridden from the domain
  nn::AdamConfig adam;
  std::uint64_t init_seed = 1;
  std::uint64_t colloc_seed = 2;
  std::uint64_t batch_seed = 3;
  int workers = 0;        // 0: use the environment/hardware default
  int shard_points = 64;  // collocation points per gradient shard
  int shard_slices = 4;   // data-term time slices per shard
  std::string log_path;   // optional JSON-lines training log

  void validate() const;
};

struct Problem {
  const geometry::SpatialDomain* domain = nullptr;
  const transfer::TransferModel* transfer = nullptr;
  Eigen::MatrixXd y;  // M x T measurements
  forward_sim::APParameters params;
  double dt = 0.0;

  int steps() const { return static_cast<int>(y.cols()); }
  double t_max() const { return dt * (steps() - 1); }
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown losses;
  double wall_ms = 0.0;
};

struct TrainResult {
  nn::NetworkState state;
  std::vector<EpochRecord> history;
};

/// Interior points uniform over the domain box (continuous) or over mesh
/// nodes (discrete), times uniform over [0, t_max]; boundary points are
/// boundary nodes with uniform times. Deterministic per seed.
CollocationSet sample_collocation(const geometry::SpatialDomain& domain, double t_max, int n_f,
                                  int n_bc, std::uint64_t seed,
                                  DerivativeMode mode = DerivativeMode::Continuous);

/// Reaction-diffusion residuals assembled from already-built tape nodes.
struct ApResidualRefs {
  ad::VarRef r_u;
  ad::VarRef r_v;
};
ApResidualRefs ap_residuals_on_tape(ad::Tape& tape, ad::VarRef u, ad::VarRef v, ad::VarRef u_t,
                                    ad::VarRef v_t, ad::VarRef lap_u,
                                    const forward_sim::APParameters& params);

/// Sum over the selected time slices and sensors of the squared
/// measurement residual; divide by sensors * slices for the mean form.
ad::VarRef data_loss_sum_on_tape(ad::Tape& tape, const nn::TapedNetwork& net,
                                 const transfer::TransferModel& transfer, const Eigen::MatrixXd& y,
                                 const geometry::SpatialDomain& domain,
                                 std::span<const int> slice_indices, double dt);

/// Sum of (r_u^2 + r_v^2) over the selected interior collocation points.
ad::VarRef interior_loss_sum_on_tape(ad::Tape& tape, const nn::TapedNetwork& net,
                                     const CollocationSet& colloc, std::span<const int> point_indices,
                                     const forward_sim::APParameters& params, DerivativeMode mode,
                                     const geometry::SpatialDomain& domain,
                                     const geometry::SparseOperator& lap);

/// Sum of r_bc^2 over the selected boundary collocation points.
ad::VarRef boundary_loss_sum_on_tape(ad::Tape& tape, const nn::TapedNetwork& net,
                                     const CollocationSet& colloc, std::span<const int> point_indices,
                                     DerivativeMode mode, const geometry::SpatialDomain& domain,
                                     const geometry::SparseOperator& boundary_grad);

/// Mean-form losses over full point sets (single tape, no sharding);
/// convenience used by tests and the balance metric.
double data_loss(const nn::NetworkState& state, const transfer::TransferModel& transfer,
                 const Eigen::MatrixXd& y, const geometry::SpatialDomain& domain,
                 std::span<const int> slice_indices, double dt);
std::pair<double, double> physics_loss(const nn::NetworkState& state, const CollocationSet& colloc,
                                       const forward_sim::APParameters& params, DerivativeMode mode,
                                       const geometry::SpatialDomain& domain);

/// One full loss/gradient evaluation at the epoch's minibatch, sharded per
/// the parallel-accumulation rule. Exposed so tests can probe gradients at
/// a fixed state.
struct LossAndGrad {
  LossBreakdown losses;
  Eigen::VectorXd grad;      // d l_total / d theta
  Eigen::VectorXd grad_hb;   // data-term component
  Eigen::VectorXd grad_ph;   // physics component (unweighted)
};
LossAndGrad evaluate_loss_and_gradient(const nn::NetworkState& state, const TrainConfig& cfg,
                                       const Problem& problem, const CollocationSet& colloc,
                                       int epoch);

/// Mini-batched Adam on the physics-constrained loss. `resume` continues
/// from a checkpointed state (its step counter selects the next epoch).
TrainResult train(const TrainConfig& cfg, const Problem& problem,
                  const nn::NetworkState* resume = nullptr);

/// Network evaluation at every node for each requested time.
forward_sim::FieldSeries predict_hsp(const nn::NetworkState& state,
                                     const geometry::SpatialDomain& domain,
                                     const Eigen::VectorXd& times);

}  // namespace ecgi::pdl

#endif
