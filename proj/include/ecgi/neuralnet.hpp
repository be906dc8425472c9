#ifndef ECGI_NEURALNET_HPP
#define ECGI_NEURALNET_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "ecgi/autodiff.hpp"

namespace ecgi::nn {

/// Fully-connected feed-forward layout: tanh hidden layers, affine output.
struct NetworkSpec {
  int input_width = 3;       // x, y, t (4 on surface meshes: x, y, z, t)
  int hidden_layers = 5;     // NN3 from the network-structure study
  int hidden_width = 10;
  int output_width = 2;      // (u, v)

  void validate() const;
  int parameter_count() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// Affine map taking raw inputs to [-1, 1] per axis before the first layer.
/// Disabled (identity) until configured from the domain bounding box.
struct InputScaling {
  bool enabled = false;
  std::vector<double> lo, hi;

  static InputScaling from_bounds(const std::vector<double>& lo, const std::vector<double>& hi);
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Weights, biases and Adam moment accumulators. Updates are copy-on-write:
/// adam_step returns the successor state.
struct NetworkState {
  NetworkSpec spec;
  InputScaling scaling;
  std::uint64_t init_seed = 0;
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> weights;  // per layer, fan_out x fan_in
  std::vector<Eigen::VectorXd> biases;
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;

  int layer_count() const { return static_cast<int>(weights.size()); }
  /// Canonical flat order: per layer, weight rows then bias.
  Eigen::VectorXd flatten_params() const;
  void unflatten_params(const Eigen::VectorXd& flat);
};

/// Glorot-uniform weights, zero biases and moments; deterministic per seed.
NetworkState init_network(const NetworkSpec& spec, std::uint64_t seed);

/// Plain forward pass: rows of `coords` map to rows of the output.
Eigen::MatrixXd forward(const NetworkState& state, const Eigen::MatrixXd& coords);

/// Standard bias-corrected Adam update; `grads` in canonical flat order.
NetworkState adam_step(const NetworkState& state, const Eigen::VectorXd& grads, const AdamConfig& cfg);

/// Size-weighted combination of per-shard gradient sums: the result equals
/// the mean gradient over the union batch.
Eigen::VectorXd accumulate_sharded(const std::vector<std::pair<Eigen::VectorXd, std::size_t>>& shard_grads);

/// The network mirrored onto a tape: parameters become input nodes (in
/// canonical flat order) so one reverse sweep yields all parameter
/// gradients; forward() re-emits the computation per coordinate point.
struct TapedNetwork {
  const NetworkState* state = nullptr;
  ad::Tape* tape = nullptr;
  std::vector<ad::VarRef> params;  // canonical flat order

  static TapedNetwork make(ad::Tape& tape, const NetworkState& state);
  /// Emits one forward pass; coords are raw (unscaled) tape nodes.
  std::vector<ad::VarRef> forward(std::span<const ad::VarRef> coords) const;
};

/// Checkpoint: JSON header line {spec, scaling, seed, step} followed by
/// three CSV lines (parameters, first moments, second moments), bit-exact
/// through the 17-significant-digit round trip.
void save_checkpoint(const NetworkState& state, const std::string& path);
NetworkState load_checkpoint(const std::string& path);

}  // namespace ecgi::nn

#endif
