#ifndef ECGI_EXPERIMENT_HPP
#define ECGI_EXPERIMENT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgi/evalkit.hpp"
#include "ecgi/forward_sim.hpp"
#include "ecgi/geometry.hpp"
#include "ecgi/transfer.hpp"

namespace ecgi::experiment {

struct MethodConfig {
  std::string name;        // tikh0 | tikh1 | stre | pkf | pdl
  nlohmann::json options;  // method-specific settings
};

struct ExperimentConfig {
  // heart domain
  std::string domain_kind = "grid2d";  // grid2d | mesh
  int nx = 16, ny = 16;
  double h = 1.0;
  std::string mesh_path;

  forward_sim::APParameters params;
  std::vector<int> stimulus_nodes;
  double stimulus_value = 1.0;
  double dt = 0.01;
  int steps = 700;

  // transfer model
  std::string transfer_type = "synthetic";  // synthetic | file
  int sensors = 64;
  double standoff = 4.0;
  std::uint64_t transfer_seed = 7;
  std::string transfer_path;

  std::vector<double> noise_levels = {0.01};
  std::vector<MethodConfig> methods;
  int trials = 1;
  std::uint64_t seed_base = 1000;
  std::string output_dir = "out";
  int workers = 0;

  // physics-model perturbation block: the named parameter is scaled by
  // (1 + delta) inside the solvers while the data stays at reference values
  std::string ap_override_param;
  double ap_override_delta = 0.0;

  void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

struct CellOutcome {
  std::string method;
  double noise_sigma = 0.0;
  int trial = 0;
  evalkit::Metrics metrics;
  bool failed = false;
  std::string error;
};

struct ExperimentResult {
  std::vector<CellOutcome> cells;
  int exit_code = 0;  // 0 ok, 3 when any cell failed
};

/// Per-trial seeds derive from seed_base + trial plus the method name, so
/// list order never changes any method's numbers.
std::uint64_t cell_seed(std::uint64_t seed_base, int trial, const std::string& method,
                        const std::string& purpose);

/// Reconstruction of one (method, noise, trial) cell against the problem
/// data; the building block of run_experiment, also used directly by the
/// `solve` subcommand and the acceptance suite.
Eigen::MatrixXd solve_cell(const MethodConfig& method, const geometry::SpatialDomain& domain,
                           const transfer::TransferModel& transfer,
                           const forward_sim::FieldSeries& truth, const Eigen::MatrixXd& y,
                           const forward_sim::APParameters& solver_params, double dt,
                           std::uint64_t trial_seed, int workers, const std::string& artifact_dir);

/// Full protocol: generate data per (noise, trial), run every method,
/// score against the ground truth, write MetricReport JSONs and the
/// combined summary.csv into output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace ecgi::experiment

#endif
