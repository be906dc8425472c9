#include "ecgi/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "ecgi/baselines.hpp"
#include "ecgi/common.hpp"
#include "ecgi/gp_tuner.hpp"
#include "ecgi/pdl_solver.hpp"

namespace ecgi::experiment {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
  if (steps < 2) throw std::invalid_argument("config: need at least two time steps");
  if (dt <= 0.0) throw std::invalid_argument("config: dt must be positive");
  for (double s : noise_levels)
    if (s < 0.0) throw std::invalid_argument("config: negative noise level");
  if (domain_kind != "grid2d" && domain_kind != "mesh")
    throw std::invalid_argument("config: domain_kind must be grid2d or mesh");
  if (domain_kind == "mesh" && !std::filesystem::exists(mesh_path))
    throw std::invalid_argument("config: mesh file does not exist: " + mesh_path);
  if (transfer_type != "synthetic" && transfer_type != "file")
    throw std::invalid_argument("config: transfer_type must be synthetic or file");
  if (transfer_type == "file" && !std::filesystem::exists(transfer_path))
    throw std::invalid_argument("config: transfer file does not exist: " + transfer_path);
  if (methods.empty()) throw std::invalid_argument("config: no methods listed");
  if (!ap_override_param.empty()) {
    const std::vector<std::string> known = {"a", "D", "k_r", "e0", "mu1", "mu2"};
    if (std::find(known.begin(), known.end(), ap_override_param) == known.end())
      throw std::invalid_argument("config: unknown ap_override parameter " + ap_override_param);
  }
  params.validate();
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["domain"] = {{"kind", c.domain_kind}, {"nx", c.nx}, {"ny", c.ny}, {"h", c.h}, {"mesh_path", c.mesh_path}};
  j["ap_params"] = {{"a", c.params.a},   {"D", c.params.D},     {"k_r", c.params.k_r},
                    {"e0", c.params.e0}, {"mu1", c.params.mu1}, {"mu2", c.params.mu2}};
  j["stimulus"] = {{"nodes", c.stimulus_nodes}, {"value", c.stimulus_value}};
  j["dt"] = c.dt;
  j["steps"] = c.steps;
  j["transfer"] = {{"type", c.transfer_type}, {"sensors", c.sensors}, {"standoff", c.standoff},
                   {"seed", c.transfer_seed}, {"path", c.transfer_path}};
  j["noise_levels"] = c.noise_levels;
  json ms = json::array();
  for (const auto& m : c.methods) {
    json e = m.options;
    e["name"] = m.name;
    ms.push_back(e);
  }
  j["methods"] = ms;
  j["trials"] = c.trials;
  j["seed_base"] = c.seed_base;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  if (!c.ap_override_param.empty())
    j["ap_override"] = {{"param", c.ap_override_param}, {"delta", c.ap_override_delta}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  const auto& d = j.at("domain");
  c.domain_kind = d.at("kind").get<std::string>();
  c.nx = d.value("nx", c.nx);
  c.ny = d.value("ny", c.ny);
  c.h = d.value("h", c.h);
  c.mesh_path = d.value("mesh_path", std::string{});

  if (j.contains("ap_params")) {
    const auto& p = j.at("ap_params");
    c.params.a = p.value("a", c.params.a);
    c.params.D = p.value("D", c.params.D);
    c.params.k_r = p.value("k_r", c.params.k_r);
    c.params.e0 = p.value("e0", c.params.e0);
    c.params.mu1 = p.value("mu1", c.params.mu1);
    c.params.mu2 = p.value("mu2", c.params.mu2);
  }
  if (j.contains("stimulus")) {
    c.stimulus_nodes = j.at("stimulus").value("nodes", std::vector<int>{});
    c.stimulus_value = j.at("stimulus").value("value", 1.0);
  }
  c.dt = j.at("dt").get<double>();
  c.steps = j.at("steps").get<int>();

  const auto& t = j.at("transfer");
  c.transfer_type = t.at("type").get<std::string>();
  c.sensors = t.value("sensors", c.sensors);
  c.standoff = t.value("standoff", c.standoff);
  c.transfer_seed = t.value("seed", c.transfer_seed);
  c.transfer_path = t.value("path", std::string{});

  c.noise_levels = j.at("noise_levels").get<std::vector<double>>();
  for (const auto& e : j.at("methods")) {
    MethodConfig m;
    m.name = e.at("name").get<std::string>();
    m.options = e;
    m.options.erase("name");
    c.methods.push_back(m);
  }
  c.trials = j.value("trials", 1);
  c.seed_base = j.value("seed_base", std::uint64_t{1000});
  c.output_dir = j.value("output_dir", std::string{"out"});
  c.workers = j.value("workers", 0);
  if (j.contains("ap_override")) {
    c.ap_override_param = j.at("ap_override").at("param").get<std::string>();
    c.ap_override_delta = j.at("ap_override").at("delta").get<double>();
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  json j = json::parse(in);
  auto cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

std::uint64_t cell_seed(std::uint64_t seed_base, int trial, const std::string& method,
                        const std::string& purpose) {
  return mix_seed(seed_base + static_cast<std::uint64_t>(trial), hash_name(method + "/" + purpose));
}

namespace {

forward_sim::APParameters apply_override(forward_sim::APParameters p, const std::string& name,
                                         double delta) {
  if (name.empty()) return p;
  if (name == "a") p.a *= 1.0 + delta;
  else if (name == "D") p.D *= 1.0 + delta;
  else if (name == "k_r") p.k_r *= 1.0 + delta;
  else if (name == "e0") p.e0 *= 1.0 + delta;
  else if (name == "mu1") p.mu1 *= 1.0 + delta;
  else if (name == "mu2") p.mu2 *= 1.0 + delta;
  return p;
}

pdl::TrainConfig pdl_config_from(const json& o, std::uint64_t trial_seed, const std::string& method,
                                 int workers) {
  pdl::TrainConfig cfg;
  cfg.epochs = o.value("epochs", 2000);
  cfg.batch_time_slices = o.value("batch_data", 32);
  cfg.batch_interior = o.value("batch_colloc", 2048);
  cfg.batch_boundary = o.value("batch_bc", 256);
  cfg.n_interior = o.value("n_colloc", 50000);
  cfg.n_boundary = o.value("n_bc", 4096);
  cfg.mode = o.value("mode", std::string{"continuous"}) == "discrete" ? pdl::DerivativeMode::Discrete
                                                                      : pdl::DerivativeMode::Continuous;
  cfg.network.hidden_layers = o.value("hidden_layers", 5);
  cfg.network.hidden_width = o.value("hidden_width", 10);
  cfg.adam.learning_rate = o.value("learning_rate", 1e-3);
  cfg.shard_points = o.value("shard_points", 64);
  cfg.shard_slices = o.value("shard_slices", 4);
  cfg.workers = workers;
  cfg.init_seed = cell_seed(trial_seed, 0, method, "init");
  cfg.colloc_seed = cell_seed(trial_seed, 0, method, "colloc");
  cfg.batch_seed = cell_seed(trial_seed, 0, method, "batch");
  if (o.contains("w") && o.at("w").is_number()) cfg.w = o.at("w").get<double>();
  return cfg;
}

Eigen::MatrixXd solve_pdl(const json& o, const geometry::SpatialDomain& domain,
                          const transfer::TransferModel& transfer, const Eigen::MatrixXd& y,
                          const forward_sim::APParameters& params, double dt,
                          std::uint64_t trial_seed, int workers, const std::string& artifact_dir) {
  pdl::Problem problem;
  problem.domain = &domain;
  problem.transfer = &transfer;
  problem.y = y;
  problem.params = params;
  problem.dt = dt;

  pdl::TrainConfig cfg = pdl_config_from(o, trial_seed, "pdl", workers);
  const bool tune_w = o.contains("w") && o.at("w").is_string() && o.at("w").get<std::string>() == "tune";

  if (tune_w) {
    gp_tuner::TunerConfig tcfg;
    if (o.contains("tuner")) {
      const auto& t = o.at("tuner");
      tcfg.w_lo = t.value("w_lo", tcfg.w_lo);
      tcfg.w_hi = t.value("w_hi", tcfg.w_hi);
      tcfg.beta = t.value("beta", tcfg.beta);
      tcfg.beta_schedule = t.value("beta_schedule", tcfg.beta_schedule);
      tcfg.max_iterations = t.value("max_iterations", tcfg.max_iterations);
      tcfg.grid_points = t.value("grid_points", tcfg.grid_points);
    }
    // shortened proxy runs for the metric; the final run retrains fully
    pdl::TrainConfig probe = cfg;
    probe.epochs = std::max(1, cfg.epochs / 4);
    auto trainer = [&](double w) {
      pdl::TrainConfig q = probe;
      q.w = w;
      return pdl::train(q, problem).history.back().losses;
    };
    auto tuned = gp_tuner::tune(trainer, tcfg);
    cfg.w = tuned.w_opt;
    if (!artifact_dir.empty())
      gp_tuner::save_trace(tuned, (std::filesystem::path(artifact_dir) / "tuner_trace.csv").string());
  }

  if (!artifact_dir.empty())
    cfg.log_path = (std::filesystem::path(artifact_dir) / "training_log.jsonl").string();
  auto result = pdl::train(cfg, problem);

  Eigen::VectorXd times(y.cols());
  for (int t = 0; t < y.cols(); ++t) times[t] = t * dt;
  return pdl::predict_hsp(result.state, domain, times).u;
}

}  // namespace

Eigen::MatrixXd solve_cell(const MethodConfig& method, const geometry::SpatialDomain& domain,
                           const transfer::TransferModel& transfer,
                           const forward_sim::FieldSeries& truth, const Eigen::MatrixXd& y,
                           const forward_sim::APParameters& solver_params, double dt,
                           std::uint64_t trial_seed, int workers, const std::string& artifact_dir) {
  const json& o = method.options;
  if (method.name == "tikh0") {
    return baselines::tikhonov_solve(y, transfer.R, nullptr, o.value("lambda", 0.05));
  }
  if (method.name == "tikh1") {
    const auto gamma = baselines::first_order_operator(domain);
    return baselines::tikhonov_solve(y, transfer.R, &gamma, o.value("lambda", 0.05));
  }
  if (method.name == "stre") {
    baselines::StreConfig cfg;
    cfg.lambda_s = o.value("lambda_s", 0.05);
    cfg.lambda_t = o.value("lambda_t", 0.05);
    cfg.window = o.value("window", 4);
    const auto gamma = baselines::first_order_operator(domain);
    return baselines::stre_solve(y, transfer.R, &gamma, cfg);
  }
  if (method.name == "pkf") {
    baselines::PkfConfig cfg;
    const std::string init = o.value("init", "truth");
    if (init == "truth") cfg.init = baselines::PkfInit::Truth;
    else if (init == "perturbed") cfg.init = baselines::PkfInit::Perturbed;
    else if (init == "random") cfg.init = baselines::PkfInit::RandomSite;
    else if (init == "zero") cfg.init = baselines::PkfInit::Zero;
    else throw std::invalid_argument("pkf: unknown init " + init);
    cfg.init_sigma = o.value("init_sigma", 0.05);
    cfg.q_phi = o.value("q_phi", 1e-5);
    cfg.m_phi = o.value("m_phi", 1e-4);
    cfg.kappa_ut = o.value("kappa", 0.0);
    cfg.initial_cov = o.value("initial_cov", 1e-3);
    cfg.init_seed = cell_seed(trial_seed, 0, method.name, "init");
    return baselines::pkf_solve(y, transfer.R, domain, solver_params, cfg, dt, truth.u.col(0)).u;
  }
  if (method.name == "pdl") {
    return solve_pdl(o, domain, transfer, y, solver_params, dt, trial_seed, workers, artifact_dir);
  }
  throw std::invalid_argument("unknown method: " + method.name);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);

  geometry::SpatialDomain domain = cfg.domain_kind == "mesh"
                                       ? geometry::load_mesh(cfg.mesh_path)
                                       : geometry::build_grid(cfg.nx, cfg.ny, cfg.h);
  transfer::TransferModel tmodel =
      cfg.transfer_type == "file"
          ? transfer::load_transfer(cfg.transfer_path)
          : transfer::synth_transfer(domain, cfg.sensors, cfg.standoff, cfg.transfer_seed);

  forward_sim::StimulusSpec stim;
  stim.nodes = cfg.stimulus_nodes;
  stim.onset_value = cfg.stimulus_value;
  const auto truth = forward_sim::simulate(domain, cfg.params, stim, cfg.steps, cfg.dt, cfg.seed_base);
  const auto solver_params = apply_override(cfg.params, cfg.ap_override_param, cfg.ap_override_delta);

  ExperimentResult result;
  for (const auto& method : cfg.methods) {
    for (double sigma : cfg.noise_levels) {
      evalkit::MetricReport report;
      for (int trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t trial_seed = cfg.seed_base + static_cast<std::uint64_t>(trial);
        CellOutcome cell;
        cell.method = method.name;
        cell.noise_sigma = sigma;
        cell.trial = trial;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          auto y = forward_sim::make_bspm(truth, tmodel, sigma, trial_seed);
          MethodConfig m = method;
          if (m.name == "pkf" && !m.options.contains("m_phi"))
            m.options["m_phi"] = std::max(sigma * sigma, 1e-8);
          const auto estimate = solve_cell(m, domain, tmodel, truth, y, solver_params, cfg.dt,
                                           trial_seed, cfg.workers, cfg.output_dir);
          cell.metrics = evalkit::evaluate_metrics(estimate, truth.u);
          report.trials.push_back(cell.metrics);
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
          result.exit_code = 3;
        }
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "[ecgi] method=" << cell.method << " sigma=" << sigma << " trial=" << trial
                  << (cell.failed ? " FAILED: " + cell.error
                                  : " RE=" + std::to_string(cell.metrics.re) +
                                        " CC=" + std::to_string(cell.metrics.cc))
                  << " (" << static_cast<long>(ms) << " ms)\n";
        result.cells.push_back(cell);
      }
      if (!report.trials.empty()) {
        const std::string name = "report_" + method.name + "_s" + fmt_exact(sigma) + ".json";
        evalkit::save_report(report, method.name, sigma,
                             (std::filesystem::path(cfg.output_dir) / name).string());
      }
    }
  }

  // combined summary, one row per (method, noise level)
  std::ofstream summary(std::filesystem::path(cfg.output_dir) / "summary.csv");
  summary << "method,noise_sigma,re_mean,re_sd,cc_mean,cc_sd,mse_mean,mse_sd,trials,failures\n";
  for (const auto& method : cfg.methods) {
    for (double sigma : cfg.noise_levels) {
      evalkit::MetricReport rep;
      int failures = 0;
      for (const auto& cell : result.cells) {
        if (cell.method != method.name || cell.noise_sigma != sigma) continue;
        if (cell.failed) ++failures;
        else rep.trials.push_back(cell.metrics);
      }
      summary << method.name << "," << fmt_exact(sigma) << "," << fmt_exact(rep.re().mean) << ","
              << fmt_exact(rep.re().sd) << "," << fmt_exact(rep.cc().mean) << ","
              << fmt_exact(rep.cc().sd) << "," << fmt_exact(rep.mse().mean) << ","
              << fmt_exact(rep.mse().sd) << "," << rep.trials.size() << "," << failures << "\n";
    }
  }
  return result;
}

}  // namespace ecgi::experiment
