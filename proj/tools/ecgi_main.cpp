// Command-line front end: data generation, solving, tuning, scoring and the
// full experiment pipeline, all driven by one JSON config.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "ecgi/baselines.hpp"
#include "ecgi/evalkit.hpp"
#include "ecgi/experiment.hpp"
#include "ecgi/forward_sim.hpp"
#include "ecgi/gp_tuner.hpp"
#include "ecgi/pdl_solver.hpp"

namespace fs = std::filesystem;
using namespace ecgi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCellFailed = 3;

struct LoadedProblem {
  geometry::SpatialDomain domain;
  transfer::TransferModel transfer;
  forward_sim::FieldSeries truth;
};

LoadedProblem build_problem(const experiment::ExperimentConfig& cfg) {
  LoadedProblem p;
  p.domain = cfg.domain_kind == "mesh" ? geometry::load_mesh(cfg.mesh_path)
                                       : geometry::build_grid(cfg.nx, cfg.ny, cfg.h);
  p.transfer = cfg.transfer_type == "file"
                   ? transfer::load_transfer(cfg.transfer_path)
                   : transfer::synth_transfer(p.domain, cfg.sensors, cfg.standoff, cfg.transfer_seed);
  forward_sim::StimulusSpec stim;
  stim.nodes = cfg.stimulus_nodes;
  stim.onset_value = cfg.stimulus_value;
  p.truth = forward_sim::simulate(p.domain, cfg.params, stim, cfg.steps, cfg.dt, cfg.seed_base);
  return p;
}

const experiment::MethodConfig& find_method(const experiment::ExperimentConfig& cfg,
                                            const std::string& name) {
  for (const auto& m : cfg.methods)
    if (m.name == name) return m;
  throw std::invalid_argument("method not in config: " + name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physics-constrained inverse ECG laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", method_name, estimate_path, truth_path, report_path;
  double sigma = 0.01;
  int trial = 0;
  int workers = 0;
  app.add_option("--workers", workers, "worker thread count (overrides ECGI_WORKERS)");

  auto* sim = app.add_subcommand("simulate", "forward-simulate the ground-truth fields");
  sim->add_option("--config", config_path, "experiment config JSON")->required();
  sim->add_option("--out", out_dir, "output directory");

  auto* mkdata = app.add_subcommand("make-data", "simulate and project noisy measurements");
  mkdata->add_option("--config", config_path)->required();
  mkdata->add_option("--sigma", sigma, "noise standard deviation");
  mkdata->add_option("--trial", trial, "trial index (seeds the noise)");
  mkdata->add_option("--out", out_dir);

  auto* solve = app.add_subcommand("solve", "reconstruct with one configured method");
  solve->add_option("--config", config_path)->required();
  solve->add_option("--method", method_name, "method name from the config")->required();
  solve->add_option("--sigma", sigma);
  solve->add_option("--trial", trial);
  solve->add_option("--out", out_dir);

  auto* tune = app.add_subcommand("tune", "GP-UCB search for the physics weight");
  tune->add_option("--config", config_path)->required();
  tune->add_option("--sigma", sigma);
  tune->add_option("--trial", trial);
  tune->add_option("--out", out_dir);

  auto* evaluate = app.add_subcommand("evaluate", "score an estimate against a reference field");
  evaluate->add_option("--estimate", estimate_path, "estimate CSV")->required();
  evaluate->add_option("--truth", truth_path, "reference CSV")->required();
  evaluate->add_option("--out", report_path, "optional JSON output path");

  auto* report = app.add_subcommand("report", "aggregate per-method reports into summary.csv");
  report->add_option("--dir", out_dir, "directory holding report_*.json files")->required();

  auto* run = app.add_subcommand("run", "full pipeline: data, solvers, metrics, summary");
  run->add_option("--config", config_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      auto cfg = experiment::load_config(config_path);
      auto p = build_problem(cfg);
      fs::create_directories(out_dir);
      forward_sim::save_field_series(p.truth, cfg.params, cfg.seed_base,
                                     (fs::path(out_dir) / "u.csv").string(),
                                     (fs::path(out_dir) / "v.csv").string(),
                                     (fs::path(out_dir) / "meta.json").string());
      std::cout << "wrote " << out_dir << "/u.csv, v.csv, meta.json\n";
      return kExitOk;
    }

    if (mkdata->parsed()) {
      auto cfg = experiment::load_config(config_path);
      auto p = build_problem(cfg);
      fs::create_directories(out_dir);
      auto y = forward_sim::make_bspm(p.truth, p.transfer, sigma, cfg.seed_base + trial);
      forward_sim::save_field_matrix(y, (fs::path(out_dir) / "y.csv").string());
      transfer::save_transfer(p.transfer, (fs::path(out_dir) / "transfer.csv").string());
      forward_sim::save_field_series(p.truth, cfg.params, cfg.seed_base,
                                     (fs::path(out_dir) / "u.csv").string(),
                                     (fs::path(out_dir) / "v.csv").string(),
                                     (fs::path(out_dir) / "meta.json").string());
      std::cout << "wrote " << out_dir << "/y.csv (sigma=" << sigma << ", trial=" << trial << ")\n";
      return kExitOk;
    }

    if (solve->parsed()) {
      auto cfg = experiment::load_config(config_path);
      if (workers > 0) cfg.workers = workers;
      auto p = build_problem(cfg);
      fs::create_directories(out_dir);
      const auto& method = find_method(cfg, method_name);
      const std::uint64_t trial_seed = cfg.seed_base + trial;
      auto y = forward_sim::make_bspm(p.truth, p.transfer, sigma, trial_seed);
      experiment::MethodConfig m = method;
      if (m.name == "pkf" && !m.options.contains("m_phi"))
        m.options["m_phi"] = std::max(sigma * sigma, 1e-8);
      auto estimate = experiment::solve_cell(m, p.domain, p.transfer, p.truth, y, cfg.params,
                                             cfg.dt, trial_seed, cfg.workers, out_dir);
      forward_sim::save_field_matrix(estimate, (fs::path(out_dir) / (method_name + "_estimate.csv")).string());
      auto metrics = evalkit::evaluate_metrics(estimate, p.truth.u);
      std::cout << "method=" << method_name << " RE=" << metrics.re << " CC=" << metrics.cc
                << " MSE=" << metrics.mse << "\n";
      return kExitOk;
    }

    if (tune->parsed()) {
      auto cfg = experiment::load_config(config_path);
      if (workers > 0) cfg.workers = workers;
      auto p = build_problem(cfg);
      fs::create_directories(out_dir);
      experiment::MethodConfig m = find_method(cfg, "pdl");
      m.options["w"] = "tune";
      const std::uint64_t trial_seed = cfg.seed_base + trial;
      auto y = forward_sim::make_bspm(p.truth, p.transfer, sigma, trial_seed);
      experiment::solve_cell(m, p.domain, p.transfer, p.truth, y, cfg.params, cfg.dt, trial_seed,
                             cfg.workers, out_dir);
      std::cout << "wrote " << out_dir << "/tuner_trace.csv\n";
      return kExitOk;
    }

    if (evaluate->parsed()) {
      auto est = forward_sim::load_field_matrix(estimate_path);
      auto ref = forward_sim::load_field_matrix(truth_path);
      auto metrics = evalkit::evaluate_metrics(est, ref);
      nlohmann::json j = {{"RE", metrics.re},
                          {"CC", metrics.cc},
                          {"MSE", metrics.mse},
                          {"cc_excluded_rows", metrics.cc_excluded_rows}};
      if (!report_path.empty()) {
        std::ofstream out(report_path);
        out << j.dump(2) << "\n";
      }
      std::cout << j.dump(2) << "\n";
      return kExitOk;
    }

    if (report->parsed()) {
      std::ofstream summary(fs::path(out_dir) / "summary.csv");
      summary << "method,noise_sigma,re_mean,re_sd,cc_mean,cc_sd,mse_mean,mse_sd,trials\n";
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(out_dir))
        if (entry.path().filename().string().starts_with("report_") &&
            entry.path().extension() == ".json")
          files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        std::ifstream in(f);
        auto j = nlohmann::json::parse(in);
        summary << j.at("method").get<std::string>() << "," << j.at("noise_sigma").get<double>()
                << "," << j.at("RE").at("mean").get<double>() << "," << j.at("RE").at("sd").get<double>()
                << "," << j.at("CC").at("mean").get<double>() << "," << j.at("CC").at("sd").get<double>()
                << "," << j.at("MSE").at("mean").get<double>() << "," << j.at("MSE").at("sd").get<double>()
                << "," << j.at("trials").get<int>() << "\n";
      }
      std::cout << "wrote " << out_dir << "/summary.csv from " << files.size() << " reports\n";
      return kExitOk;
    }

    if (run->parsed()) {
      auto cfg = experiment::load_config(config_path);
      if (workers > 0) cfg.workers = workers;
      auto result = experiment::run_experiment(cfg);
      std::cout << "summary: " << cfg.output_dir << "/summary.csv\n";
      return result.exit_code == 0 ? kExitOk : kExitCellFailed;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCellFailed;
  }
  return kExitOk;
}
