#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsln/baselines.hpp"
#include "tsln/census.hpp"
#include "tsln/experiment.hpp"
#include "tsln/stage1.hpp"
#include "tsln/stage2.hpp"
#include "tsln/survey.hpp"

using nlohmann::json;

namespace {

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;

struct Overrides {
  std::string config;
  std::string scenario;
  int M = 0;
  int replicates = 0;
  std::string models;
  std::uint64_t seed = 0;
  int chains = 0;
  int warmup = 0;
  int draws = 0;
  std::string out;
  int workers = 0;
  std::vector<double> sigma;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON experiment config");
  cmd->add_option("--scenario", o.scenario, "Scenario preset (Sc1..Sc6, SuppE)");
  cmd->add_option("--M", o.M, "Number of areas");
  cmd->add_option("--replicates", o.replicates, "Number of replicates D");
  cmd->add_option("--models", o.models, "Comma-separated subset of TSLN,LOG,BIN,BETA,ELN");
  cmd->add_option("--seed", o.seed, "Engine seed");
  cmd->add_option("--chains", o.chains, "Chains per fit");
  cmd->add_option("--warmup", o.warmup, "Warmup iterations per chain");
  cmd->add_option("--draws", o.draws, "Post-warmup draws per chain");
  cmd->add_option("-o,--out", o.out, "Output directory");
  cmd->add_option("--workers", o.workers, "Replicate workers (default TSLN_WORKERS or all cores)");
}

tsln::ExperimentConfig resolve_config(const Overrides& o) {
  json j = json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw tsln::ConfigError("cannot open config " + o.config);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw tsln::ConfigError(o.config + ": " + e.what());
    }
    if (!j.is_object()) throw tsln::ConfigError("config must be a JSON object");
  }
  if (!o.scenario.empty()) j["scenario"]["preset"] = o.scenario;
  if (o.M > 0) j["scenario"]["M"] = o.M;
  if (o.replicates > 0) j["replicates"] = o.replicates;
  if (!o.models.empty()) {
    std::vector<std::string> list;
    std::stringstream ss(o.models);
    for (std::string m; std::getline(ss, m, ',');) {
      if (!m.empty()) list.push_back(m);
    }
    j["models"] = list;
  }
  if (o.seed > 0) j["engine"]["seed"] = o.seed;
  if (o.chains > 0) j["engine"]["chains"] = o.chains;
  if (o.warmup > 0) j["engine"]["warmup"] = o.warmup;
  if (o.draws > 0) j["engine"]["draws"] = o.draws;
  if (!o.out.empty()) j["output"] = o.out;
  if (o.workers > 0) j["workers"] = o.workers;
  if (!o.sigma.empty()) j["suppe"]["sigma_e"] = o.sigma;
  return tsln::config_from_json(j);
}

struct FitOptions {
  std::string model;
  std::string sample;
  std::string areas;
  std::string census;
  std::string adjacency;
  std::string benchmark;
  double epsilon = 1.0;
  std::string rho_prior = "beta";
  std::string gvf = "corrected";
  std::string out = "fit.csv";
  tsln::SamplerConfig sampler;
};

template <typename F>
auto load_data(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const tsln::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw tsln::DataError(e.what());
  }
}

void write_status(const std::filesystem::path& path, const json& status) {
  std::ofstream out(path);
  if (!out) throw tsln::DataError("cannot write " + path.string());
  out << status.dump(2) << "\n";
}

int run_fit(const FitOptions& o) {
  if (std::find(tsln::kModelNames.begin(), tsln::kModelNames.end(), o.model) == tsln::kModelNames.end()) {
    throw tsln::ConfigError("unknown model '" + o.model + "'");
  }
  if (o.model == "LOG" && o.census.empty()) throw tsln::ConfigError("census required");
  if (o.rho_prior != "beta" && o.rho_prior != "uniform") throw tsln::ConfigError("rho prior must be beta or uniform");
  if (o.gvf != "corrected" && o.gvf != "naive") throw tsln::ConfigError("gvf must be corrected or naive");
  const auto areas = load_data([&] { return tsln::read_area_csv(o.areas); });
  const int M = static_cast<int>(areas.size());
  const auto sample = load_data([&] { return tsln::read_sample_csv(o.sample, M); });
  std::optional<tsln::SpatialSpec> spatial;
  if (!o.adjacency.empty()) {
    spatial = tsln::SpatialSpec{load_data([&] { return tsln::read_adjacency_csv(o.adjacency, M); }),
                                o.rho_prior == "beta" ? tsln::RhoPrior::Beta : tsln::RhoPrior::Uniform, std::nullopt};
  }
  std::optional<tsln::BenchmarkSpec> bm;
  if (!o.benchmark.empty()) bm = load_data([&] { return tsln::read_benchmark_json(o.benchmark, M, o.epsilon); });
  const auto gvf = o.gvf == "corrected" ? tsln::GvfCorrection::Corrected : tsln::GvfCorrection::Naive;

  const std::filesystem::path out(o.out);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  json status{{"model", o.model}};
  tsln::AreaFit fit;
  bool have_fit = true;
  if (o.model == "TSLN") {
    tsln::Stage2Spec s2;
    s2.spatial = spatial;
    s2.benchmark = bm;
    s2.gvf = gvf;
    auto t = tsln::fit_tsln(sample, areas, tsln::Stage1Spec{}, o.sampler, s2);
    status["stage1_max_rhat"] = t.stage1.max_rhat;
    status["alc"] = t.stage1.alc;
    status["sr"] = t.stage1.sr_median;
    status["stage1_warnings"] = t.stage1.summaries.warnings;
    have_fit = t.stage1.converged;
    if (have_fit) fit = std::move(t.stage2);
  } else {
    tsln::BaselineSpec spec;
    spec.spatial = spatial;
    spec.benchmark = bm;
    spec.gvf = gvf;
    const auto direct = tsln::compute_direct_estimates(sample, areas);
    if (o.model == "LOG") {
      const auto census = load_data([&] { return tsln::read_census_csv(o.census, areas); });
      fit = tsln::fit_log(sample, census, spec, o.sampler);
    } else if (o.model == "BIN") {
      fit = tsln::fit_bin(sample, areas, spec, o.sampler);
    } else if (o.model == "BETA") {
      fit = tsln::fit_beta(direct, areas, spec, o.sampler);
    } else {
      fit = tsln::fit_eln(direct, areas, spec, o.sampler);
    }
  }
  if (have_fit) {
    tsln::write_fit_csv(out, fit);
    status["status"] = fit.converged ? "converged" : "discarded";
    status["max_rhat"] = fit.max_rhat;
    status["divergences"] = fit.divergences;
    status["divergence_flag"] = fit.divergence_flag;
    status["warnings"] = fit.warnings;
  } else {
    status["status"] = "discarded";
    status["message"] = "stage 1 failed the convergence gate";
  }
  write_status(out.string() + ".status.json", status);
  std::cout << o.model << ": " << status["status"].get<std::string>() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage logistic-normal small area estimation"};
  app.require_subcommand(1);

  Overrides sim_o;
  int sim_replicate = 1;
  auto* sim = app.add_subcommand("simulate", "Generate a census and one informative sample");
  add_overrides(sim, sim_o);
  sim->add_option("--replicate", sim_replicate, "Replicate index of the sample");

  FitOptions fit_o;
  auto* fit = app.add_subcommand("fit", "Fit one model to a sample");
  fit->add_option("-m,--model", fit_o.model, "TSLN, LOG, BIN, BETA or ELN")->required();
  fit->add_option("--sample", fit_o.sample, "Sample CSV")->required();
  fit->add_option("--areas", fit_o.areas, "Area CSV (area_id,N,Z)")->required();
  fit->add_option("--census", fit_o.census, "Census CSV (LOG only)");
  fit->add_option("--adjacency", fit_o.adjacency, "Edge-list CSV; enables the spatial prior");
  fit->add_option("--benchmark", fit_o.benchmark, "Benchmark JSON");
  fit->add_option("--epsilon", fit_o.epsilon, "Benchmark tolerance multiplier");
  fit->add_option("--rho-prior", fit_o.rho_prior, "beta or uniform");
  fit->add_option("--gvf", fit_o.gvf, "corrected or naive");
  fit->add_option("-o,--out", fit_o.out, "Per-area fit CSV");
  fit->add_option("--chains", fit_o.sampler.chains, "Chains");
  fit->add_option("--warmup", fit_o.sampler.warmup, "Warmup iterations per chain");
  fit->add_option("--draws", fit_o.sampler.draws, "Draws per chain");
  fit->add_option("--seed", fit_o.sampler.seed, "Seed");

  Overrides rep_o;
  auto* rep = app.add_subcommand("replicate", "Run the replicate simulation and write metrics, tables and plots");
  add_overrides(rep, rep_o);

  Overrides grid_o;
  auto* grid = app.add_subcommand("suppe-grid", "Fixed residual-error grid with and without the area effect");
  add_overrides(grid, grid_o);
  grid->add_option("--sigma", grid_o.sigma, "sigma_e values")->delimiter(',');

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Rebuild tables and plots from a replicate output directory");
  report->add_option("-d,--dir", report_dir, "Output directory of a replicate run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  try {
    if (*sim) {
      auto cfg = resolve_config(sim_o);
      tsln::cmd_simulate(cfg, sim_replicate);
      std::cout << "wrote " << cfg.output.string() << "\n";
    } else if (*fit) {
      return run_fit(fit_o);
    } else if (*rep) {
      auto cfg = resolve_config(rep_o);
      const auto s = tsln::cmd_replicate(cfg);
      std::cout << "converged " << s.converged << ", discarded " << s.discarded << ", failed " << s.failed << " in "
                << s.seconds << " s\n";
    } else if (*grid) {
      if (grid_o.scenario.empty() && grid_o.config.empty()) grid_o.scenario = "SuppE";
      auto cfg = resolve_config(grid_o);
      const auto s = tsln::cmd_suppe_grid(cfg);
      std::cout << "cells converged " << s.converged << ", discarded " << s.discarded << ", failed " << s.failed
                << "\n";
    } else if (*report) {
      tsln::cmd_report(report_dir);
    }
  } catch (const tsln::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataExit;
  }
  return 0;
}
