#include "tsln/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "tsln/baselines.hpp"
#include "tsln/csv.hpp"
#include "tsln/rng.hpp"
#include "tsln/stage1.hpp"
#include "tsln/stage2.hpp"

#ifndef TSLN_VERSION
#define TSLN_VERSION "0.0.0"
#endif

namespace tsln {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

ScenarioConfig scenario_from_json(const json& j, int default_M) {
  if (!j.is_object()) throw ConfigError("scenario must be an object");
  reject_unknown(j,
                 {"preset", "M", "m", "L", "U", "N_min", "N_max", "size_rule", "alpha_survey", "alpha_census", "u",
                  "sampling_fraction", "informativeness", "seed"},
                 "scenario");
  std::string preset = "Sc3";
  int M = default_M;
  read_field(j, "preset", preset);
  read_field(j, "M", M);
  ScenarioConfig s;
  try {
    s = scenario_preset(preset, M);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  read_field(j, "m", s.m);
  read_field(j, "L", s.L);
  read_field(j, "U", s.U);
  read_field(j, "N_min", s.N_min);
  read_field(j, "N_max", s.N_max);
  read_field(j, "alpha_survey", s.alpha_survey);
  read_field(j, "alpha_census", s.alpha_census);
  read_field(j, "u", s.u);
  read_field(j, "sampling_fraction", s.sampling_fraction);
  read_field(j, "informativeness", s.informativeness);
  read_field(j, "seed", s.seed);
  if (j.contains("size_rule")) {
    const auto r = j.at("size_rule").get<std::string>();
    if (r == "range") {
      s.size_rule = PopulationSizeRule::UniformRange;
    } else if (r == "two_point") {
      s.size_rule = PopulationSizeRule::TwoPoint;
    } else {
      throw ConfigError("size_rule must be 'range' or 'two_point'");
    }
  }
  return s;
}

json scenario_to_json(const ScenarioConfig& s) {
  return json{{"preset", s.name},
              {"M", s.M},
              {"m", s.m},
              {"L", s.L},
              {"U", s.U},
              {"N_min", s.N_min},
              {"N_max", s.N_max},
              {"size_rule", s.size_rule == PopulationSizeRule::UniformRange ? "range" : "two_point"},
              {"alpha_survey", s.alpha_survey},
              {"alpha_census", s.alpha_census},
              {"u", s.u},
              {"sampling_fraction", s.sampling_fraction},
              {"informativeness", s.informativeness},
              {"seed", s.seed}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

template <typename F>
void run_pool(int tasks, int workers, F&& body) {
  std::atomic<int> next{0};
  auto loop = [&] {
    for (int k = next++; k < tasks; k = next++) body(k);
  };
  const int n = std::max(1, std::min(workers, tasks));
  if (n == 1) {
    loop();
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < n; ++w) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
}

SamplerConfig replicate_sampler(const ExperimentConfig& config, int replicate, int workers) {
  SamplerConfig s = config.engine;
  s.seed = stream_seed(config.engine.seed, {streams::replicate, static_cast<std::uint64_t>(replicate)});
  s.parallel_chains = workers == 1 && config.engine.parallel_chains;
  return s;
}

Stage2Spec stage2_spec(const ExperimentConfig& config, const std::optional<BenchmarkSpec>& bm) {
  Stage2Spec s;
  s.gvf = config.gvf;
  s.benchmark = bm;
  if (config.spatial) s.spatial = SpatialSpec{simulation_adjacency(config), config.rho_prior, std::nullopt};
  return s;
}

BaselineSpec baseline_spec(const ExperimentConfig& config, const std::optional<BenchmarkSpec>& bm) {
  BaselineSpec s;
  s.gvf = config.gvf;
  s.benchmark = bm;
  if (config.spatial) s.spatial = SpatialSpec{simulation_adjacency(config), config.rho_prior, std::nullopt};
  return s;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string fmt_fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    scenario.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  if (models.empty()) throw ConfigError("at least one model is required");
  for (const auto& m : models) {
    if (std::find(kModelNames.begin(), kModelNames.end(), m) == kModelNames.end()) {
      throw ConfigError("unknown model '" + m + "'");
    }
  }
  if (engine.chains < 1 || engine.warmup < 1 || engine.draws < 2) throw ConfigError("engine needs chains >= 1, warmup >= 1, draws >= 2");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (benchmark && (benchmark_regions < 1 || benchmark_regions > scenario.M)) throw ConfigError("regions must lie in 1..M");
  if (suppe_sigma.empty() || suppe_area_effect.empty()) throw ConfigError("empty sigma_e grid");
  for (double s : suppe_sigma) {
    if (!(s > 0.0)) throw ConfigError("sigma_e values must be positive");
  }
  if (workers < 0) throw ConfigError("workers must be non-negative");
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, {"full_scale", "scenario", "replicates", "models", "engine", "stage2", "suppe", "output", "workers"},
                 "config");
  ExperimentConfig c;
  bool full = false;
  read_field(j, "full_scale", full);
  int M = 40;
  if (full) {
    M = 100;
    c.replicates = 500;
    c.engine.warmup = 1000;
    c.engine.draws = 500;
  }
  c.scenario = scenario_from_json(j.value("scenario", json::object()), M);
  read_field(j, "replicates", c.replicates);
  read_field(j, "models", c.models);
  if (j.contains("engine")) {
    const auto& e = j.at("engine");
    reject_unknown(e, {"chains", "warmup", "draws", "seed", "target_accept", "path_length", "parallel_chains"}, "engine");
    read_field(e, "chains", c.engine.chains);
    read_field(e, "warmup", c.engine.warmup);
    read_field(e, "draws", c.engine.draws);
    read_field(e, "seed", c.engine.seed);
    read_field(e, "target_accept", c.engine.target_accept);
    read_field(e, "path_length", c.engine.path_length);
    read_field(e, "parallel_chains", c.engine.parallel_chains);
  }
  if (j.contains("stage2")) {
    const auto& s = j.at("stage2");
    reject_unknown(s, {"spatial", "adjacency", "rho_prior", "benchmark", "epsilon", "regions", "gvf"}, "stage2");
    read_field(s, "spatial", c.spatial);
    read_field(s, "adjacency", c.adjacency);
    read_field(s, "benchmark", c.benchmark);
    read_field(s, "epsilon", c.epsilon);
    read_field(s, "regions", c.benchmark_regions);
    if (s.contains("rho_prior")) {
      const auto r = s.at("rho_prior").get<std::string>();
      if (r == "beta") {
        c.rho_prior = RhoPrior::Beta;
      } else if (r == "uniform") {
        c.rho_prior = RhoPrior::Uniform;
      } else {
        throw ConfigError("rho_prior must be 'beta' or 'uniform'");
      }
    }
    if (s.contains("gvf")) {
      const auto g = s.at("gvf").get<std::string>();
      if (g == "corrected") {
        c.gvf = GvfCorrection::Corrected;
      } else if (g == "naive") {
        c.gvf = GvfCorrection::Naive;
      } else {
        throw ConfigError("gvf must be 'corrected' or 'naive'");
      }
    }
  }
  if (j.contains("suppe")) {
    const auto& s = j.at("suppe");
    reject_unknown(s, {"sigma_e", "area_effect"}, "suppe");
    read_field(s, "sigma_e", c.suppe_sigma);
    read_field(s, "area_effect", c.suppe_area_effect);
  }
  std::string out = c.output.string();
  read_field(j, "output", out);
  c.output = out;
  read_field(j, "workers", c.workers);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c) {
  return json{{"scenario", scenario_to_json(c.scenario)},
              {"replicates", c.replicates},
              {"models", c.models},
              {"engine",
               {{"chains", c.engine.chains},
                {"warmup", c.engine.warmup},
                {"draws", c.engine.draws},
                {"seed", c.engine.seed},
                {"target_accept", c.engine.target_accept},
                {"path_length", c.engine.path_length},
                {"parallel_chains", c.engine.parallel_chains}}},
              {"stage2",
               {{"spatial", c.spatial},
                {"adjacency", c.adjacency},
                {"rho_prior", c.rho_prior == RhoPrior::Beta ? "beta" : "uniform"},
                {"benchmark", c.benchmark},
                {"epsilon", c.epsilon},
                {"regions", c.benchmark_regions},
                {"gvf", c.gvf == GvfCorrection::Corrected ? "corrected" : "naive"}}},
              {"suppe", {{"sigma_e", c.suppe_sigma}, {"area_effect", c.suppe_area_effect}}},
              {"output", c.output.string()}};
}

std::string config_hash(const ExperimentConfig& config) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << std::hash<std::string>{}(config_to_json(config).dump());
  return o.str();
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TSLN_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError("TSLN_WORKERS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Converged:
      return "converged";
    case FitStatus::Discarded:
      return "discarded";
    case FitStatus::Failed:
      return "failed";
  }
  return "failed";
}

CensusFrame build_census(const ScenarioConfig& scenario) {
  return scenario.variant == CensusVariant::SuppE ? generate_suppE_census(scenario) : generate_census(scenario);
}

Adjacency simulation_adjacency(const ExperimentConfig& config) {
  const int M = config.scenario.M;
  if (config.adjacency == "line") {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i + 1 < M; ++i) edges.emplace_back(i, i + 1);
    return Adjacency(M, edges);
  }
  if (config.adjacency.empty()) throw ConfigError("missing adjacency for the spatial model");
  try {
    return read_adjacency_csv(config.adjacency, M);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

ModelOutcome summarize_outcome(const std::string& model, const AreaFit& fit, const std::vector<double>& truth,
                               bool converged) {
  ModelOutcome o;
  o.model = model;
  o.status = converged ? FitStatus::Converged : FitStatus::Discarded;
  o.max_rhat = fit.max_rhat;
  o.median = fit.median;
  o.hdi = fit.hdi;
  o.sampled = fit.sampled;
  o.stable = fit.stable;
  for (std::size_t i = 0; i < fit.mu_draws.size(); ++i) {
    o.arb.push_back(arb(fit.mu_draws[i], truth.at(i)));
    o.rrmse.push_back(rrmse(fit.mu_draws[i], truth.at(i)));
    o.covers.push_back(fit.hdi[i].contains(truth[i]));
  }
  if (!converged) {
    std::ostringstream m;
    m << "max R-hat " << fit.max_rhat << " above " << kRhatThreshold;
    o.message = m.str();
  }
  return o;
}

ReplicateResult run_replicate(const ExperimentConfig& config, const CensusFrame& census, int replicate) {
  ReplicateResult r;
  r.replicate = replicate;
  const auto& truth = census.true_mu;
  const AreaTable areas = census.area_table();
  const int workers = worker_count(config.workers);
  const SamplerConfig sampler = replicate_sampler(config, replicate, workers);

  auto draw = draw_informative_sample(census, config.scenario, static_cast<std::uint64_t>(replicate));
  r.warnings = draw.warnings;
  const SurveySample& sample = draw.sample;
  const auto direct = compute_direct_estimates(sample, areas);

  std::optional<BenchmarkSpec> bm;
  std::string setup_error;
  try {
    if (config.benchmark) {
      bm = direct_benchmark(sample, areas, contiguous_regions(config.scenario.M, config.benchmark_regions),
                            config.epsilon);
    }
  } catch (const std::exception& e) {
    setup_error = std::string("benchmark: ") + e.what();
  }

  for (const auto& name : config.models) {
    ModelOutcome out;
    out.model = name;
    try {
      if (!setup_error.empty()) throw std::runtime_error(setup_error);
      if (name == "TSLN") {
        auto fit = fit_tsln(sample, areas, Stage1Spec{}, sampler, stage2_spec(config, bm));
        r.sr = fit.stage1.sr_median;
        if (fit.stage1.converged) {
          r.table4 = table4_summaries(direct, fit.stage1.summaries, truth);
          out = summarize_outcome(name, fit.stage2, truth, fit.converged);
          for (const auto& w : fit.stage2.warnings) r.warnings.push_back(w);
        } else {
          out.status = FitStatus::Discarded;
          std::ostringstream m;
          m << "stage 1 max R-hat " << fit.stage1.max_rhat << " above " << kRhatThreshold;
          out.message = m.str();
        }
      } else {
        const auto spec = baseline_spec(config, bm);
        AreaFit fit;
        if (name == "LOG") {
          fit = fit_log(sample, census, spec, sampler);
        } else if (name == "BIN") {
          fit = fit_bin(sample, areas, spec, sampler);
        } else if (name == "BETA") {
          fit = fit_beta(direct, areas, spec, sampler);
        } else {
          fit = fit_eln(direct, areas, spec, sampler);
        }
        out = summarize_outcome(name, fit, truth, fit.converged);
        for (const auto& w : fit.warnings) r.warnings.push_back(w);
      }
    } catch (const std::exception& e) {
      out = ModelOutcome{};
      out.model = name;
      out.status = FitStatus::Failed;
      out.message = e.what();
    }
    r.models.push_back(std::move(out));
  }
  return r;
}

std::vector<MetricRow> metric_rows(const std::string& scenario, const ReplicateResult& r) {
  std::vector<MetricRow> rows;
  const int d = r.replicate;
  for (const auto& m : r.models) {
    if (m.status != FitStatus::Converged) continue;
    for (const std::string group : {"sampled", "nonsampled", "all"}) {
      std::vector<double> a, rr, width;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < m.median.size(); ++i) {
        const bool in = group == "all" || (group == "sampled") == m.sampled[i];
        if (!in) continue;
        a.push_back(m.arb[i]);
        rr.push_back(m.rrmse[i]);
        width.push_back(m.hdi[i].width());
        hits += m.covers[i] ? 1 : 0;
      }
      if (a.empty()) continue;
      rows.push_back({scenario, m.model, group, "n_areas", d, static_cast<double>(a.size())});
      rows.push_back({scenario, m.model, group, "MARB", d, mean_of(a)});
      rows.push_back({scenario, m.model, group, "MRRMSE", d, mean_of(rr)});
      rows.push_back({scenario, m.model, group, "coverage", d, static_cast<double>(hits) / static_cast<double>(a.size())});
      rows.push_back({scenario, m.model, group, "ci_width", d, median(width)});
    }
  }
  if (r.table4) {
    rows.push_back({scenario, "S1", "sampled", "pct_unstable", d, r.table4->pct_unstable});
    rows.push_back({scenario, "S1", "sampled", "alc", d, r.table4->alc});
    rows.push_back({scenario, "S1", "sampled", "pct_var_increase", d, r.table4->pct_var_increase});
    rows.push_back({scenario, "S1", "sampled", "pct_mab_reduction", d, r.table4->pct_mab_reduction});
    rows.push_back({scenario, "S1", "sampled", "sr", d, r.sr});
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ostringstream o;
  o << "scenario,model,sampled,metric,replicate,value\n";
  for (const auto& r : rows) {
    o << r.scenario << ',' << r.model << ',' << r.group << ',' << r.metric << ',' << r.replicate << ','
      << csv::exact(r.value) << '\n';
  }
  write_text(path, o.str());
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  csv::Table t;
  try {
    t = csv::read(path);
    csv::require_header(t, {"scenario", "model", "sampled", "metric", "replicate", "value"}, path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  std::vector<MetricRow> rows;
  for (const auto& r : t.rows) {
    rows.push_back({r[0], r[1], r[2], r[3], static_cast<int>(csv::to_long(r[4])), csv::to_double(r[5])});
  }
  return rows;
}

std::vector<SummaryRow> table5(const std::vector<MetricRow>& rows) {
  // (model, group) in first-seen order.
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<double>>> values;
  std::map<std::pair<std::string, std::string>, std::map<int, std::map<std::string, double>>> by_rep;
  for (const auto& r : rows) {
    if (r.model == "S1") continue;
    const auto key = std::make_pair(r.model, r.group);
    if (!values.count(key)) keys.push_back(key);
    values[key][r.metric].push_back(r.value);
    by_rep[key][r.replicate][r.metric] = r.value;
  }
  std::vector<SummaryRow> out;
  for (const auto& key : keys) {
    auto& v = values[key];
    SummaryRow s;
    s.model = key.first;
    s.group = key.second;
    s.replicates = static_cast<int>(by_rep[key].size());
    s.mrrmse = median(v["MRRMSE"]);
    s.marb = median(v["MARB"]);
    s.ci_width = median(v["ci_width"]);
    double hits = 0.0, total = 0.0;
    for (const auto& [d, m] : by_rep[key]) {
      hits += m.at("coverage") * m.at("n_areas");
      total += m.at("n_areas");
    }
    s.coverage = hits / total;
    out.push_back(s);
  }
  for (auto& s : out) {
    const auto ref = std::find_if(out.begin(), out.end(),
                                  [&](const SummaryRow& r) { return r.model == "TSLN" && r.group == s.group; });
    const double nan = std::nan("");
    s.mrrmse_ratio = ref != out.end() ? s.mrrmse / ref->mrrmse : nan;
    s.marb_ratio = ref != out.end() ? s.marb / ref->marb : nan;
    s.width_ratio = ref != out.end() ? s.ci_width / ref->ci_width : nan;
  }
  return out;
}

std::vector<Table4Summary> table4(const std::vector<MetricRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : rows) {
    if (r.model != "S1") continue;
    if (!values.count(r.metric)) order.push_back(r.metric);
    values[r.metric].push_back(r.value);
  }
  std::vector<Table4Summary> out;
  for (const auto& m : order) out.push_back({m, median_iqr(values[m]), static_cast<int>(values[m].size())});
  return out;
}

namespace {

void write_area_estimates(std::ostream& o, const std::string& scenario, const ReplicateResult& r,
                          const std::vector<double>& truth) {
  for (const auto& m : r.models) {
    if (m.status != FitStatus::Converged) continue;
    for (std::size_t i = 0; i < m.median.size(); ++i) {
      o << scenario << ',' << m.model << ',' << r.replicate << ',' << i + 1 << ',' << (m.sampled[i] ? 1 : 0) << ','
        << (m.stable[i] ? 1 : 0) << ',' << csv::exact(truth[i]) << ',' << csv::exact(m.median[i]) << ','
        << csv::exact(m.hdi[i].lo) << ',' << csv::exact(m.hdi[i].hi) << '\n';
    }
  }
}

std::string svg_number(double v) { return fmt_fixed(v, 2); }

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') {
      out += "&lt;";
    } else if (c == '>') {
      out += "&gt;";
    } else if (c == '&') {
      out += "&amp;";
    } else {
      out += c;
    }
  }
  return out;
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  double top = 40.0;
  double bottom = 360.0;
  double y(double v) const { return bottom - (v - lo) / (hi - lo) * (bottom - top); }
};

Axis axis_for(const std::vector<std::vector<double>>& values) {
  Axis a;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : values) {
    for (double x : v) {
      if (!std::isfinite(x)) continue;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  a.lo = lo - pad;
  a.hi = hi + pad;
  return a;
}

void y_ticks(std::ostringstream& o, const Axis& a, double x0, double x1) {
  for (int k = 0; k <= 4; ++k) {
    const double v = a.lo + (a.hi - a.lo) * k / 4.0;
    const double y = a.y(v);
    o << "<line x1=\"" << svg_number(x0) << "\" y1=\"" << svg_number(y) << "\" x2=\"" << svg_number(x1)
      << "\" y2=\"" << svg_number(y) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << svg_number(x0 - 6) << "\" y=\"" << svg_number(y + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_fixed(v, 3) << "</text>\n";
  }
}

std::string scatter_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                        const std::vector<double>& x, const std::vector<double>& y) {
  const Axis ay = axis_for({y});
  Axis ax = axis_for({x});
  const double left = 70.0, right = 480.0;
  auto px = [&](double v) { return left + (v - ax.lo) / (ax.hi - ax.lo) * (right - left); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"420\" font-family=\"sans-serif\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"260\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">" << svg_escape(title) << "</text>\n";
  y_ticks(o, ay, left, right);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    o << "<circle cx=\"" << svg_number(px(x[i])) << "\" cy=\"" << svg_number(ay.y(y[i]))
      << "\" r=\"2.5\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
  }
  o << "<text x=\"275\" y=\"395\" font-size=\"12\" text-anchor=\"middle\">" << svg_escape(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"200\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 200)\">"
    << svg_escape(ylabel) << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ax.lo + (ax.hi - ax.lo) * k / 4.0;
    o << "<text x=\"" << svg_number(px(v)) << "\" y=\"376\" font-size=\"11\" text-anchor=\"middle\">"
      << fmt_fixed(v, 2) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

std::string boxplot_svg(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& values) {
  if (labels.size() != values.size()) throw std::invalid_argument("labels and values differ in length");
  const Axis a = axis_for(values);
  const double left = 70.0;
  const double slot = 90.0;
  const double width = left + slot * static_cast<double>(labels.size()) + 30.0;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_number(width)
    << "\" height=\"400\" font-family=\"sans-serif\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << svg_number(width / 2) << "\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">"
    << svg_escape(title) << "</text>\n";
  y_ticks(o, a, left, width - 20.0);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const double cx = left + slot * (static_cast<double>(k) + 0.5);
    o << "<text x=\"" << svg_number(cx) << "\" y=\"385\" font-size=\"12\" text-anchor=\"middle\">"
      << svg_escape(labels[k]) << "</text>\n";
    std::vector<double> v;
    for (double x : values[k]) {
      if (std::isfinite(x)) v.push_back(x);
    }
    if (v.empty()) continue;
    const double q1 = quantile(v, 0.25), q2 = median(v), q3 = quantile(v, 0.75);
    const double fence_lo = q1 - 1.5 * (q3 - q1), fence_hi = q3 + 1.5 * (q3 - q1);
    double wlo = q1, whi = q3;
    for (double x : v) {
      if (x >= fence_lo) wlo = std::min(wlo, x);
      if (x <= fence_hi) whi = std::max(whi, x);
    }
    const double hw = 25.0;
    o << "<line x1=\"" << svg_number(cx) << "\" y1=\"" << svg_number(a.y(wlo)) << "\" x2=\"" << svg_number(cx)
      << "\" y2=\"" << svg_number(a.y(whi)) << "\" stroke=\"black\"/>\n";
    o << "<rect x=\"" << svg_number(cx - hw) << "\" y=\"" << svg_number(a.y(q3)) << "\" width=\""
      << svg_number(2 * hw) << "\" height=\"" << svg_number(a.y(q1) - a.y(q3))
      << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << svg_number(cx - hw) << "\" y1=\"" << svg_number(a.y(q2)) << "\" x2=\""
      << svg_number(cx + hw) << "\" y2=\"" << svg_number(a.y(q2)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double x : v) {
      if (x < fence_lo || x > fence_hi) {
        o << "<circle cx=\"" << svg_number(cx) << "\" cy=\"" << svg_number(a.y(x)) << "\" r=\"2\" fill=\"black\"/>\n";
      }
    }
  }
  o << "</svg>\n";
  return o.str();
}

void cmd_report(const std::filesystem::path& dir) {
  const auto rows = read_metrics_csv(dir / "metrics.csv");
  const auto t5 = table5(rows);
  const auto t4 = table4(rows);

  std::ostringstream o5;
  o5 << "model,sampled,replicates,median_mrrmse,median_marb,median_ci_width,coverage,mrrmse_ratio,marb_ratio,"
        "ci_width_ratio\n";
  for (const auto& s : t5) {
    o5 << s.model << ',' << s.group << ',' << s.replicates << ',' << fmt_fixed(s.mrrmse, 4) << ','
       << fmt_fixed(s.marb, 4) << ',' << fmt_fixed(s.ci_width, 4) << ',' << fmt_fixed(s.coverage, 4) << ','
       << fmt_fixed(s.mrrmse_ratio, 2) << ',' << fmt_fixed(s.marb_ratio, 2) << ',' << fmt_fixed(s.width_ratio, 2)
       << '\n';
  }
  write_text(dir / "table5.csv", o5.str());

  std::ostringstream o4;
  o4 << "metric,replicates,median,q25,q75\n";
  for (const auto& s : t4) {
    o4 << s.metric << ',' << s.replicates << ',' << fmt_fixed(s.value.median, 4) << ',' << fmt_fixed(s.value.q25, 4)
       << ',' << fmt_fixed(s.value.q75, 4) << '\n';
  }
  write_text(dir / "table4.csv", o4.str());

  json freq = json::array();
  const auto est_path = dir / "area_estimates.csv";
  if (std::filesystem::exists(est_path)) {
    csv::Table t;
    try {
      t = csv::read(est_path);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
    // model -> replicate -> medians by area; truth by area.
    std::vector<std::string> models;
    std::map<std::string, std::map<int, std::map<int, double>>> med;
    std::map<int, double> truth;
    for (const auto& r : t.rows) {
      if (!med.count(r[1])) models.push_back(r[1]);
      const int area = static_cast<int>(csv::to_long(r[3]));
      med[r[1]][static_cast<int>(csv::to_long(r[2]))][area] = csv::to_double(r[7]);
      truth[area] = csv::to_double(r[6]);
    }
    std::ostringstream of;
    of << "model,replicates,bias,variance,mse\n";
    for (const auto& m : models) {
      std::vector<std::vector<double>> meds;
      for (const auto& [d, areas] : med[m]) {
        std::vector<double> v;
        for (const auto& [i, x] : areas) v.push_back(x);
        meds.push_back(std::move(v));
      }
      std::vector<double> tv;
      for (const auto& [i, x] : truth) tv.push_back(x);
      if (meds.size() < 2) continue;
      const auto f = freq_mse(meds, tv);
      of << m << ',' << meds.size() << ',' << csv::exact(f.bias) << ',' << csv::exact(f.variance) << ','
         << csv::exact(f.mse) << '\n';
      freq.push_back({{"model", m}, {"replicates", meds.size()}, {"bias", f.bias}, {"variance", f.variance}, {"mse", f.mse}});
    }
    write_text(dir / "freq_mse.csv", of.str());
  }

  json summary;
  summary["table5"] = json::array();
  for (const auto& s : t5) {
    summary["table5"].push_back({{"model", s.model},
                                 {"sampled", s.group},
                                 {"replicates", s.replicates},
                                 {"median_mrrmse", s.mrrmse},
                                 {"median_marb", s.marb},
                                 {"median_ci_width", s.ci_width},
                                 {"coverage", s.coverage}});
  }
  summary["table4"] = json::array();
  for (const auto& s : t4) {
    summary["table4"].push_back({{"metric", s.metric},
                                 {"replicates", s.replicates},
                                 {"median", s.value.median},
                                 {"q25", s.value.q25},
                                 {"q75", s.value.q75}});
  }
  summary["freq_mse"] = freq;
  write_json(dir / "summary.json", summary);

  for (const std::string metric : {"MRRMSE", "MARB"}) {
    for (const std::string group : {"sampled", "nonsampled"}) {
      std::vector<std::string> labels;
      std::vector<std::vector<double>> values;
      for (const auto& r : rows) {
        if (r.group != group || r.metric != metric) continue;
        auto it = std::find(labels.begin(), labels.end(), r.model);
        if (it == labels.end()) {
          labels.push_back(r.model);
          values.emplace_back();
          it = labels.end() - 1;
        }
        values[static_cast<std::size_t>(it - labels.begin())].push_back(r.value);
      }
      if (labels.empty()) continue;
      std::string lower = metric;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      write_text(dir / ("boxplot_" + lower + "_" + group + ".svg"),
                 boxplot_svg(metric + " (" + group + " areas)", labels, values));
    }
  }
}

RunSummary cmd_replicate(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(config.output);
  if (config.spatial) (void)simulation_adjacency(config);
  const CensusFrame census = build_census(config.scenario);
  const int workers = worker_count(config.workers);
  std::vector<ReplicateResult> results(static_cast<std::size_t>(config.replicates));
  std::mutex log_mutex;
  run_pool(config.replicates, workers, [&](int k) {
    results[static_cast<std::size_t>(k)] = run_replicate(config, census, k + 1);
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << "replicate " << k + 1 << "/" << config.replicates << " done\n";
  });

  std::vector<MetricRow> rows;
  std::ostringstream est;
  est << "scenario,model,replicate,area_id,sampled,stable,truth,median,hdi_lo,hdi_hi\n";
  RunSummary summary;
  json reps = json::array();
  std::map<std::string, int> survivors;
  for (const auto& r : results) {
    auto mr = metric_rows(config.scenario.name, r);
    rows.insert(rows.end(), mr.begin(), mr.end());
    write_area_estimates(est, config.scenario.name, r, census.true_mu);
    json models = json::object();
    for (const auto& m : r.models) {
      models[m.model] = {{"status", to_string(m.status)}, {"message", m.message}, {"max_rhat", m.max_rhat}};
      switch (m.status) {
        case FitStatus::Converged:
          ++summary.converged;
          ++survivors[m.model];
          break;
        case FitStatus::Discarded:
          ++summary.discarded;
          break;
        case FitStatus::Failed:
          ++summary.failed;
          break;
      }
    }
    reps.push_back({{"replicate", r.replicate}, {"models", models}, {"warnings", r.warnings}});
  }
  write_metrics_csv(config.output / "metrics.csv", rows);
  write_text(config.output / "area_estimates.csv", est.str());
  cmd_report(config.output);
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest{{"command", "replicate"},
                {"config", config_to_json(config)},
                {"config_hash", config_hash(config)},
                {"code_version", TSLN_VERSION},
                {"workers", workers},
                {"replicates", reps},
                {"converged", summary.converged},
                {"discarded", summary.discarded},
                {"failed", summary.failed},
                {"surviving_replicates", survivors},
                {"wall_clock_seconds", summary.seconds}};
  write_json(config.output / "manifest.json", manifest);
  return summary;
}

void cmd_simulate(const ExperimentConfig& config, int replicate) {
  config.validate();
  if (replicate < 1) throw ConfigError("replicate must be at least 1");
  std::filesystem::create_directories(config.output);
  const CensusFrame census = build_census(config.scenario);
  const auto draw = draw_informative_sample(census, config.scenario, static_cast<std::uint64_t>(replicate));
  write_census_csv(config.output / "census.csv", census);
  write_area_csv(config.output / "areas.csv", census.area_table());
  std::ostringstream t;
  t << "area_id,mu\n";
  for (std::size_t i = 0; i < census.true_mu.size(); ++i) t << i + 1 << ',' << csv::exact(census.true_mu[i]) << '\n';
  write_text(config.output / "truth.csv", t.str());
  write_sample_csv(config.output / "sample.csv", draw.sample);
  json manifest{{"command", "simulate"},
                {"config", config_to_json(config)},
                {"config_hash", config_hash(config)},
                {"code_version", TSLN_VERSION},
                {"replicate", replicate},
                {"sample_size", draw.sample.size()},
                {"sampled_areas", draw.sample.sampled_area_count()},
                {"warnings", draw.warnings}};
  write_json(config.output / "manifest.json", manifest);
}

std::vector<SuppECell> run_suppe_replicate(const ExperimentConfig& config, const CensusFrame& census, int replicate) {
  const AreaTable areas = census.area_table();
  const int workers = worker_count(config.workers);
  const SamplerConfig sampler = replicate_sampler(config, replicate, workers);
  const auto draw = draw_informative_sample(census, config.scenario, static_cast<std::uint64_t>(replicate));
  const auto& truth = census.true_mu;
  Stage2Spec s2;
  s2.gvf = config.gvf;
  std::vector<SuppECell> cells;
  for (double sigma : config.suppe_sigma) {
    for (bool ra : config.suppe_area_effect) {
      SuppECell c;
      c.replicate = replicate;
      c.sigma_e = sigma;
      c.area_effect = ra;
      const double nan = std::nan("");
      c.sr = c.alc = c.marb = c.mrrmse = c.coverage = c.hdi_width = nan;
      try {
        const auto fit = fit_tsln(draw.sample, areas, Stage1Spec::smoothing_variant(sigma, ra), sampler, s2);
        c.sr = fit.stage1.sr_median;
        c.alc = fit.stage1.alc;
        c.status = fit.converged ? FitStatus::Converged : FitStatus::Discarded;
        if (fit.stage1.converged) {
          const auto o = summarize_outcome("TSLN", fit.stage2, truth, fit.converged);
          c.marb = mean_of(o.arb);
          c.mrrmse = mean_of(o.rrmse);
          double hits = 0.0;
          std::vector<double> w;
          for (std::size_t i = 0; i < o.covers.size(); ++i) {
            hits += o.covers[i] ? 1.0 : 0.0;
            w.push_back(o.hdi[i].width());
          }
          c.coverage = hits / static_cast<double>(o.covers.size());
          c.hdi_width = median(w);
        }
      } catch (const std::exception&) {
        c.status = FitStatus::Failed;
      }
      cells.push_back(c);
    }
  }
  return cells;
}

void write_suppe_csv(const std::filesystem::path& path, const std::vector<SuppECell>& cells) {
  std::ostringstream o;
  o << "replicate,sigma_e,area_effect,status,sr,alc,marb,mrrmse,coverage,hdi_width\n";
  for (const auto& c : cells) {
    o << c.replicate << ',' << csv::exact(c.sigma_e) << ',' << (c.area_effect ? 1 : 0) << ',' << to_string(c.status)
      << ',' << csv::exact(c.sr) << ',' << csv::exact(c.alc) << ',' << csv::exact(c.marb) << ','
      << csv::exact(c.mrrmse) << ',' << csv::exact(c.coverage) << ',' << csv::exact(c.hdi_width) << '\n';
  }
  write_text(path, o.str());
}

RunSummary cmd_suppe_grid(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(config.output);
  const CensusFrame census = build_census(config.scenario);
  const int workers = worker_count(config.workers);
  std::vector<std::vector<SuppECell>> per(static_cast<std::size_t>(config.replicates));
  std::mutex log_mutex;
  run_pool(config.replicates, workers, [&](int k) {
    per[static_cast<std::size_t>(k)] = run_suppe_replicate(config, census, k + 1);
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << "grid replicate " << k + 1 << "/" << config.replicates << " done\n";
  });
  std::vector<SuppECell> cells;
  RunSummary summary;
  std::vector<double> sr, alc;
  for (const auto& v : per) {
    for (const auto& c : v) {
      cells.push_back(c);
      if (c.status == FitStatus::Converged) ++summary.converged;
      if (c.status == FitStatus::Discarded) ++summary.discarded;
      if (c.status == FitStatus::Failed) ++summary.failed;
      sr.push_back(c.sr);
      alc.push_back(c.alc);
    }
  }
  write_suppe_csv(config.output / "suppe.csv", cells);
  write_text(config.output / "alc_vs_sr.svg", scatter_svg("ALC against SR", "SR", "ALC", sr, alc));
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest{{"command", "suppe-grid"},
                {"config", config_to_json(config)},
                {"config_hash", config_hash(config)},
                {"code_version", TSLN_VERSION},
                {"workers", workers},
                {"cells", cells.size()},
                {"converged", summary.converged},
                {"discarded", summary.discarded},
                {"failed", summary.failed},
                {"wall_clock_seconds", summary.seconds}};
  write_json(config.output / "manifest.json", manifest);
  return summary;
}

}  // namespace tsln
