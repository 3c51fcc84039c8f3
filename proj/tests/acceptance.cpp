// One PASS/FAIL line per acceptance criterion.  Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tsln/area_model.hpp"
#include "tsln/baselines.hpp"
#include "tsln/census.hpp"
#include "tsln/csv.hpp"
#include "tsln/diagnostics.hpp"
#include "tsln/experiment.hpp"
#include "tsln/mcmc.hpp"
#include "tsln/rng.hpp"
#include "tsln/spatial.hpp"
#include "tsln/stage1.hpp"
#include "tsln/stage2.hpp"
#include "tsln/survey.hpp"

using namespace tsln;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

class Gaussian : public LogDensityModel {
 public:
  Gaussian(double m, double s) : m_(m), s_(s) {}
  std::size_t dim() const override { return 1; }
  std::vector<std::string> names() const override { return {"x"}; }
  double log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override {
    const double z = (q[0] - m_) / s_;
    grad.resize(1);
    grad[0] = -z / s_;
    return -0.5 * z * z;
  }
  Eigen::VectorXd constrain(const Eigen::VectorXd& q) const override { return q; }

 private:
  double m_, s_;
};

SurveySample toy_sample() {
  const std::vector<int> area{1, 1, 1, 1, 2, 2, 2, 3, 3, 3, 3, 3};
  const std::vector<int> y{1, 0, 0, 1, 0, 0, 1, 1, 1, 0, 0, 0};
  const std::vector<double> w{1, 2, 3, 2, 1, 1, 4, 2, 2, 1, 3, 1};
  std::vector<SurveyRecord> recs;
  for (std::size_t j = 0; j < y.size(); ++j) {
    recs.push_back({area[j], y[j], 1 + static_cast<int>(j % 3), 0.1 * static_cast<double>(j % 5), w[j]});
  }
  return SurveySample(recs, 3);
}

const AreaTable kToyAreas{{40, 30, 50}, {0.2, -0.4, 0.9}};

Eigen::MatrixXd random_p(const SurveySample& s, int T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  Eigen::MatrixXd p(T, static_cast<Eigen::Index>(s.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

Adjacency line(int M) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i + 1 < M; ++i) e.emplace_back(i, i + 1);
  return Adjacency(M, e);
}

double max_gradient_error(const LogDensityModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  int checked = 0;
  for (int k = 0; k < 50 && checked < 10; ++k) {
    Eigen::VectorXd q(static_cast<Eigen::Index>(model.dim()));
    for (auto& x : q) x = u(rng);
    Eigen::VectorXd g(q.size());
    if (!std::isfinite(model.log_density(q, g))) continue;
    worst = std::max(worst, gradient_check(model, q));
    ++checked;
  }
  return checked == 10 ? worst : std::numeric_limits<double>::infinity();
}

// 1 ------------------------------------------------------------------------

void identities(Outcome& o) {
  const auto s = toy_sample();
  const auto p = random_p(s, 50, 3);
  const auto s1 = build_s1_estimates(p, s, kToyAreas, 7);
  const auto wa = area_normalized_weights(s);
  double worst = 0.0;
  for (const auto& a : s1.areas) {
    const auto& idx = s.area_records(a.area_id);
    for (std::size_t t = 0; t < a.mu.size(); ++t) {
      std::vector<double> r, w;
      for (auto j : idx) {
        r.push_back(p(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) - s.records()[j].y);
        w.push_back(wa[j]);
      }
      const double vb = weighted_residual_variance(r, w, kToyAreas.population(a.area_id));
      worst = std::max(worst, std::abs(a.psi[t] - (a.psi_direct + vb)));
    }
  }
  o.require(worst <= 1e-12, "variance decomposition");
  o.detail << "psi decomposition max err " << worst;

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.05, 0.6);
  const int M = 12, T = 200;
  std::vector<std::vector<double>> draws(M, std::vector<double>(T));
  std::vector<long> pop(M);
  for (int i = 0; i < M; ++i) {
    pop[static_cast<std::size_t>(i)] = 300 + 97 * i;
    for (auto& x : draws[static_cast<std::size_t>(i)]) x = u(rng);
  }
  const auto regions = contiguous_regions(M, 3);
  const std::vector<double> C{0.2, 0.3, 0.25};
  const auto b = exact_benchmark(draws, pop, regions, C);
  double bench = 0.0;
  for (int t = 0; t < T; ++t) {
    std::vector<double> mu_t(M);
    for (int i = 0; i < M; ++i) {
      mu_t[static_cast<std::size_t>(i)] = b.draws[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
    }
    const auto agg = aggregate_to_region(mu_t, pop, regions);
    for (std::size_t k = 0; k < C.size(); ++k) bench = std::max(bench, std::abs(agg[k] - C[k]));
  }
  o.require(bench <= 1e-12 && b.clamped == 0, "exact benchmark aggregate");
  o.detail << "; benchmark max err " << bench;

  // logit transforms and their delta-method variances, there and back.
  double round = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double mu = 0.001 + 0.998 * std::uniform_real_distribution<double>(0, 1)(rng);
    const double psi = 1e-4 + 0.05 * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto e = empirical_logit(mu, psi);
    const double back_mu = inv_logit(e.theta);
    const double back_psi = e.gamma * std::pow(back_mu * (1 - back_mu), 2);
    round = std::max({round, std::abs(back_mu - mu), std::abs(back_psi - psi) / psi});
  }
  o.require(round <= 1e-12, "logit round trip");
  o.detail << "; logit round trip " << round;

  double beta_err = 0.0;
  std::uniform_real_distribution<double> deff_d(0.2, 5.0);
  std::uniform_int_distribution<int> n_d(2, 60);
  for (int k = 0; k < 1000; ++k) {
    const double mu = 0.01 + 0.98 * std::uniform_real_distribution<double>(0, 1)(rng);
    const double deff = deff_d(rng);
    const double n = n_d(rng);
    const auto [a, bb] = beta_shapes(mu, deff * mu * (1.0 - mu) / n);
    const double phi = n / deff - 1.0;
    beta_err = std::max({beta_err, std::abs(a + bb - phi) / std::max(1.0, phi), std::abs(a / (a + bb) - mu)});
  }
  o.require(beta_err <= 1e-12, "beta precision");
  o.detail << "; beta phi err " << beta_err;
}

// 2 ------------------------------------------------------------------------

void limits(Outcome& o) {
  const auto s = toy_sample();
  Eigen::MatrixXd py(6, static_cast<Eigen::Index>(s.size()));
  for (std::size_t j = 0; j < s.size(); ++j) py.col(static_cast<Eigen::Index>(j)).setConstant(s.records()[j].y);
  const auto s1 = build_s1_estimates(py, s, kToyAreas, 1);
  const auto d = compute_direct_estimates(s, kToyAreas);
  bool same = s1.areas.size() == d.size();
  for (std::size_t k = 0; same && k < d.size(); ++k) {
    for (std::size_t t = 0; t < s1.areas[k].mu.size(); ++t) {
      same = same && std::abs(s1.areas[k].mu[t] - d.mu[k]) <= 1e-15 && s1.areas[k].psi[t] == d.psi[k];
    }
  }
  o.require(same, "p = y collapse");

  const auto w = area_normalized_weights(s);
  const double overall = overall_prevalence(s);
  const double sr1 = smoothing_ratio(py, s, w, overall)[0];
  const double sr0 = smoothing_ratio(Eigen::MatrixXd::Constant(2, static_cast<Eigen::Index>(s.size()), overall), s,
                                     w, overall)[0];
  o.require(std::abs(sr1 - 1.0) <= 1e-12, "SR = 1");
  o.require(std::abs(sr0) <= 1e-12, "SR = 0");

  const std::vector<double> x{-1.0, 0.5, 2.0, -0.3};
  const double a1 = alc(x, x, {0.1, 0.2, 0.4, 0.3});
  o.require(std::abs(a1 - 1.0) <= 1e-12, "ALC identity");

  const auto g = line(5);
  const double kappa = compute_icar_scaling(g);
  Eigen::VectorXd sv(5), vv(5);
  sv << 0.3, -0.1, 0.8, -1.2, 0.2;
  vv << -0.5, 0.4, 0.9, 0.1, -0.7;
  const auto r0 = bym2_contribution(sv, vv, 0.0, 0.7, g, kappa);
  const auto r1 = bym2_contribution(sv, vv, 1.0, 0.7, g, kappa);
  const double e0 = (r0.delta - 0.7 * vv).norm();
  const double e1 = (r1.delta - 0.7 * sv / std::sqrt(kappa)).norm();
  o.require(e0 <= 1e-14 && e1 <= 1e-14, "BYM2 limits");
  o.detail << "SR " << sr1 << "/" << sr0 << "; ALC " << a1 << "; BYM2 errs " << e0 << "," << e1;
}

// 3 ------------------------------------------------------------------------

void engine(Outcome& o) {
  // Prior N(0, 1), one observation 1 with unit noise.
  Gaussian post(0.5, std::sqrt(0.5));
  SamplerConfig cfg;
  cfg.draws = 2000;
  cfg.seed = 17;
  const auto d = sample(post, cfg).pooled(0);
  const double m = mean(d), sd = std::sqrt(variance(d));
  o.require(std::abs(m - 0.5) < 0.03 && std::abs(sd - std::sqrt(0.5)) < 0.03, "conjugate posterior");
  o.detail << "posterior mean " << m << " sd " << sd;

  double worst = 0.0;
  const auto s = toy_sample();
  for (const auto& spec : {Stage1Spec{}, Stage1Spec::census_only(), Stage1Spec::smoothing_variant(1.0, true)}) {
    worst = std::max(worst, max_gradient_error(Stage1Model(s, kToyAreas, spec), 11));
  }
  auto census_cfg = scenario_preset("Sc3", 20);
  const auto census = generate_census(census_cfg);
  const auto areas = census.area_table();
  const auto draw = draw_informative_sample(census, census_cfg, 1);
  const auto direct = compute_direct_estimates(draw.sample, areas);
  BaselineSpec spec;
  for (bool spatial : {false, true}) {
    spec.spatial = spatial ? std::optional<SpatialSpec>(SpatialSpec{line(20), RhoPrior::Beta, std::nullopt})
                           : std::nullopt;
    worst = std::max(worst, max_gradient_error(AreaLevelModel(eln_data(direct, areas, spec)), 2));
    worst = std::max(worst, max_gradient_error(AreaLevelModel(bin_data(draw.sample, areas, spec)), 3));
    worst = std::max(worst, max_gradient_error(AreaLevelModel(beta_data(direct, areas, spec)), 4));
  }
  // Stage 2 on S1 estimates from p = y plus noise.
  Eigen::MatrixXd p = random_p(draw.sample, 40, 5);
  const auto s1 = build_s1_estimates(p, draw.sample, areas, 6);
  Stage2Spec s2;
  worst = std::max(worst, max_gradient_error(AreaLevelModel(stage2_data(s1, direct, areas, s2)), 7));
  // LOG runs on the stage-1 model; its gradient is the stage-1 one above.
  o.require(worst < 1e-4, "gradient checks");
  o.detail << "; max gradient rel err " << worst;

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> chains(4, std::vector<double>(2000));
  for (auto& c : chains) {
    for (auto& v : c) v = n(rng);
  }
  const double rh = split_rhat(chains);
  o.require(rh >= 0.99 && rh <= 1.01, "split R-hat on iid chains");
  o.detail << "; iid R-hat " << rh;
}

// 4 ------------------------------------------------------------------------

void design(Outcome& o) {
  // Hajek under SRS without replacement from a fixed area.
  const int N = 400, n = 25, R = 2000;
  std::mt19937_64 rng(2024);
  std::vector<int> pop(N);
  for (int j = 0; j < N; ++j) pop[static_cast<std::size_t>(j)] = j % 5 == 0 || j % 7 == 0 ? 1 : 0;
  double truth = 0.0;
  for (int y : pop) truth += y;
  truth /= N;
  std::vector<int> idx(N);
  for (int j = 0; j < N; ++j) idx[static_cast<std::size_t>(j)] = j;
  double s1 = 0.0, s2 = 0.0;
  const AreaTable one{{N}, {0.0}};
  for (int r = 0; r < R; ++r) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<SurveyRecord> recs;
    for (int k = 0; k < n; ++k) {
      recs.push_back({1, pop[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])], 1, 0.0,
                      static_cast<double>(N) / n});
    }
    const double e = compute_direct_estimates(SurveySample(recs, 1), one).mu.at(0);
    s1 += e;
    s2 += e * e;
  }
  const double m = s1 / R;
  const double se = std::sqrt((s2 / R - m * m) / R);
  const double z = std::abs(m - truth) / se;
  o.require(z < 4.0, "Hajek under SRS");
  o.detail << "SRS |bias|/se " << z;

  // Informative PPS on a 50-person area against exact inclusion probabilities.
  Rng prng(99);
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> size(50);
  std::vector<int> y(50);
  for (int j = 0; j < 50; ++j) {
    y[static_cast<std::size_t>(j)] = j < 20 ? 0 : 1;
    size[static_cast<std::size_t>(j)] = (y[static_cast<std::size_t>(j)] == 0 ? 1.0 : 0.0) + 0.8 * ex(prng);
  }
  const long k = 6;
  // Brute force: systematic PPS is uniform over the start u in [0, step), so the
  // inclusion probability of a unit is the measure of starts whose points hit it.
  double tot = 0.0;
  for (double v : size) tot += v;
  const double step = tot / static_cast<double>(k);
  std::vector<double> oracle(50, 0.0);
  const int grid = 200000;
  for (int g = 0; g < grid; ++g) {
    const double u = (g + 0.5) / grid * step;
    double cum = 0.0;
    std::size_t j = 0;
    for (long h = 0; h < k; ++h) {
      const double point = u + static_cast<double>(h) * step;
      while (cum + size[j] < point) cum += size[j++];
      oracle[j] += 1.0 / grid;
    }
  }
  const auto pi = inclusion_probabilities(size, k);
  double pi_err = 0.0;
  for (int j = 0; j < 50; ++j) pi_err = std::max(pi_err, std::abs(pi[static_cast<std::size_t>(j)] - oracle[static_cast<std::size_t>(j)]));
  const int reps = 20000;
  std::vector<int> hits(50, 0);
  for (int r = 0; r < reps; ++r) {
    for (auto j : systematic_pps(size, k, prng)) ++hits[j];
  }
  bool within = true;
  double p0 = 0.0, p1 = 0.0;
  for (int j = 0; j < 50; ++j) {
    const double f = hits[static_cast<std::size_t>(j)] / static_cast<double>(reps);
    const double q = oracle[static_cast<std::size_t>(j)];
    within = within && std::abs(f - q) < 4.0 * std::sqrt(q * (1 - q) / reps) + 1e-3;
    (y[static_cast<std::size_t>(j)] == 0 ? p0 : p1) += f;
  }
  p0 /= 20;
  p1 /= 30;
  o.require(pi_err < 1e-4, "inclusion probabilities match the oracle");
  o.require(within, "selection frequencies match the oracle");
  o.require(p0 > p1, "y = 0 oversampled");
  o.detail << "; pi vs oracle " << pi_err << "; P(select | y=0) " << p0 << " vs y=1 " << p1;
}

// 5 and 6 --------------------------------------------------------------------

std::vector<MetricRow> g_rows;

void run_main_simulation(const std::filesystem::path& out) {
  if (!g_rows.empty()) return;
  auto c = config_from_json(json{{"scenario", {{"preset", "Sc3"}, {"M", 40}}},
                                 {"replicates", 50},
                                 {"models", {"TSLN", "ELN", "BIN"}}});
  c.output = out;
  cmd_replicate(c);
  g_rows = read_metrics_csv(out / "metrics.csv");
}

void ordering(Outcome& o, const std::filesystem::path& out) {
  run_main_simulation(out);
  const auto t5 = table5(g_rows);
  auto row = [&](const std::string& m) -> const SummaryRow& {
    for (const auto& r : t5) {
      if (r.model == m && r.group == "sampled") return r;
    }
    throw std::runtime_error("no sampled row for " + m);
  };
  const auto& ts = row("TSLN");
  const auto& el = row("ELN");
  const auto& bi = row("BIN");
  o.require(ts.mrrmse < el.mrrmse, "MRRMSE TSLN < ELN");
  o.require(ts.mrrmse < bi.mrrmse, "MRRMSE TSLN < BIN");
  o.require(ts.coverage >= 0.78 && ts.coverage <= 0.98, "TSLN coverage");
  o.require(ts.ci_width < el.ci_width, "CI width TSLN < ELN");
  o.detail << "MRRMSE TSLN " << ts.mrrmse << " ELN " << el.mrrmse << " BIN " << bi.mrrmse << "; coverage "
           << ts.coverage << "; width TSLN " << ts.ci_width << " ELN " << el.ci_width << "; replicates " << ts.replicates
           << "/" << el.replicates << "/" << bi.replicates;
}

void table4_analog(Outcome& o, const std::filesystem::path& out) {
  run_main_simulation(out);
  double unstable = std::nan(""), mab = std::nan(""), var = std::nan("");
  for (const auto& s : table4(g_rows)) {
    if (s.metric == "pct_unstable") unstable = s.value.median;
    if (s.metric == "pct_mab_reduction") mab = s.value.median;
    if (s.metric == "pct_var_increase") var = s.value.median;
  }
  o.require(unstable >= 15.0 && unstable <= 35.0, "unstable share");
  o.require(mab > 0.0, "MAB reduction");
  o.require(var > 0.0, "variance increase");
  o.detail << "unstable " << unstable << "%; MAB reduction " << mab << "%; variance increase " << var << "%";
}

// 7 ------------------------------------------------------------------------

void smoothing_grid(Outcome& o, const std::filesystem::path& out) {
  auto c = config_from_json(json{{"scenario", {{"preset", "SuppE"}, {"M", 100}}},
                                 {"replicates", 20},
                                 {"suppe", {{"sigma_e", {0.01, 0.5, 1.0, 2.0, 3.5}}, {"area_effect", {true, false}}}}});
  c.output = out;
  cmd_suppe_grid(c);
  const auto t = csv::read(out / "suppe.csv");
  const auto ci = t.column("sr"), ca = t.column("alc");
  std::vector<double> sr, al;
  for (const auto& r : t.rows) {
    const double s = csv::to_double(r[ci]), a = csv::to_double(r[ca]);
    if (std::isfinite(s) && std::isfinite(a)) {
      sr.push_back(s);
      al.push_back(a);
    }
  }
  const double n = static_cast<double>(sr.size());
  double ms = 0.0, ma = 0.0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    ms += sr[i] / n;
    ma += al[i] / n;
  }
  double sxy = 0.0, sxx = 0.0;
  int above = 0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    sxy += (sr[i] - ms) * (al[i] - ma);
    sxx += (sr[i] - ms) * (sr[i] - ms);
    above += al[i] >= sr[i] ? 1 : 0;
  }
  const double slope = sxy / sxx;
  const double frac = above / n;
  o.require(sr.size() >= 100, "enough usable cells");
  o.require(slope > 0.0, "positive slope");
  o.require(frac >= 0.9, "ALC >= SR on 90% of cells");
  o.detail << "cells " << sr.size() << "/" << t.rows.size() << "; slope " << slope << "; ALC >= SR on "
           << 100.0 * frac << "%";
}

// 8 ------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism(Outcome& o, const std::filesystem::path& base) {
  std::string first;
  for (int k = 0; k < 2; ++k) {
    auto c = config_from_json(json{{"scenario", {{"preset", "Sc3"}, {"M", 20}}},
                                   {"replicates", 3},
                                   {"engine", {{"chains", 2}, {"warmup", 200}, {"draws", 200}}}});
    c.output = base / ("run" + std::to_string(k));
    cmd_replicate(c);
    const auto m = slurp(c.output / "metrics.csv");
    if (k == 0) {
      first = m;
    } else {
      o.require(!first.empty() && m == first, "metrics.csv differs between runs");
      o.detail << "metrics.csv " << m.size() << " bytes, identical " << (m == first ? "yes" : "no");
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Optional argument: run a single criterion.
  const int only = argc > 1 ? std::stoi(argv[1]) : 0;
  const auto base = std::filesystem::temp_directory_path() / "tsln_acceptance";
  std::filesystem::remove_all(base);
  std::filesystem::create_directories(base);

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"identities", identities},
      {"limits", limits},
      {"engine validity", engine},
      {"design properties", design},
      {"simulation ordering", [&](Outcome& o) { ordering(o, base / "main"); }},
      {"stage-1 summaries", [&](Outcome& o) { table4_analog(o, base / "main"); }},
      {"smoothing grid", [&](Outcome& o) { smoothing_grid(o, base / "grid"); }},
      {"determinism", [&](Outcome& o) { determinism(o, base / "det"); }},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (only != 0 && only != static_cast<int>(k + 1)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[k].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k + 1 << " (" << criteria[k].first << ", "
              << std::round(sec) << " s): " << o.detail.str() << std::endl;
  }
  return failures;
}
