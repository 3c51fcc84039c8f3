#include "tsln/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "tsln/diagnostics.hpp"
#include "tsln/rng.hpp"
#include "tsln/survey.hpp"

namespace tsln {

namespace {

Eigen::MatrixXd area_design(const AreaTable& areas, const Stage2Spec& spec) {
  const auto M = static_cast<Eigen::Index>(areas.size());
  if (spec.Z) {
    if (spec.Z->rows() != M) throw std::invalid_argument("area covariates do not match the number of areas");
    return *spec.Z;
  }
  if (!spec.use_area_covariate) return Eigen::MatrixXd(M, 0);
  if (areas.Z.size() != areas.N.size()) throw std::invalid_argument("area table lacks covariates");
  Eigen::MatrixXd Z(M, 1);
  for (Eigen::Index i = 0; i < M; ++i) Z(i, 0) = areas.Z[static_cast<std::size_t>(i)];
  return Z;
}

void warn_outside_support(const std::vector<AreaObservation>& obs, const std::string& label,
                          std::vector<std::string>* warnings) {
  if (warnings == nullptr) return;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& o : obs) {
    if (!o.stable) continue;
    lo = std::min(lo, o.log_n);
    hi = std::max(hi, o.log_n);
  }
  for (const auto& o : obs) {
    if (o.stable || (o.log_n >= lo && o.log_n <= hi)) continue;
    warnings->push_back(label + ": area " + std::to_string(o.area + 1) + " sample size " +
                        std::to_string(static_cast<long>(std::lround(std::exp(o.log_n)))) +
                        " is outside the variance-function training range");
  }
}

}  // namespace

AreaModelData stage2_data(const S1Summaries& s1, const DirectEstimates& direct, const AreaTable& areas,
                          const Stage2Spec& spec, std::vector<std::string>* warnings) {
  AreaModelData d;
  d.likelihood = AreaLikelihood::Tsln;
  d.M = static_cast<int>(areas.size());
  d.Z = area_design(areas, spec);
  d.N = areas.N;
  d.gvf = spec.gvf;
  if (spec.spatial_requested && !spec.spatial) throw std::invalid_argument("missing adjacency for the spatial model");
  d.spatial = spec.spatial;
  d.benchmark = spec.benchmark;
  for (std::size_t k = 0; k < direct.size(); ++k) {
    const auto* a = s1.find(direct.area_ids[k]);
    if (a == nullptr) continue;
    AreaObservation o;
    o.area = a->area_id - 1;
    o.stable = direct.stable[k];
    const auto& sub = a->theta_subset;
    if (sub.empty()) throw std::invalid_argument("empty theta subset");
    const double m = mean(sub);
    double ss = 0.0;
    for (double t : sub) ss += (t - m) * (t - m);
    o.value = m;
    o.meas_ss = ss;
    o.subset = static_cast<int>(sub.size());
    o.meas_var = a->var_theta;
    o.variance = o.stable ? a->gamma_bar : 0.0;
    o.log_n = std::log(static_cast<double>(a->n));
    if (!(o.meas_var > 0.0)) {
      throw std::invalid_argument("area " + std::to_string(a->area_id) + " has no variation in its S1 draws");
    }
    d.obs.push_back(o);
  }
  warn_outside_support(d.obs, "TSLN", warnings);
  return d;
}

AreaFit fit_stage2(const S1Summaries& s1, const DirectEstimates& direct, const AreaTable& areas,
                   const Stage2Spec& spec, const SamplerConfig& sampler) {
  std::vector<std::string> warnings = s1.warnings;
  AreaLevelModel model(stage2_data(s1, direct, areas, spec, &warnings));
  require_gradients(model, sampler.seed);
  SamplerConfig cfg = sampler;
  cfg.seed = stream_seed(sampler.seed, {streams::fit, 2});
  auto posterior = tsln::sample(model, cfg);
  const int M = model.data().M;
  std::vector<bool> sampled(static_cast<std::size_t>(M), false);
  std::vector<bool> stable(static_cast<std::size_t>(M), false);
  for (std::size_t k = 0; k < direct.size(); ++k) {
    const auto i = static_cast<std::size_t>(direct.area_ids[k] - 1);
    sampled[i] = true;
    stable[i] = direct.stable[k];
  }
  auto fit = area_fit_from_posterior("TSLN", std::move(posterior), model.mu_offset(), M, sampled, stable);
  fit.warnings = std::move(warnings);
  return fit;
}

TslnFit fit_tsln(const SurveySample& sample, const AreaTable& areas, const Stage1Spec& stage1_spec,
                 const SamplerConfig& sampler, const Stage2Spec& stage2_spec, std::optional<int> subset_size) {
  TslnFit out;
  out.stage1 = fit_stage1(sample, areas, stage1_spec, sampler, subset_size);
  if (!out.stage1.converged) return out;
  const auto direct = compute_direct_estimates(sample, areas);
  out.stage2 = fit_stage2(out.stage1.summaries, direct, areas, stage2_spec, sampler);
  out.converged = out.stage2.converged;
  return out;
}

ExactBenchmark exact_benchmark(const std::vector<std::vector<double>>& mu_draws, const std::vector<long>& N,
                               const std::vector<std::vector<int>>& regions, const std::vector<double>& C_hat) {
  if (mu_draws.size() != N.size()) throw std::invalid_argument("draws and population sizes differ in length");
  if (regions.size() != C_hat.size()) throw std::invalid_argument("regions and benchmarks differ in length");
  ExactBenchmark out{mu_draws, 0};
  for (std::size_t k = 0; k < regions.size(); ++k) {
    if (!(C_hat[k] > 0.0 && C_hat[k] < 1.0)) throw std::invalid_argument("benchmark must lie in (0, 1)");
    const auto& region = regions[k];
    if (region.empty()) throw std::invalid_argument("empty region");
    double total = 0.0;
    for (int i : region) total += static_cast<double>(N.at(static_cast<std::size_t>(i)));
    const std::size_t T = mu_draws[static_cast<std::size_t>(region.front())].size();
    for (std::size_t t = 0; t < T; ++t) {
      double agg = 0.0;
      for (int i : region) agg += mu_draws[static_cast<std::size_t>(i)].at(t) * static_cast<double>(N[static_cast<std::size_t>(i)]);
      const double R = agg / (C_hat[k] * total);
      if (!(R > 0.0)) throw std::domain_error("non-positive benchmark ratio");
      for (int i : region) {
        double& v = out.draws[static_cast<std::size_t>(i)][t];
        v = mu_draws[static_cast<std::size_t>(i)][t] / R;
        if (v >= 1.0) {
          v = 1.0 - 1e-9;
          ++out.clamped;
        }
      }
    }
  }
  return out;
}

BenchmarkSpec read_benchmark_json(const std::filesystem::path& path, int areas, double epsilon) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error(path.string() + ": expected an object of regions");
  BenchmarkSpec b;
  b.epsilon = epsilon;
  for (const auto& [name, r] : j.items()) {
    if (!r.contains("areas") || !r.contains("C_hat") || !r.contains("var")) {
      throw std::runtime_error(path.string() + ": region " + name + " needs areas, C_hat and var");
    }
    std::vector<int> ids;
    for (const auto& a : r.at("areas")) ids.push_back(a.get<int>() - 1);
    b.regions.push_back(std::move(ids));
    b.C_hat.push_back(r.at("C_hat").get<double>());
    b.var.push_back(r.at("var").get<double>());
  }
  b.validate(areas);
  return b;
}

std::vector<std::vector<int>> contiguous_regions(int areas, int count) {
  if (count < 1 || count > areas) throw std::invalid_argument("region count must lie in 1..M");
  std::vector<std::vector<int>> out(static_cast<std::size_t>(count));
  for (int i = 0; i < areas; ++i) {
    out[static_cast<std::size_t>(static_cast<long>(i) * count / areas)].push_back(i);
  }
  return out;
}

BenchmarkSpec direct_benchmark(const SurveySample& sample, const AreaTable& areas,
                               const std::vector<std::vector<int>>& regions, double epsilon) {
  BenchmarkSpec b;
  b.epsilon = epsilon;
  const auto& recs = sample.records();
  for (const auto& region : regions) {
    std::vector<int> y;
    std::vector<double> w;
    long pop = 0;
    for (int i : region) {
      pop += areas.N.at(static_cast<std::size_t>(i));
      if (!sample.is_sampled(i + 1)) continue;
      for (auto r : sample.area_records(i + 1)) {
        y.push_back(recs[r].y);
        w.push_back(recs[r].w_raw);
      }
    }
    if (y.size() < 2) throw std::invalid_argument("benchmark region has fewer than two sampled units");
    double sw = 0.0;
    for (double x : w) sw += x;
    for (double& x : w) x *= static_cast<double>(w.size()) / sw;
    const double c = hajek_estimate(y, w);
    if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("benchmark region estimate is 0 or 1");
    b.regions.push_back(region);
    b.C_hat.push_back(c);
    b.var.push_back(hajek_variance(y, w, c, pop));
  }
  b.validate(static_cast<int>(areas.size()));
  return b;
}

}  // namespace tsln
