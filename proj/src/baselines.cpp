#include "tsln/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "tsln/rng.hpp"
#include "tsln/stage1.hpp"

namespace tsln {

namespace {

constexpr double kBetaFloor = 0.03;
constexpr double kBetaCeil = 0.97;
constexpr double kBoundShrink = 1e-9;

Eigen::MatrixXd area_covariates(const AreaTable& areas, bool use) {
  const auto M = static_cast<Eigen::Index>(areas.size());
  if (!use) return Eigen::MatrixXd(M, 0);
  Eigen::MatrixXd Z(M, 1);
  for (Eigen::Index i = 0; i < M; ++i) Z(i, 0) = areas.Z.at(static_cast<std::size_t>(i));
  return Z;
}

AreaModelData base_data(AreaLikelihood likelihood, const AreaTable& areas, const BaselineSpec& spec) {
  AreaModelData d;
  d.likelihood = likelihood;
  d.M = static_cast<int>(areas.size());
  d.Z = area_covariates(areas, spec.use_area_covariate);
  d.N = areas.N;
  d.gvf = spec.gvf;
  d.spatial = spec.spatial;
  d.benchmark = spec.benchmark;
  return d;
}

void flags_from_direct(const DirectEstimates& direct, int M, std::vector<bool>& sampled, std::vector<bool>& stable) {
  sampled.assign(static_cast<std::size_t>(M), false);
  stable.assign(static_cast<std::size_t>(M), false);
  for (std::size_t k = 0; k < direct.size(); ++k) {
    const auto i = static_cast<std::size_t>(direct.area_ids[k] - 1);
    sampled[i] = true;
    stable[i] = direct.stable[k];
  }
}

AreaFit run_area_model(const std::string& name, AreaModelData data, const SamplerConfig& sampler,
                       const DirectEstimates& direct, std::uint64_t tag, std::vector<std::string> warnings) {
  AreaLevelModel model(std::move(data));
  require_gradients(model, sampler.seed);
  SamplerConfig cfg = sampler;
  cfg.seed = stream_seed(sampler.seed, {streams::fit, tag});
  auto posterior = tsln::sample(model, cfg);
  std::vector<bool> sampled, stable;
  flags_from_direct(direct, model.data().M, sampled, stable);
  auto fit = area_fit_from_posterior(name, std::move(posterior), model.mu_offset(), model.data().M, sampled, stable);
  fit.warnings = std::move(warnings);
  return fit;
}

}  // namespace

double log_area_estimate(double sampled_y, double census_p_sum, double sampled_p_sum, long N) {
  if (N < 1) throw std::invalid_argument("population size must be positive");
  return (sampled_y + census_p_sum - sampled_p_sum) / static_cast<double>(N);
}

AreaFit fit_log(const SurveySample& sample, const CensusFrame& census, const BaselineSpec& spec,
                const SamplerConfig& sampler) {
  const int M = census.total_areas();
  if (sample.total_areas() != M) throw std::invalid_argument("census and sample cover different areas");
  if (census.offset.size() != static_cast<std::size_t>(M) + 1) throw std::invalid_argument("census frame is malformed");
  for (int a : sample.sampled_area_ids()) {
    if (sample.area_size(a) > static_cast<std::size_t>(census.N[static_cast<std::size_t>(a - 1)])) {
      throw std::invalid_argument("area " + std::to_string(a) + " has more sampled units than people");
    }
  }
  const AreaTable areas = census.area_table();
  Stage1Spec s1spec = Stage1Spec::census_only();
  s1spec.area_covariate = spec.use_area_covariate;
  Stage1Model model(sample, areas, s1spec);
  require_gradients(model, sampler.seed);
  SamplerConfig cfg = sampler;
  cfg.seed = stream_seed(sampler.seed, {streams::fit, 3});
  const auto posterior = tsln::sample(model, cfg);

  const int C = posterior.chains();
  const int D = posterior.draws();
  const auto& design = model.design();
  const int K = design.columns();
  const auto& recs = sample.records();
  auto prior_rng = make_stream(sampler.seed, {streams::fit, 4});
  std::normal_distribution<double> normal(0.0, 1.0);

  // Centered covariate rows are affine in x_census, so one slope and one offset per area.
  std::vector<Eigen::RowVectorXd> base_rows(static_cast<std::size_t>(M));
  for (int a = 1; a <= M; ++a) {
    const double Z = areas.Z[static_cast<std::size_t>(a - 1)];
    base_rows[static_cast<std::size_t>(a - 1)] = design.row(1, 0.0, Z);
  }
  const Eigen::RowVectorXd unit = design.row(1, 1.0, 0.0) - design.row(1, 0.0, 0.0);

  std::vector<std::vector<double>> mu(static_cast<std::size_t>(M),
                                      std::vector<double>(static_cast<std::size_t>(C) * D));
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < D; ++t) {
      const auto draw = posterior.row(c, t);
      const double b_census = K > 0 ? unit.dot(draw.segment(1, K)) : 0.0;
      const double sigma = model.has_area_effect() ? draw[model.scale_offset()] : 0.0;
      const auto col = static_cast<std::size_t>(c) * D + t;
      for (int a = 1; a <= M; ++a) {
        const auto ai = static_cast<std::size_t>(a - 1);
        double offset = draw[0] + (K > 0 ? base_rows[ai].dot(draw.segment(1, K)) : 0.0);
        const int pos = sample.sampled_position(a);
        if (model.has_area_effect()) {
          offset += pos >= 0 ? draw[model.effect_offset() + pos] : sigma * normal(prior_rng);
        }
        double census_p = 0.0;
        for (const auto& p : census.area(a)) census_p += inv_logit(offset + b_census * p.x_census);
        double ys = 0.0, ps = 0.0;
        if (pos >= 0) {
          for (auto j : sample.area_records(a)) {
            ys += recs[j].y;
            ps += inv_logit(offset + b_census * recs[j].x_census);
          }
        }
        mu[ai][col] = std::clamp(log_area_estimate(ys, census_p, ps, census.N[ai]), 1e-12, 1.0 - 1e-12);
      }
    }
  }
  std::vector<std::string> warnings;
  if (spec.benchmark) {
    const auto bm = exact_benchmark(mu, census.N, spec.benchmark->regions, spec.benchmark->C_hat);
    mu = bm.draws;
    if (bm.clamped > 0) warnings.push_back("LOG: " + std::to_string(bm.clamped) + " benchmarked draws clamped below 1");
  }

  AreaFit fit;
  fit.model = "LOG";
  fit.chains = C;
  fit.mu_draws = std::move(mu);
  fit.sampled.assign(static_cast<std::size_t>(M), false);
  fit.stable.assign(static_cast<std::size_t>(M), false);
  const auto direct = compute_direct_estimates(sample, areas);
  for (std::size_t k = 0; k < direct.size(); ++k) {
    fit.sampled[static_cast<std::size_t>(direct.area_ids[k] - 1)] = true;
    fit.stable[static_cast<std::size_t>(direct.area_ids[k] - 1)] = direct.stable[k];
  }
  fit.divergences = posterior.total_divergences();
  fit.divergence_flag = posterior.divergence_flag();
  fit.warnings = std::move(warnings);
  fit.posterior = posterior;
  summarize_fit(fit);
  return fit;
}

AreaModelData bin_data(const SurveySample& sample, const AreaTable& areas, const BaselineSpec& spec) {
  auto d = base_data(AreaLikelihood::Binomial, areas, spec);
  for (int a : sample.sampled_area_ids()) {
    AreaObservation o;
    o.area = a - 1;
    const auto y = sample.outcomes(a);
    o.trials = static_cast<long>(y.size());
    o.value = 0.0;
    for (int v : y) o.value += v;
    o.log_n = std::log(static_cast<double>(o.trials));
    d.obs.push_back(o);
  }
  return d;
}

AreaFit fit_bin(const SurveySample& sample, const AreaTable& areas, const BaselineSpec& spec,
                const SamplerConfig& sampler) {
  const auto direct = compute_direct_estimates(sample, areas);
  return run_area_model("BIN", bin_data(sample, areas, spec), sampler, direct, 5, {});
}

BetaGvf beta_gvf(const DirectEstimates& direct, const AreaTable& areas, std::vector<std::string>* warnings) {
  const auto M = areas.size();
  BetaGvf g;
  g.psi.assign(M, 0.0);
  g.imputed.assign(M, true);
  std::vector<double> xs, fs;
  for (std::size_t k = 0; k < direct.size(); ++k) {
    const auto i = static_cast<std::size_t>(direct.area_ids[k] - 1);
    const double psi = direct.psi[k];
    if (direct.stable[k] && psi > 0.0 && psi < 0.25) {
      xs.push_back(std::log(static_cast<double>(areas.N[i])));
      fs.push_back(std::log(psi / (0.25 + psi)));
      g.psi[i] = psi;
      g.imputed[i] = false;
    } else if (direct.stable[k] && psi >= 0.25 && warnings != nullptr) {
      warnings->push_back("BETA: area " + std::to_string(i + 1) + " direct variance >= 0.25 replaced by imputation");
    }
  }
  if (xs.empty()) throw std::invalid_argument("beta variance function needs at least one valid sampling variance");
  const double xbar = mean(xs);
  const double fbar = mean(fs);
  double sxx = 0.0, sxf = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxx += (xs[k] - xbar) * (xs[k] - xbar);
    sxf += (xs[k] - xbar) * (fs[k] - fbar);
  }
  g.slope = sxx > 0.0 ? sxf / sxx : 0.0;
  g.intercept = fbar - g.slope * xbar;
  for (std::size_t i = 0; i < M; ++i) {
    if (!g.imputed[i]) continue;
    const double e = std::exp(g.intercept + g.slope * std::log(static_cast<double>(areas.N[i])));
    // psi < 0.25 needs e^f < 1/2.
    g.psi[i] = std::clamp(0.25 * e / (1.0 - std::min(e, 0.5)), 1e-10, 0.25 - 1e-6);
  }
  return g;
}

Interval beta_mean_bounds(double psi) {
  if (!(psi > 0.0 && psi < 0.25)) throw std::invalid_argument("beta variance must lie in (0, 0.25)");
  const double r = std::sqrt(1.0 - 4.0 * psi);
  Interval b{std::max(kBetaFloor, 0.5 * (1.0 - r)) + kBoundShrink, std::min(kBetaCeil, 0.5 * (1.0 + r)) - kBoundShrink};
  if (!(b.lo < b.hi)) throw std::invalid_argument("beta mean bounds are empty");
  return b;
}

std::pair<double, double> beta_shapes(double mu, double psi) {
  const double phi = mu * (1.0 - mu) / psi - 1.0;
  return {mu * phi, (1.0 - mu) * phi};
}

AreaModelData beta_data(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec,
                        std::vector<std::string>* warnings) {
  auto d = base_data(AreaLikelihood::Beta, areas, spec);
  const auto g = beta_gvf(direct, areas, warnings);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto b = beta_mean_bounds(g.psi[i]);
    d.beta_lo.push_back(b.lo);
    d.beta_hi.push_back(b.hi);
  }
  for (std::size_t k = 0; k < direct.size(); ++k) {
    AreaObservation o;
    o.area = direct.area_ids[k] - 1;
    o.value = perturb_unstable(direct.mu[k], spec.perturbation);
    o.variance = g.psi[static_cast<std::size_t>(o.area)];
    o.stable = direct.stable[k];
    o.log_n = std::log(static_cast<double>(direct.n[k]));
    d.obs.push_back(o);
  }
  return d;
}

AreaFit fit_beta(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec,
                 const SamplerConfig& sampler) {
  std::vector<std::string> warnings;
  auto data = beta_data(direct, areas, spec, &warnings);
  // The known-variance beta likelihood has a spurious secondary mode at the upper
  // mean bound for rare outcomes; start chains close to the observed level.
  SamplerConfig cfg = sampler;
  cfg.init_radius = std::min(sampler.init_radius, 0.5);
  return run_area_model("BETA", std::move(data), cfg, direct, 6, std::move(warnings));
}

AreaModelData eln_data(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec) {
  auto d = base_data(AreaLikelihood::Eln, areas, spec);
  for (std::size_t k = 0; k < direct.size(); ++k) {
    AreaObservation o;
    o.area = direct.area_ids[k] - 1;
    o.log_n = std::log(static_cast<double>(direct.n[k]));
    o.stable = direct.stable[k] && direct.gamma[k] > 0.0;
    if (o.stable) {
      o.value = direct.theta[k];
      o.variance = direct.gamma[k];
    } else {
      o.value = logit(perturb_unstable(direct.mu[k], spec.perturbation));
    }
    d.obs.push_back(o);
  }
  return d;
}

AreaFit fit_eln(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec,
                const SamplerConfig& sampler) {
  return run_area_model("ELN", eln_data(direct, areas, spec), sampler, direct, 7, {});
}

}  // namespace tsln
