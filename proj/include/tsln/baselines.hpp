#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsln/area_model.hpp"
#include "tsln/census.hpp"
#include "tsln/stage2.hpp"
#include "tsln/survey.hpp"

namespace tsln {

struct BaselineSpec {
  bool use_area_covariate = true;
  std::optional<SpatialSpec> spatial;
  /// Inexact penalty for the area-level models; exact ratio adjustment for LOG.
  std::optional<BenchmarkSpec> benchmark;
  GvfCorrection gvf = GvfCorrection::Corrected;
  double perturbation = 0.001;
};

/// Pseudo-likelihood logistic mixed model on x_census and Z, aggregated over
/// the census: mu_i = (sum of sampled y + predicted p of the unsampled) / N_i.
AreaFit fit_log(const SurveySample& sample, const CensusFrame& census, const BaselineSpec& spec,
                const SamplerConfig& sampler);

/// Per-draw census aggregation for one area given fitted probabilities of its
/// census members and its sampled records.
double log_area_estimate(double sampled_y, double census_p_sum, double sampled_p_sum, long N);

/// Unweighted binomial model on the area counts.
AreaFit fit_bin(const SurveySample& sample, const AreaTable& areas, const BaselineSpec& spec,
                const SamplerConfig& sampler);

struct BetaGvf {
  double intercept = 0.0;
  double slope = 0.0;
  /// psi per area: the direct variance where valid, imputed otherwise.
  std::vector<double> psi;
  std::vector<bool> imputed;
};

/// OLS of log(psi / (0.25 + psi)) on log N_i over sampled areas with valid
/// variances, then psi = 0.25 e^f / (1 - e^f) wherever the direct one is unusable.
BetaGvf beta_gvf(const DirectEstimates& direct, const AreaTable& areas, std::vector<std::string>* warnings = nullptr);

/// Admissible mean interval (0.03, 0.97) intersected with mu (1 - mu) > psi.
Interval beta_mean_bounds(double psi);

/// Shape parameters (mu phi, (1 - mu) phi) with phi = mu (1 - mu) / psi - 1.
std::pair<double, double> beta_shapes(double mu, double psi);

AreaFit fit_beta(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec,
                 const SamplerConfig& sampler);

/// Fay-Herriot on the empirical-logit scale; unstable areas take perturbed
/// estimates and variances from the jointly fitted variance function.
AreaFit fit_eln(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec,
                const SamplerConfig& sampler);

AreaModelData eln_data(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec);
AreaModelData bin_data(const SurveySample& sample, const AreaTable& areas, const BaselineSpec& spec);
AreaModelData beta_data(const DirectEstimates& direct, const AreaTable& areas, const BaselineSpec& spec,
                        std::vector<std::string>* warnings = nullptr);

}  // namespace tsln
