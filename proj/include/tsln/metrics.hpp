#pragma once

#include <vector>

#include "tsln/diagnostics.hpp"
#include "tsln/stage1.hpp"
#include "tsln/survey.hpp"

namespace tsln {

/// |mean_t (draw - truth) / truth|.
double arb(const std::vector<double>& draws, double truth);
/// sqrt(mean_t (draw - truth)^2) / truth.
double rrmse(const std::vector<double>& draws, double truth);
/// Fraction of intervals containing their truth.
double coverage(const std::vector<Interval>& intervals, const std::vector<double>& truth);

struct FreqMse {
  double bias = 0.0;  // root of the area-averaged squared bias
  double variance = 0.0;
  double mse = 0.0;
};

/// medians[d][i] over replicates d and areas i.  Squared bias of the
/// replicate-mean medians and the 1/(D-1) across-replicate variance, both
/// averaged over areas; mse = bias^2 + variance.
FreqMse freq_mse(const std::vector<std::vector<double>>& medians, const std::vector<double>& truth);

struct Table4Row {
  double pct_unstable = 0.0;
  double alc = 0.0;
  double pct_var_increase = 0.0;
  double pct_mab_reduction = 0.0;
};

/// Stage-1 summaries of one replicate against the direct estimates and the truth.
Table4Row table4_summaries(const DirectEstimates& direct, const S1Summaries& s1, const std::vector<double>& truth);

struct MedianIqr {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};
MedianIqr median_iqr(const std::vector<double>& values);

/// length(model ∩ direct) / length(model).
double overlap_probability(const Interval& model, const Interval& direct);
/// Overlap probabilities averaged with weights 1 / direct_sd.
double weighted_overlap(const std::vector<double>& overlaps, const std::vector<double>& direct_sd);

struct OddsRatioResult {
  std::vector<double> odds_ratio;
  double exceedance = 0.0;
};

/// OR^t = odds(mu^t) / odds(mu_D); EP = share of draws with OR^t > 1.
OddsRatioResult odds_ratio_ep(const std::vector<double>& mu_draws, double mu_direct_overall);

/// EP above 0.8 or below 0.2.
bool ep_significant(double ep);

}  // namespace tsln
