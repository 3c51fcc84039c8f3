#include "tsln/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsln {

namespace {

void check_relative(const std::vector<double>& draws, double truth) {
  if (truth == 0.0) throw std::invalid_argument("relative metric undefined");
  if (draws.empty()) throw std::invalid_argument("no draws");
}

}  // namespace

double arb(const std::vector<double>& draws, double truth) {
  check_relative(draws, truth);
  double s = 0.0;
  for (double d : draws) s += (d - truth) / truth;
  return std::abs(s / static_cast<double>(draws.size()));
}

double rrmse(const std::vector<double>& draws, double truth) {
  check_relative(draws, truth);
  double s = 0.0;
  for (double d : draws) s += (d - truth) * (d - truth);
  return std::sqrt(s / static_cast<double>(draws.size())) / std::abs(truth);
}

double coverage(const std::vector<Interval>& intervals, const std::vector<double>& truth) {
  if (intervals.size() != truth.size()) throw std::invalid_argument("intervals and truths differ in length");
  if (intervals.empty()) throw std::invalid_argument("no intervals");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) hit += intervals[i].contains(truth[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

FreqMse freq_mse(const std::vector<std::vector<double>>& medians, const std::vector<double>& truth) {
  const std::size_t D = medians.size();
  if (D < 2) throw std::invalid_argument("frequentist metrics need at least two replicates");
  const std::size_t M = truth.size();
  for (const auto& r : medians) {
    if (r.size() != M) throw std::invalid_argument("replicate medians do not match the truth");
  }
  double bias2 = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    double m = 0.0;
    for (const auto& r : medians) m += r[i];
    m /= static_cast<double>(D);
    double v = 0.0;
    for (const auto& r : medians) v += (r[i] - m) * (r[i] - m);
    bias2 += (m - truth[i]) * (m - truth[i]);
    var += v / static_cast<double>(D - 1);
  }
  bias2 /= static_cast<double>(M);
  var /= static_cast<double>(M);
  return {std::sqrt(bias2), var, bias2 + var};
}

Table4Row table4_summaries(const DirectEstimates& direct, const S1Summaries& s1, const std::vector<double>& truth) {
  if (direct.size() == 0) throw std::invalid_argument("no sampled areas");
  Table4Row row;
  row.pct_unstable = 100.0 * static_cast<double>(direct.unstable_count()) / static_cast<double>(direct.size());
  row.alc = stage1_alc(s1, direct);
  std::vector<double> increase;
  double mab_s1 = 0.0;
  double mab_d = 0.0;
  for (std::size_t k = 0; k < direct.size(); ++k) {
    const auto* a = s1.find(direct.area_ids[k]);
    if (a == nullptr) continue;
    const double mu = truth.at(static_cast<std::size_t>(direct.area_ids[k] - 1));
    mab_s1 += std::abs(median(a->mu) - mu);
    mab_d += std::abs(direct.mu[k] - mu);
    if (direct.stable[k] && direct.gamma[k] > 0.0) {
      increase.push_back(100.0 * ((a->gamma_bar + a->var_theta) / direct.gamma[k] - 1.0));
    }
  }
  row.pct_var_increase = increase.empty() ? std::nan("") : median(increase);
  row.pct_mab_reduction = mab_d > 0.0 ? 100.0 * (1.0 - mab_s1 / mab_d) : std::nan("");
  return row;
}

MedianIqr median_iqr(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values) {
    if (std::isfinite(x)) v.push_back(x);
  }
  if (v.empty()) return {std::nan(""), std::nan(""), std::nan("")};
  return {median(v), quantile(v, 0.25), quantile(v, 0.75)};
}

double overlap_probability(const Interval& model, const Interval& direct) {
  if (!(model.hi >= model.lo) || !(direct.hi >= direct.lo)) throw std::invalid_argument("interval bounds are reversed");
  const double len = model.width();
  const double inter = std::max(0.0, std::min(model.hi, direct.hi) - std::max(model.lo, direct.lo));
  if (len == 0.0) return direct.contains(model.lo) ? 1.0 : 0.0;
  return inter / len;
}

double weighted_overlap(const std::vector<double>& overlaps, const std::vector<double>& direct_sd) {
  if (overlaps.size() != direct_sd.size() || overlaps.empty()) throw std::invalid_argument("overlap inputs differ in length");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < overlaps.size(); ++i) {
    if (!(direct_sd[i] > 0.0)) throw std::invalid_argument("direct standard deviation must be positive");
    num += overlaps[i] / direct_sd[i];
    den += 1.0 / direct_sd[i];
  }
  return num / den;
}

OddsRatioResult odds_ratio_ep(const std::vector<double>& mu_draws, double mu_direct_overall) {
  if (!(mu_direct_overall > 0.0 && mu_direct_overall < 1.0)) throw std::invalid_argument("reference proportion must lie in (0, 1)");
  if (mu_draws.empty()) throw std::invalid_argument("no draws");
  OddsRatioResult r;
  const double ref = mu_direct_overall / (1.0 - mu_direct_overall);
  std::size_t above = 0;
  for (double m : mu_draws) {
    const double o = (m / (1.0 - m)) / ref;
    r.odds_ratio.push_back(o);
    if (o > 1.0) ++above;
  }
  r.exceedance = static_cast<double>(above) / static_cast<double>(mu_draws.size());
  return r;
}

bool ep_significant(double ep) { return ep > 0.8 || ep < 0.2; }

}  // namespace tsln
