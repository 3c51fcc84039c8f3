#include "tsln/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace tsln {

double mean(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean of empty sequence");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double variance(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("variance needs at least two values");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return ss / static_cast<double>(values.size() - 1);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sequence");
  std::sort(values.begin(), values.end());
  // Linear interpolation between order statistics (type 7).
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("split R-hat needs at least two chains");
  std::size_t T = chains.front().size();
  for (const auto& c : chains) T = std::min(T, c.size());
  if (T < 4) throw std::invalid_argument("split R-hat needs at least four draws per chain");
  const std::size_t n = T / 2;
  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    for (std::size_t half = 0; half < 2; ++half) {
      const std::size_t start = half == 0 ? 0 : T - n;
      double m = 0.0;
      for (std::size_t t = 0; t < n; ++t) m += c[start + t];
      m /= static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t t = 0; t < n; ++t) ss += (c[start + t] - m) * (c[start + t] - m);
      means.push_back(m);
      vars.push_back(ss / static_cast<double>(n - 1));
    }
  }
  const double nd = static_cast<double>(n);
  const double W = mean(vars);
  if (!(W > 0.0)) throw std::domain_error("degenerate chains");
  const double B = nd * variance(means);
  const double V = (nd - 1.0) / nd * W + B / nd;
  return std::sqrt(V / W);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) throw std::invalid_argument("no chains");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw std::invalid_argument("effective sample size needs at least four draws per chain");
  const std::size_t m = chains.size();
  const double nd = static_cast<double>(n);

  std::vector<double> chain_mean(m);
  std::vector<double> chain_var(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += chains[j][t];
    chain_mean[j] = s / nd;
    double ss = 0.0;
    for (std::size_t t = 0; t < n; ++t) ss += (chains[j][t] - chain_mean[j]) * (chains[j][t] - chain_mean[j]);
    chain_var[j] = ss / (nd - 1.0);
  }
  const double W = std::accumulate(chain_var.begin(), chain_var.end(), 0.0) / static_cast<double>(m);
  const double B = m > 1 ? nd * variance(chain_mean) : 0.0;
  const double var_plus = (nd - 1.0) / nd * W + B / nd;
  if (!(var_plus > 0.0)) return std::nan("");

  auto rho = [&](std::size_t lag) {
    if (lag == 0) return 1.0;
    double acov = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t + lag < n; ++t) {
        s += (chains[j][t] - chain_mean[j]) * (chains[j][t + lag] - chain_mean[j]);
      }
      acov += s / nd;
    }
    acov /= static_cast<double>(m);
    return 1.0 - (W - acov) / var_plus;
  };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m) * nd));
  return static_cast<double>(m) * nd / tau;
}

Interval hdi(std::vector<double> draws, double mass) {
  if (!(mass > 0.0 && mass < 1.0)) throw std::invalid_argument("HDI mass must lie in (0, 1)");
  if (draws.size() < 20) throw std::invalid_argument("HDI needs at least 20 draws");
  std::sort(draws.begin(), draws.end());
  const std::size_t T = draws.size();
  auto k = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(T) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, T);
  std::size_t best = 0;
  double best_width = draws[k - 1] - draws[0];
  for (std::size_t i = 1; i + k <= T; ++i) {
    const double w = draws[i + k - 1] - draws[i];
    if (w < best_width) {
      best_width = w;
      best = i;
    }
  }
  return {draws[best], draws[best + k - 1]};
}

}  // namespace tsln
