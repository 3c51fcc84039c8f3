#pragma once

#include <vector>

namespace tsln {

/// Split R-hat without rank normalization: every chain is cut in half and the
/// potential scale reduction sqrt(V/W) is computed over the halves.
double split_rhat(const std::vector<std::vector<double>>& chains);

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Shortest window holding ceil(mass * T) sorted draws; ties go to the lowest window.
Interval hdi(std::vector<double> draws, double mass = 0.95);

double median(std::vector<double> values);
double quantile(std::vector<double> values, double p);
double mean(const std::vector<double>& values);
/// Sample variance with the 1/(n-1) convention.
double variance(const std::vector<double>& values);

}  // namespace tsln
