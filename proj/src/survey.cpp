#include "tsln/survey.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "tsln/csv.hpp"

namespace tsln {

SurveySample::SurveySample(std::vector<SurveyRecord> records, int total_areas)
    : records_(std::move(records)), total_areas_(total_areas) {
  if (total_areas_ < 1) throw std::invalid_argument("total number of areas must be positive");
  by_area_.resize(static_cast<std::size_t>(total_areas_));
  for (std::size_t r = 0; r < records_.size(); ++r) {
    const auto& rec = records_[r];
    if (rec.area_id < 1 || rec.area_id > total_areas_) {
      throw std::invalid_argument("area id " + std::to_string(rec.area_id) + " outside 1.." +
                                  std::to_string(total_areas_));
    }
    if (!(rec.w_raw > 0.0) || !std::isfinite(rec.w_raw)) {
      throw std::invalid_argument("sampling weights must be positive and finite");
    }
    if (rec.y != 0 && rec.y != 1) throw std::invalid_argument("outcome must be binary");
    by_area_[static_cast<std::size_t>(rec.area_id - 1)].push_back(r);
  }
  for (int a = 1; a <= total_areas_; ++a) {
    if (!by_area_[static_cast<std::size_t>(a - 1)].empty()) sampled_ids_.push_back(a);
  }
}

bool SurveySample::is_sampled(int area_id) const {
  return area_id >= 1 && area_id <= total_areas_ &&
         !by_area_[static_cast<std::size_t>(area_id - 1)].empty();
}

int SurveySample::sampled_position(int area_id) const {
  auto it = std::lower_bound(sampled_ids_.begin(), sampled_ids_.end(), area_id);
  if (it == sampled_ids_.end() || *it != area_id) return -1;
  return static_cast<int>(it - sampled_ids_.begin());
}

const std::vector<std::size_t>& SurveySample::area_records(int area_id) const {
  if (area_id < 1 || area_id > total_areas_) throw std::out_of_range("area id out of range");
  return by_area_[static_cast<std::size_t>(area_id - 1)];
}

std::vector<int> SurveySample::outcomes(int area_id) const {
  std::vector<int> y;
  for (auto r : area_records(area_id)) y.push_back(records_[r].y);
  return y;
}

std::vector<double> area_normalized_weights(const SurveySample& sample) {
  std::vector<double> w(sample.size());
  for (int a : sample.sampled_area_ids()) {
    const auto& idx = sample.area_records(a);
    double total = 0.0;
    for (auto r : idx) total += sample.records()[r].w_raw;
    const double scale = static_cast<double>(idx.size()) / total;
    for (auto r : idx) w[r] = sample.records()[r].w_raw * scale;
  }
  return w;
}

std::vector<double> sample_scaled_weights(const SurveySample& sample) {
  double total = 0.0;
  for (const auto& rec : sample.records()) total += rec.w_raw;
  const double scale = static_cast<double>(sample.size()) / total;
  std::vector<double> w;
  w.reserve(sample.size());
  for (const auto& rec : sample.records()) w.push_back(rec.w_raw * scale);
  return w;
}

double hajek_estimate(std::span<const int> y, std::span<const double> w_area) {
  if (y.empty()) throw std::invalid_argument("no records for area");
  if (y.size() != w_area.size()) throw std::invalid_argument("outcome/weight length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) s += w_area[j] * y[j];
  return s / static_cast<double>(y.size());
}

double weighted_residual_variance(std::span<const double> residuals,
                                  std::span<const double> w_area,
                                  std::optional<long> population) {
  const std::size_t n = residuals.size();
  if (n != w_area.size()) throw std::invalid_argument("residual/weight length mismatch");
  if (n < 2) throw std::invalid_argument("variance undefined for singleton sample");
  double fpc = 1.0;
  if (population) {
    if (static_cast<long>(n) > *population) {
      throw std::invalid_argument("area sample size exceeds population size");
    }
    fpc = 1.0 - static_cast<double>(n) / static_cast<double>(*population);
  }
  double ss = 0.0;
  for (std::size_t j = 0; j < n; ++j) ss += w_area[j] * w_area[j] * residuals[j] * residuals[j];
  const double nd = static_cast<double>(n);
  return fpc * ss / (nd * (nd - 1.0));
}

double hajek_variance(std::span<const int> y, std::span<const double> w_area, double mu_direct,
                      std::optional<long> population) {
  std::vector<double> resid(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) resid[j] = y[j] - mu_direct;
  return weighted_residual_variance(resid, w_area, population);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

LogitEstimate empirical_logit(double mu, double psi) {
  if (!(mu > 0.0 && mu < 1.0)) throw std::domain_error("unstable estimate; transform undefined");
  if (psi < 0.0) throw std::invalid_argument("sampling variance must be non-negative");
  const double v = mu * (1.0 - mu);
  return {logit(mu), psi / (v * v)};
}

double perturb_unstable(double mu, double delta) {
  if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("perturbation must lie in (0, 0.5)");
  if (mu == 0.0) return delta;
  if (mu == 1.0) return 1.0 - delta;
  return mu;
}

std::vector<double> aggregate_to_region(std::span<const double> mu, std::span<const long> population,
                                        const std::vector<std::vector<int>>& regions) {
  std::vector<double> out;
  out.reserve(regions.size());
  for (const auto& region : regions) {
    if (region.empty()) throw std::invalid_argument("empty region");
    double num = 0.0;
    double den = 0.0;
    for (int i : region) {
      const auto k = static_cast<std::size_t>(i);
      num += mu[k] * static_cast<double>(population[k]);
      den += static_cast<double>(population[k]);
    }
    out.push_back(num / den);
  }
  return out;
}

std::size_t DirectEstimates::unstable_count() const {
  return static_cast<std::size_t>(std::count(stable.begin(), stable.end(), false));
}

DirectEstimates compute_direct_estimates(const SurveySample& sample, const AreaTable& areas) {
  const auto w = area_normalized_weights(sample);
  DirectEstimates d;
  for (int a : sample.sampled_area_ids()) {
    const auto& idx = sample.area_records(a);
    std::vector<int> y;
    std::vector<double> wa;
    for (auto r : idx) {
      y.push_back(sample.records()[r].y);
      wa.push_back(w[r]);
    }
    const double mu = hajek_estimate(y, wa);
    std::optional<long> pop;
    if (areas.size() >= static_cast<std::size_t>(a)) pop = areas.population(a);
    const double psi = idx.size() > 1 ? hajek_variance(y, wa, mu, pop) : 0.0;
    const bool stable = mu > 0.0 && mu < 1.0;
    d.area_ids.push_back(a);
    d.n.push_back(idx.size());
    d.mu.push_back(mu);
    d.psi.push_back(psi);
    d.stable.push_back(stable);
    if (stable) {
      const auto t = empirical_logit(mu, psi);
      d.theta.push_back(t.theta);
      d.gamma.push_back(t.gamma);
    } else {
      d.theta.push_back(std::nan(""));
      d.gamma.push_back(std::nan(""));
    }
  }
  return d;
}

double overall_prevalence(const SurveySample& sample) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& rec : sample.records()) {
    num += rec.w_raw * rec.y;
    den += rec.w_raw;
  }
  if (den <= 0.0) throw std::invalid_argument("empty sample");
  return num / den;
}

SurveySample read_sample_csv(const std::filesystem::path& path, int total_areas) {
  const auto table = csv::read(path);
  csv::require_header(table, {"area_id", "y", "x_survey", "x_census", "w_raw"}, path);
  std::vector<SurveyRecord> records;
  records.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    records.push_back({static_cast<int>(csv::to_long(row[0])), static_cast<int>(csv::to_long(row[1])),
                       static_cast<int>(csv::to_long(row[2])), csv::to_double(row[3]),
                       csv::to_double(row[4])});
  }
  return SurveySample(std::move(records), total_areas);
}

void write_sample_csv(const std::filesystem::path& path, const SurveySample& sample) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "area_id,y,x_survey,x_census,w_raw\n";
  for (const auto& r : sample.records()) {
    out << r.area_id << ',' << r.y << ',' << r.x_survey << ',' << csv::exact(r.x_census) << ','
        << csv::exact(r.w_raw) << '\n';
  }
}

AreaTable read_area_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  csv::require_header(table, {"area_id", "N", "Z"}, path);
  AreaTable areas;
  areas.N.resize(table.rows.size());
  areas.Z.resize(table.rows.size());
  std::vector<bool> seen(table.rows.size(), false);
  for (const auto& row : table.rows) {
    const long id = csv::to_long(row[0]);
    if (id < 1 || id > static_cast<long>(table.rows.size()) || seen[static_cast<std::size_t>(id - 1)]) {
      throw std::runtime_error(path.string() + ": area ids must be a permutation of 1..M");
    }
    const auto k = static_cast<std::size_t>(id - 1);
    seen[k] = true;
    areas.N[k] = csv::to_long(row[1]);
    areas.Z[k] = csv::to_double(row[2]);
    if (areas.N[k] < 1) throw std::runtime_error(path.string() + ": population sizes must be positive");
  }
  return areas;
}

void write_area_csv(const std::filesystem::path& path, const AreaTable& areas) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "area_id,N,Z\n";
  for (std::size_t i = 0; i < areas.size(); ++i) {
    out << i + 1 << ',' << areas.N[i] << ',' << csv::exact(areas.Z[i]) << '\n';
  }
}

}  // namespace tsln
