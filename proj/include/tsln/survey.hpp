#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tsln {

/// One sampled unit as delivered by the data custodian.
struct SurveyRecord {
  int area_id = 0;
  int y = 0;
  int x_survey = 1;
  double x_census = 0.0;
  double w_raw = 1.0;
};

/// Per-area population metadata, indexed by area_id - 1.
struct AreaTable {
  std::vector<long> N;
  std::vector<double> Z;

  std::size_t size() const { return N.size(); }
  long population(int area_id) const { return N.at(static_cast<std::size_t>(area_id - 1)); }
};

/// Sampled records grouped by area. Areas are identified by 1-based ids in 1..M.
class SurveySample {
 public:
  SurveySample() = default;
  SurveySample(std::vector<SurveyRecord> records, int total_areas);

  const std::vector<SurveyRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  int total_areas() const { return total_areas_; }
  int sampled_area_count() const { return static_cast<int>(sampled_ids_.size()); }

  /// Sorted ids of areas with at least one record.
  const std::vector<int>& sampled_area_ids() const { return sampled_ids_; }
  bool is_sampled(int area_id) const;
  /// Position of area_id within sampled_area_ids(), or -1.
  int sampled_position(int area_id) const;
  const std::vector<std::size_t>& area_records(int area_id) const;
  std::size_t area_size(int area_id) const { return area_records(area_id).size(); }

  std::vector<int> outcomes(int area_id) const;

 private:
  std::vector<SurveyRecord> records_;
  int total_areas_ = 0;
  std::vector<int> sampled_ids_;
  std::vector<std::vector<std::size_t>> by_area_;  // indexed by area_id - 1
};

/// w_raw * n_i / sum_{j in area} w_raw, one entry per record.
std::vector<double> area_normalized_weights(const SurveySample& sample);
/// w_raw * n / sum_all w_raw, one entry per record.
std::vector<double> sample_scaled_weights(const SurveySample& sample);

double hajek_estimate(std::span<const int> y, std::span<const double> w_area);

/// (1/n)(1 - n/N)(1/(n-1)) sum w^2 r^2 for arbitrary residuals r.
/// An unknown population size drops the finite-population factor.
double weighted_residual_variance(std::span<const double> residuals,
                                  std::span<const double> w_area,
                                  std::optional<long> population);

double hajek_variance(std::span<const int> y, std::span<const double> w_area, double mu_direct,
                      std::optional<long> population);

struct LogitEstimate {
  double theta = 0.0;
  double gamma = 0.0;
};

/// Empirical logistic transform of a proportion and its sampling variance.
LogitEstimate empirical_logit(double mu, double psi);

double logit(double p);
double inv_logit(double x);

double perturb_unstable(double mu, double delta = 0.001);

/// Population-weighted proportion per region. Regions hold 0-based area indices.
std::vector<double> aggregate_to_region(std::span<const double> mu, std::span<const long> population,
                                        const std::vector<std::vector<int>>& regions);

struct DirectEstimates {
  std::vector<int> area_ids;
  std::vector<std::size_t> n;
  std::vector<double> mu;
  std::vector<double> psi;
  std::vector<bool> stable;
  /// Only meaningful where stable; NaN elsewhere.
  std::vector<double> theta;
  std::vector<double> gamma;

  std::size_t size() const { return area_ids.size(); }
  std::size_t unstable_count() const;
};

/// Hajek estimate, variance and logit transforms for every sampled area.
/// Singleton areas get psi = 0; their estimate is 0 or 1 and so always unstable.
DirectEstimates compute_direct_estimates(const SurveySample& sample, const AreaTable& areas);

/// Weighted overall prevalence sum(w_raw y) / sum(w_raw).
double overall_prevalence(const SurveySample& sample);

// CSV formats: `area_id,y,x_survey,x_census,w_raw` and `area_id,N,Z`.
SurveySample read_sample_csv(const std::filesystem::path& path, int total_areas);
void write_sample_csv(const std::filesystem::path& path, const SurveySample& sample);
AreaTable read_area_csv(const std::filesystem::path& path);
void write_area_csv(const std::filesystem::path& path, const AreaTable& areas);

}  // namespace tsln
