#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsln/mcmc.hpp"
#include "tsln/survey.hpp"

namespace tsln {

struct Stage1Spec {
  bool survey_covariate = true;  // tercile indicators for groups 2 and 3
  bool census_covariate = true;
  bool area_covariate = true;    // Z of the record's area
  bool include_area_effect = true;
  /// When set, sigma_e is fixed and an individual-level error with this scale
  /// is added to every linear predictor; the area effect then gets its own
  /// half-normal scale.
  std::optional<double> fixed_sigma_e;

  /// Intercept, area effect and fixed individual error only.
  static Stage1Spec smoothing_variant(double sigma_e, bool area_effect);
  /// x_census and Z only.
  static Stage1Spec census_only();
};

/// Mean-centered fixed-effect design built from sampled records.
class Stage1Design {
 public:
  Stage1Design(const SurveySample& sample, const AreaTable& areas, const Stage1Spec& spec);

  int columns() const { return static_cast<int>(center_.size()); }
  const std::vector<std::string>& column_names() const { return names_; }
  const Eigen::MatrixXd& matrix() const { return X_; }
  /// Centered covariate row for an arbitrary unit, used for census prediction.
  Eigen::RowVectorXd row(int x_survey, double x_census, double Z) const;

 private:
  Eigen::RowVectorXd raw_row(int x_survey, double x_census, double Z) const;

  Stage1Spec spec_;
  std::vector<std::string> names_;
  Eigen::RowVectorXd center_;
  Eigen::MatrixXd X_;
};

/// Survey-weighted Bernoulli pseudo-likelihood logistic mixed model.
///
/// Unconstrained layout: intercept, coefficients, then (when an area effect is
/// present) log scale and one standardized effect per sampled area, then one
/// standardized individual error per record for the fixed-scale variant.
class Stage1Model : public LogDensityModel {
 public:
  Stage1Model(const SurveySample& sample, const AreaTable& areas, Stage1Spec spec);

  std::size_t dim() const override { return dim_; }
  std::vector<std::string> names() const override;
  double log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override;
  Eigen::VectorXd constrain(const Eigen::VectorXd& q) const override;

  const Stage1Design& design() const { return design_; }
  const Stage1Spec& spec() const { return spec_; }
  const std::vector<int>& area_ids() const { return area_ids_; }

  /// Linear predictors of every sampled record from a constrained draw.
  Eigen::VectorXd linear_predictor(Eigen::Ref<const Eigen::VectorXd> draw) const;

  // Offsets into the constrained vector.
  int coef_offset() const { return 1; }
  int scale_offset() const { return 1 + design_.columns(); }
  int effect_offset() const { return scale_offset() + 1; }
  int error_offset() const;
  bool has_area_effect() const { return spec_.include_area_effect; }

 private:
  Stage1Spec spec_;
  Stage1Design design_;
  std::vector<int> area_ids_;
  std::vector<int> record_area_;  // sampled position of each record
  Eigen::VectorXd y_;
  Eigen::VectorXd w_;  // sample-scaled weights
  std::size_t dim_ = 0;
};

struct S1Area {
  int area_id = 0;
  std::size_t n = 0;
  double mu_direct = 0.0;
  double psi_direct = 0.0;
  std::vector<double> mu;
  std::vector<double> psi;
  std::vector<double> theta;
  std::vector<double> gamma;
  std::vector<double> bias;
  double gamma_bar = 0.0;
  double var_theta = 0.0;
  std::vector<double> theta_subset;
};

struct S1Summaries {
  std::vector<S1Area> areas;  // sampled areas with n_i >= 2, ascending id
  std::vector<std::string> warnings;
  int chains = 1;

  const S1Area* find(int area_id) const;
};

/// S1 estimates from probability draws (rows = draws, columns = sampled records).
/// The subset keeps T/2 draws unless subset_size is given.
S1Summaries build_s1_estimates(const Eigen::MatrixXd& p_draws, const SurveySample& sample, const AreaTable& areas,
                               std::uint64_t subset_seed, std::optional<int> subset_size = std::nullopt);

/// Weighted least-squares slope of y on x with weights 1/psi.
double alc(const std::vector<double>& theta_s1_median, const std::vector<double>& theta_direct,
           const std::vector<double>& psi_direct);

/// Smoothing ratio per draw.
std::vector<double> smoothing_ratio(const Eigen::MatrixXd& p_draws, const SurveySample& sample,
                                    const std::vector<double>& w_area, double overall);

struct Stage1Fit {
  PosteriorMatrix posterior;
  Eigen::MatrixXd p_draws;
  S1Summaries summaries;
  double max_rhat = 0.0;
  bool converged = false;
  /// ALC over stable sampled areas, NaN when fewer than three.
  double alc = 0.0;
  double sr_median = 0.0;
};

Stage1Fit fit_stage1(const SurveySample& sample, const AreaTable& areas, const Stage1Spec& spec,
                     const SamplerConfig& sampler, std::optional<int> subset_size = std::nullopt);

/// ALC of a stage-1 fit against direct estimates; NaN when fewer than three stable areas.
double stage1_alc(const S1Summaries& s1, const DirectEstimates& direct);

// One row per (area, draw) and one row per area.
void write_s1_draws_csv(const std::filesystem::path& path, const S1Summaries& s1);
void write_s1_summary_csv(const std::filesystem::path& path, const S1Summaries& s1);

}  // namespace tsln
