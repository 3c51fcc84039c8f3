#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsln/diagnostics.hpp"
#include "tsln/mcmc.hpp"
#include "tsln/spatial.hpp"

namespace tsln {

enum class AreaLikelihood { Tsln, Eln, Binomial, Beta };
enum class RhoPrior { Beta, Uniform };
enum class GvfCorrection { Corrected, Naive };

struct SpatialSpec {
  Adjacency adjacency;
  RhoPrior rho_prior = RhoPrior::Beta;
  std::optional<double> fixed_rho;
};

/// Inexact benchmarking: population-weighted regional means of the modelled
/// proportions are pulled toward C_hat with sd epsilon * sqrt(var).
struct BenchmarkSpec {
  std::vector<std::vector<int>> regions;  // 0-based area indices
  std::vector<double> C_hat;
  std::vector<double> var;
  double epsilon = 1.0;

  void validate(int areas) const;
};

/// Data attached to one area by the sampling layer.
struct AreaObservation {
  int area = 0;  // 0-based
  /// Known sampling variance; otherwise imputed through the variance function.
  bool stable = true;
  /// Eln: empirical logit; Tsln: mean of the theta subset; Beta: direct proportion; Binomial: count.
  double value = 0.0;
  /// Eln: gamma_D; Tsln: gamma_bar; Beta: psi used for phi.
  double variance = 0.0;
  double log_n = 0.0;
  // Tsln measurement model: variance of theta draws, sum of squares of the subset about its mean, subset size.
  double meas_var = 0.0;
  double meas_ss = 0.0;
  int subset = 1;
  long trials = 0;
};

struct AreaModelData {
  AreaLikelihood likelihood = AreaLikelihood::Eln;
  int M = 0;
  /// M x q area covariates; centered over all areas inside the model.
  Eigen::MatrixXd Z;
  std::vector<long> N;
  std::vector<AreaObservation> obs;
  /// Beta only: per-area bounds of the mean.
  std::vector<double> beta_lo;
  std::vector<double> beta_hi;
  double sigma_prior_sd = 2.0;
  GvfCorrection gvf = GvfCorrection::Corrected;
  std::optional<SpatialSpec> spatial;
  std::optional<BenchmarkSpec> benchmark;
};

/// exp(2 (omega0 + omega1 log n) + 2 sigma^2), or without the variance term when naive.
double gvf_impute(double omega0, double omega1, double sigma_gvf, double n,
                  GvfCorrection correction = GvfCorrection::Corrected);

/// Area-level hierarchy shared by the second stage and the area-level baselines:
/// a linking model over all areas (with optional BYM2 effect), one of four
/// sampling layers, an optional joint variance function and optional
/// benchmark penalty.  Constrained output ends with mu[1..M].
class AreaLevelModel : public LogDensityModel {
 public:
  explicit AreaLevelModel(AreaModelData data);

  std::size_t dim() const override { return dim_; }
  std::vector<std::string> names() const override;
  double log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override;
  Eigen::VectorXd constrain(const Eigen::VectorXd& q) const override;
  /// Intercept at the pooled observed level on the linking scale, everything else at zero.
  Eigen::VectorXd init_center() const override;

  const AreaModelData& data() const { return data_; }
  std::size_t mu_offset() const { return mu_offset_; }
  bool uses_gvf() const { return has_gvf_; }
  double kappa() const { return kappa_; }
  /// Linking predictor for all areas.
  Eigen::VectorXd linear_predictor(const Eigen::VectorXd& q) const;
  /// Mean on the probability scale for all areas.
  Eigen::VectorXd mean(const Eigen::VectorXd& eta) const;

 private:
  struct Layout {
    int lambda0 = 0;
    int lambda = 1;
    int scale = 0;
    int effects = 0;  // z (non-spatial) or v (spatial)
    int s = -1;
    int rho = -1;
    int theta_bar = -1;
    int gvf = -1;
  };

  AreaModelData data_;
  Eigen::MatrixXd Zc_;
  Layout at_;
  std::size_t dim_ = 0;
  std::size_t mu_offset_ = 0;
  bool has_gvf_ = false;
  double kappa_ = 1.0;
  std::vector<double> lchoose_;
  std::vector<double> bench_total_;
};

/// Per-area posterior summary shared by every model.
struct AreaFit {
  std::string model;
  std::vector<std::vector<double>> mu_draws;  // per area, chain-major
  int chains = 1;
  std::vector<double> median;
  std::vector<Interval> hdi;
  std::vector<bool> sampled;
  std::vector<bool> stable;
  double max_rhat = 0.0;
  bool converged = false;
  int divergences = 0;
  bool divergence_flag = false;
  std::vector<std::string> warnings;
  PosteriorMatrix posterior;

  int areas() const { return static_cast<int>(mu_draws.size()); }
};

/// Fills medians, 95% HDIs and the convergence gate from mu_draws.
void summarize_fit(AreaFit& fit);

/// Copies mu columns out of a posterior matrix and summarizes.
AreaFit area_fit_from_posterior(std::string model, PosteriorMatrix posterior, std::size_t mu_offset, int M,
                                std::vector<bool> sampled, std::vector<bool> stable);

/// `area_id,median,hdi_lo,hdi_hi,sampled,stable`.
void write_fit_csv(const std::filesystem::path& path, const AreaFit& fit);

}  // namespace tsln
