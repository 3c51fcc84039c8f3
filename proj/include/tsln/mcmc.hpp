#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tsln {

/// A differentiable log density on an unconstrained space.
///
/// Implementations fold the log-Jacobian of every constraining transform into
/// log_density and report draws on the constrained scale through constrain().
/// Both must be safe to call concurrently.
class LogDensityModel {
 public:
  virtual ~LogDensityModel() = default;

  virtual std::size_t dim() const = 0;
  /// Labels of the values returned by constrain().
  virtual std::vector<std::string> names() const = 0;
  /// Log density at q; writes the gradient into grad (resized by the caller).
  virtual double log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const = 0;
  virtual Eigen::VectorXd constrain(const Eigen::VectorXd& q) const = 0;
  /// Chains start uniformly within init_radius of this point.
  virtual Eigen::VectorXd init_center() const { return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim())); }
};

struct SamplerConfig {
  int chains = 4;
  int warmup = 500;
  int draws = 500;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  /// Integration time of a trajectory; each iteration jitters it uniformly in [0.5, 1.5] times this.
  double path_length = 2.0;
  int max_leapfrog = 512;
  double init_radius = 2.0;
  bool adapt_metric = true;
  bool parallel_chains = false;
};

struct ChainDiagnostics {
  double step_size = 0.0;
  double accept_rate = 0.0;
  int divergences = 0;
  long leapfrog_steps = 0;
  Eigen::VectorXd inv_metric;
};

/// Post-warmup draws stored as chains x draws x parameters on the constrained scale.
class PosteriorMatrix {
 public:
  PosteriorMatrix() = default;
  PosteriorMatrix(std::vector<std::string> names, int chains, int draws);

  int chains() const { return chains_; }
  int draws() const { return draws_; }
  std::size_t parameters() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t index(const std::string& name) const;

  double& at(int chain, int draw, std::size_t param);
  double at(int chain, int draw, std::size_t param) const;
  /// Row of all parameters for one draw.
  Eigen::Map<const Eigen::VectorXd> row(int chain, int draw) const;
  void set_row(int chain, int draw, const Eigen::VectorXd& values);

  /// Per-chain draw sequences of one parameter.
  std::vector<std::vector<double>> chains_of(std::size_t param) const;
  /// All draws of one parameter, chain-major.
  std::vector<double> pooled(std::size_t param) const;

  std::vector<ChainDiagnostics> chain_diagnostics;

  int total_divergences() const;
  /// True when divergences exceed 1% of post-warmup iterations.
  bool divergence_flag() const;
  double max_rhat(const std::vector<std::size_t>& params) const;

  void write_csv(const std::filesystem::path& path) const;
  void write_diagnostics_json(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> names_;
  int chains_ = 0;
  int draws_ = 0;
  std::vector<double> values_;
};

/// Runs `chains` independent HMC chains with dual-averaging step size and
/// windowed diagonal metric adaptation during warmup.  Deterministic for a fixed
/// config, regardless of parallel_chains.
PosteriorMatrix sample(const LogDensityModel& model, const SamplerConfig& config);

/// Max over coordinates of |fd - g| / max(1, |g|) using five-point central differences.
double gradient_check(const LogDensityModel& model, const Eigen::VectorXd& point, double eps = 1e-4);

/// Runs gradient_check at `points` uniform(-2, 2) points and throws
/// std::logic_error if any error exceeds tol.
void require_gradients(const LogDensityModel& model, std::uint64_t seed, int points = 10, double tol = 1e-4);

/// Convergence threshold on split R-hat used to discard fits.
inline constexpr double kRhatThreshold = 1.02;

}  // namespace tsln
