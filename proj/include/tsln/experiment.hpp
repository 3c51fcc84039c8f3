#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsln/area_model.hpp"
#include "tsln/census.hpp"
#include "tsln/mcmc.hpp"
#include "tsln/metrics.hpp"

namespace tsln {

/// Bad or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed input data (exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string> kModelNames{"TSLN", "LOG", "BIN", "BETA", "ELN"};
inline const std::vector<double> kSuppEGrid{0.01, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5};

struct ExperimentConfig {
  ScenarioConfig scenario = scenario_preset("Sc3", 40);
  int replicates = 50;
  std::vector<std::string> models = kModelNames;
  SamplerConfig engine;
  bool spatial = false;
  /// "line" for a path graph over area ids, otherwise an edge-list CSV.
  std::string adjacency = "line";
  RhoPrior rho_prior = RhoPrior::Beta;
  bool benchmark = false;
  double epsilon = 1.0;
  int benchmark_regions = 4;
  GvfCorrection gvf = GvfCorrection::Corrected;
  std::vector<double> suppe_sigma = kSuppEGrid;
  std::vector<bool> suppe_area_effect{true, false};
  std::filesystem::path output = "tsln_out";
  /// 0 means TSLN_WORKERS or the hardware concurrency.
  int workers = 0;

  void validate() const;
};

/// Desk-scale defaults overridden by the JSON fields present.  "full_scale": true
/// switches to M = 100, D = 500 and 4 x (1000 + 500) iterations before overrides.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);
/// Stable hex digest of the canonical config JSON.
std::string config_hash(const ExperimentConfig& config);

/// TSLN_WORKERS when set, otherwise the hardware concurrency (at least 1).
int worker_count(int requested);

enum class FitStatus { Converged, Discarded, Failed };
std::string to_string(FitStatus s);

/// Area-level summaries of one fit in one replicate; draws are not kept.
struct ModelOutcome {
  std::string model;
  FitStatus status = FitStatus::Failed;
  std::string message;
  double max_rhat = 0.0;
  std::vector<double> median;
  std::vector<Interval> hdi;
  std::vector<double> arb;
  std::vector<double> rrmse;
  std::vector<bool> covers;  // HDI contains the truth
  std::vector<bool> sampled;
  std::vector<bool> stable;
};

struct ReplicateResult {
  int replicate = 0;
  std::vector<ModelOutcome> models;
  std::optional<Table4Row> table4;
  double sr = 0.0;
  std::vector<std::string> warnings;
};

CensusFrame build_census(const ScenarioConfig& scenario);
Adjacency simulation_adjacency(const ExperimentConfig& config);

ModelOutcome summarize_outcome(const std::string& model, const AreaFit& fit, const std::vector<double>& truth,
                               bool converged);

/// One survey draw and every requested model.  Failures are recorded, not thrown.
ReplicateResult run_replicate(const ExperimentConfig& config, const CensusFrame& census, int replicate);

struct MetricRow {
  std::string scenario;
  std::string model;
  std::string group;  // sampled | nonsampled | all
  std::string metric;
  int replicate = 0;
  double value = 0.0;
};

std::vector<MetricRow> metric_rows(const std::string& scenario, const ReplicateResult& r);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

struct SummaryRow {
  std::string model;
  std::string group;
  int replicates = 0;
  double mrrmse = 0.0;
  double marb = 0.0;
  double ci_width = 0.0;
  double coverage = 0.0;
  double mrrmse_ratio = 0.0;  // to TSLN
  double marb_ratio = 0.0;
  double width_ratio = 0.0;
};

/// Medians over replicates of MRRMSE, MARB and HDI width; coverage pooled over
/// (area, replicate) pairs; ratio columns relative to the TSLN row of the same group.
std::vector<SummaryRow> table5(const std::vector<MetricRow>& rows);

struct Table4Summary {
  std::string metric;
  MedianIqr value;
  int replicates = 0;
};
std::vector<Table4Summary> table4(const std::vector<MetricRow>& rows);

struct RunSummary {
  int converged = 0;
  int discarded = 0;
  int failed = 0;
  double seconds = 0.0;
};

/// Runs D replicates on a bounded worker pool and writes metrics.csv,
/// area_estimates.csv, the report files and manifest.json into config.output.
RunSummary cmd_replicate(const ExperimentConfig& config);

/// Writes census.csv, areas.csv, truth.csv and sample.csv for one replicate.
void cmd_simulate(const ExperimentConfig& config, int replicate);

struct SuppECell {
  int replicate = 0;
  double sigma_e = 0.0;
  bool area_effect = false;
  FitStatus status = FitStatus::Failed;
  double sr = 0.0;
  double alc = 0.0;
  double marb = 0.0;
  double mrrmse = 0.0;
  double coverage = 0.0;
  double hdi_width = 0.0;
};

/// sigma_e grid x area-effect switch per replicate, constant stage-2 model on Z.
std::vector<SuppECell> run_suppe_replicate(const ExperimentConfig& config, const CensusFrame& census, int replicate);
void write_suppe_csv(const std::filesystem::path& path, const std::vector<SuppECell>& cells);
RunSummary cmd_suppe_grid(const ExperimentConfig& config);

/// Regenerates table4.csv, table5.csv, freq_mse.csv, summary.json and the SVG
/// boxplots from the files cmd_replicate wrote.
void cmd_report(const std::filesystem::path& dir);

/// Box-and-whisker chart of per-replicate values, one box per label.
std::string boxplot_svg(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& values);

}  // namespace tsln
