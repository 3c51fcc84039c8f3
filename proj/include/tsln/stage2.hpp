#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsln/area_model.hpp"
#include "tsln/stage1.hpp"

namespace tsln {

struct Stage2Spec {
  /// M x q area covariates without an intercept column; empty means the area table's Z.
  std::optional<Eigen::MatrixXd> Z;
  bool use_area_covariate = true;
  std::optional<SpatialSpec> spatial;
  std::optional<BenchmarkSpec> benchmark;
  GvfCorrection gvf = GvfCorrection::Corrected;
  /// Spatial models need an adjacency; set when the caller asked for one but has none.
  bool spatial_requested = false;
};

/// Builds the measurement / sampling / linking data for all M areas.  Sampled
/// areas without S1 estimates (n_i = 1) are predicted like nonsampled areas.
AreaModelData stage2_data(const S1Summaries& s1, const DirectEstimates& direct, const AreaTable& areas,
                          const Stage2Spec& spec, std::vector<std::string>* warnings = nullptr);

AreaFit fit_stage2(const S1Summaries& s1, const DirectEstimates& direct, const AreaTable& areas,
                   const Stage2Spec& spec, const SamplerConfig& sampler);

struct TslnFit {
  Stage1Fit stage1;
  /// Empty (no draws) when stage 1 failed the convergence gate.
  AreaFit stage2;
  bool converged = false;
};

TslnFit fit_tsln(const SurveySample& sample, const AreaTable& areas, const Stage1Spec& stage1_spec,
                 const SamplerConfig& sampler, const Stage2Spec& stage2_spec,
                 std::optional<int> subset_size = std::nullopt);

struct ExactBenchmark {
  std::vector<std::vector<double>> draws;
  /// Draws pushed above one by the ratio adjustment and clamped.
  long clamped = 0;
};

/// Per draw and region: R = sum(mu N) / (C_hat sum N) and mu / R.  Areas outside
/// every region are unchanged.
ExactBenchmark exact_benchmark(const std::vector<std::vector<double>>& mu_draws, const std::vector<long>& N,
                               const std::vector<std::vector<int>>& regions, const std::vector<double>& C_hat);

/// `{"name": {"areas": [1-based ids], "C_hat": x, "var": v}, ...}` in key order.
BenchmarkSpec read_benchmark_json(const std::filesystem::path& path, int areas, double epsilon);

/// Contiguous blocks of area ids, `count` regions of near-equal size.
std::vector<std::vector<int>> contiguous_regions(int areas, int count);

/// Region-level Hajek estimates and variances from the pooled sample of each region.
BenchmarkSpec direct_benchmark(const SurveySample& sample, const AreaTable& areas,
                               const std::vector<std::vector<int>>& regions, double epsilon);

}  // namespace tsln
