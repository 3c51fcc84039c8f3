#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsln/survey.hpp"

namespace tsln {

enum class PopulationSizeRule {
  UniformRange,  // N_i uniform on the integers N_min..N_max
  TwoPoint,      // N_i uniform on {N_min, N_max}
};

enum class CensusVariant { Main, SuppE };

struct ScenarioConfig {
  std::string name = "custom";
  int M = 100;
  double L = 0.1;
  double U = 0.4;
  long N_min = 500;
  long N_max = 3000;
  PopulationSizeRule size_rule = PopulationSizeRule::UniformRange;
  double alpha_survey = 0.5;
  double alpha_census = 1.0;
  double u = 0.01;
  double sampling_fraction = 0.004;
  int m = 60;
  /// Multiplier on the exponential noise in z = 1(y = 0) + scale * h.
  double informativeness = 0.8;
  std::uint64_t seed = 1;
  CensusVariant variant = CensusVariant::Main;

  void validate() const;
};

/// Sc1..Sc6 and "SuppE" presets at the given number of areas; the number of
/// sampled areas keeps the 60-in-100 ratio.
ScenarioConfig scenario_preset(std::string_view name, int M = 100);

struct CensusPerson {
  int area_id = 0;
  int y = 0;
  int x_survey = 1;
  double x_census = 0.0;
  /// Selection size z_ij; inclusion probabilities are proportional to it.
  double selection_size = 1.0;
};

struct CensusFrame {
  std::vector<CensusPerson> people;  // grouped by area, area 1 first
  std::vector<std::size_t> offset;   // people of area i are [offset[i-1], offset[i])
  std::vector<long> N;
  std::vector<double> true_mu;
  std::vector<double> Z;

  int total_areas() const { return static_cast<int>(N.size()); }
  std::span<const CensusPerson> area(int area_id) const;
  AreaTable area_table() const { return {N, Z}; }
};

CensusFrame generate_census(const ScenarioConfig& config);
/// Same construction as generate_census with true proportions spanning 0.05..0.3.
CensusFrame generate_suppE_census(ScenarioConfig config);

/// round((M/m) * f * N_i) for every area.
std::vector<long> planned_sample_sizes(const CensusFrame& census, const ScenarioConfig& config);

/// Inclusion probabilities of a fixed-size unequal-probability design, capped at 1.
std::vector<double> inclusion_probabilities(std::span<const double> size, long n);

/// Systematic PPS without replacement on a randomly permuted list.  Units whose
/// inclusion probability reaches 1 are taken with certainty.  Returns indices.
std::vector<std::size_t> systematic_pps(std::span<const double> size, long n, std::mt19937_64& rng);

struct SampleDraw {
  SurveySample sample;
  std::vector<std::string> warnings;
};

SampleDraw draw_informative_sample(const CensusFrame& census, const ScenarioConfig& config,
                                   std::uint64_t replicate_seed);

void write_census_csv(const std::filesystem::path& path, const CensusFrame& census);
CensusFrame read_census_csv(const std::filesystem::path& census_path, const AreaTable& areas);

}  // namespace tsln
