#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsln/census.hpp"
#include "tsln/diagnostics.hpp"
#include "tsln/rng.hpp"

using namespace tsln;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ScenarioConfig small_config() {
  auto c = scenario_preset("Sc3", 20);
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("true proportions are equally spaced") {
  auto c = scenario_preset("Sc3", 100);
  CHECK(c.m == 60);
  auto census = generate_census(c);
  REQUIRE(census.total_areas() == 100);
  // Realized proportions scatter binomially around the U grid.
  double lo = 0.0;
  double hi = 0.0;
  for (int i = 0; i < 5; ++i) lo += census.true_mu[static_cast<std::size_t>(i)] / 5.0;
  for (int i = 95; i < 100; ++i) hi += census.true_mu[static_cast<std::size_t>(i)] / 5.0;
  CHECK(lo == doctest::Approx(0.1).epsilon(0.15));
  CHECK(hi == doctest::Approx(0.4).epsilon(0.1));
}

TEST_CASE("census invariants") {
  auto c = small_config();
  auto census = generate_census(c);
  double sx = 0.0;
  double sxx = 0.0;
  for (int a = 1; a <= census.total_areas(); ++a) {
    const auto people = census.area(a);
    REQUIRE(static_cast<long>(people.size()) == census.N[static_cast<std::size_t>(a - 1)]);
    CHECK(census.N[static_cast<std::size_t>(a - 1)] >= 500);
    CHECK(census.N[static_cast<std::size_t>(a - 1)] <= 3000);
    double ys = 0.0;
    for (const auto& p : people) {
      ys += p.y;
      sx += p.x_census;
      sxx += p.x_census * p.x_census;
      CHECK(p.x_survey >= 1);
      CHECK(p.x_survey <= 3);
      CHECK(p.selection_size > 0.0);
    }
    CHECK(census.true_mu[static_cast<std::size_t>(a - 1)] == ys / static_cast<double>(people.size()));
  }
  const double n = static_cast<double>(census.people.size());
  CHECK(std::abs(sx / n) < 1e-10);
  CHECK((sxx - sx * sx / n) / (n - 1.0) == doctest::Approx(1.0).epsilon(1e-10));
  double zs = 0.0;
  for (double z : census.Z) zs += z;
  CHECK(std::abs(zs) < 1e-10);
}

TEST_CASE("census covariate tracks outcome as noise vanishes") {
  auto c = small_config();
  c.alpha_census = 1e-6;
  auto census = generate_census(c);
  // After standardization x is an affine map of y, so correlation is 1.
  double sy = 0, sx = 0, sxy = 0, syy = 0, sxx = 0;
  for (const auto& p : census.people) {
    sy += p.y;
    sx += p.x_census;
    sxy += p.x_census * p.y;
    syy += p.y * p.y;
    sxx += p.x_census * p.x_census;
  }
  const double n = static_cast<double>(census.people.size());
  const double r = (sxy - sx * sy / n) / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  CHECK(r > 0.9999);
}

TEST_CASE("census determinism") {
  auto c = small_config();
  auto dir = std::filesystem::temp_directory_path() / "tsln_census_det";
  std::filesystem::create_directories(dir);
  write_census_csv(dir / "a.csv", generate_census(c));
  write_census_csv(dir / "b.csv", generate_census(c));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  c.seed = 12;
  write_census_csv(dir / "c.csv", generate_census(c));
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
}

TEST_CASE("supplementary census range") {
  auto c = scenario_preset("SuppE", 100);
  CHECK(c.L == 0.05);
  CHECK(c.U == 0.3);
  auto census = generate_suppE_census(c);
  CHECK(census.total_areas() == 100);
  double lo = 0.0;
  for (int i = 0; i < 5; ++i) lo += census.true_mu[static_cast<std::size_t>(i)] / 5.0;
  CHECK(lo < 0.08);
}

TEST_CASE("planned sample sizes") {
  ScenarioConfig c;
  c.M = 100;
  c.m = 60;
  c.sampling_fraction = 0.004;
  CensusFrame f;
  f.N = {3000, 500};
  auto n = planned_sample_sizes(f, c);
  CHECK(n[0] == 20);
  CHECK(n[1] == 3);
}

TEST_CASE("invalid scenario configs") {
  ScenarioConfig c;
  c.L = 0.5;
  c.U = 0.4;
  CHECK_THROWS(c.validate());
  c = ScenarioConfig{};
  c.m = 101;
  CHECK_THROWS(c.validate());
  CHECK_THROWS(scenario_preset("Sc9"));
}

TEST_CASE("sample weights sum to population per area") {
  auto c = small_config();
  auto census = generate_census(c);
  for (std::uint64_t r = 0; r < 5; ++r) {
    auto draw = draw_informative_sample(census, c, r);
    const auto& s = draw.sample;
    CHECK(s.sampled_area_count() == c.m);
    for (int a : s.sampled_area_ids()) {
      double total = 0.0;
      for (auto j : s.area_records(a)) total += s.records()[j].w_raw;
      CHECK(std::abs(total - static_cast<double>(census.N[static_cast<std::size_t>(a - 1)])) < 1e-9);
    }
  }
}

TEST_CASE("systematic PPS matches inclusion-probability oracle on a 50-person area") {
  // Fixed area with 20 zeros and 30 ones, selection sizes drawn as in the simulator.
  Rng rng(99);
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> z(50);
  std::vector<int> y(50);
  for (int j = 0; j < 50; ++j) {
    y[static_cast<std::size_t>(j)] = j < 20 ? 0 : 1;
    z[static_cast<std::size_t>(j)] = (y[static_cast<std::size_t>(j)] == 0 ? 1.0 : 0.0) + 0.8 * ex(rng);
  }
  const long n = 6;
  // Oracle: without certainty units, inclusion probability is n z / sum z.
  double ztot = 0.0;
  for (double v : z) ztot += v;
  std::vector<double> oracle(50);
  bool any_certain = false;
  for (int j = 0; j < 50; ++j) {
    oracle[static_cast<std::size_t>(j)] = static_cast<double>(n) * z[static_cast<std::size_t>(j)] / ztot;
    any_certain = any_certain || oracle[static_cast<std::size_t>(j)] >= 1.0;
  }
  REQUIRE_FALSE(any_certain);
  const int R = 20000;
  std::vector<int> hits(50, 0);
  for (int r = 0; r < R; ++r) {
    for (auto j : systematic_pps(z, n, rng)) ++hits[j];
  }
  double p0 = 0.0, p1 = 0.0, o0 = 0.0, o1 = 0.0;
  for (int j = 0; j < 50; ++j) {
    const double freq = hits[static_cast<std::size_t>(j)] / static_cast<double>(R);
    const double o = oracle[static_cast<std::size_t>(j)];
    CHECK(std::abs(freq - o) < 4.0 * std::sqrt(o * (1 - o) / R) + 1e-3);
    (y[static_cast<std::size_t>(j)] == 0 ? p0 : p1) += freq;
    (y[static_cast<std::size_t>(j)] == 0 ? o0 : o1) += o;
  }
  p0 /= 20;
  p1 /= 30;
  o0 /= 20;
  o1 /= 30;
  CHECK(p0 > p1);
  CHECK(o0 > o1);
}

TEST_CASE("informative sampling oversamples zeros and weighting moves estimates back") {
  ScenarioConfig c = scenario_preset("Sc1", 10);
  c.m = 10;
  c.N_min = 300;
  c.N_max = 400;
  c.sampling_fraction = 0.05;
  c.seed = 5;
  auto census = generate_census(c);
  const int R = 500;
  std::vector<double> unweighted(10, 0.0), weighted(10, 0.0);
  for (int r = 0; r < R; ++r) {
    auto s = draw_informative_sample(census, c, static_cast<std::uint64_t>(r)).sample;
    auto wa = area_normalized_weights(s);
    for (int a = 1; a <= 10; ++a) {
      const auto& idx = s.area_records(a);
      double uy = 0.0;
      std::vector<int> y;
      std::vector<double> w;
      for (auto j : idx) {
        uy += s.records()[j].y;
        y.push_back(s.records()[j].y);
        w.push_back(wa[j]);
      }
      unweighted[static_cast<std::size_t>(a - 1)] += uy / static_cast<double>(idx.size()) / R;
      weighted[static_cast<std::size_t>(a - 1)] += hajek_estimate(y, w) / R;
    }
  }
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(unweighted[k] < census.true_mu[k]);
    CHECK(std::abs(weighted[k] - census.true_mu[k]) < std::abs(unweighted[k] - census.true_mu[k]));
  }
}

TEST_CASE("inverse-probability weights are design unbiased for the area total") {
  // The ratio form carries O(1/n) bias under these heavy-tailed selection sizes, so
  // unbiasedness is checked on the Horvitz-Thompson total that the weights target.
  auto c = small_config();
  auto census = generate_census(c);
  const int a = 3;
  const auto people = census.area(a);
  std::vector<double> z;
  double ztot = 0.0;
  for (const auto& p : people) {
    z.push_back(p.selection_size);
    ztot += p.selection_size;
  }
  const long n = 15;
  const auto pi = inclusion_probabilities(z, n);
  Rng rng(4);
  const int R = 4000;
  double s1 = 0.0, s2 = 0.0;
  for (int r = 0; r < R; ++r) {
    double ht = 0.0;
    for (auto j : systematic_pps(z, n, rng)) ht += people[j].y / pi[j];
    ht /= static_cast<double>(people.size());
    s1 += ht;
    s2 += ht * ht;
  }
  const double m = s1 / R;
  const double se = std::sqrt((s2 / R - m * m) / R);
  CHECK(std::abs(m - census.true_mu[static_cast<std::size_t>(a - 1)]) < 4.0 * se);
}
