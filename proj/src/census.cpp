#include "tsln/census.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "tsln/csv.hpp"
#include "tsln/rng.hpp"

namespace tsln {

void ScenarioConfig::validate() const {
  if (M < 1) throw std::invalid_argument("M must be positive");
  if (!(0.0 < L && L < U && U < 1.0)) throw std::invalid_argument("need 0 < L < U < 1");
  if (N_min < 1 || N_max < N_min) throw std::invalid_argument("need 1 <= N_min <= N_max");
  if (!(sampling_fraction > 0.0 && sampling_fraction < 1.0)) {
    throw std::invalid_argument("sampling fraction must lie in (0, 1)");
  }
  if (m < 1 || m > M) throw std::invalid_argument("need 1 <= m <= M");
  if (alpha_survey < 0.0 || alpha_census < 0.0 || u < 0.0 || informativeness < 0.0) {
    throw std::invalid_argument("noise scales must be non-negative");
  }
}

ScenarioConfig scenario_preset(std::string_view name, int M) {
  ScenarioConfig c;
  c.name = std::string(name);
  c.M = M;
  c.m = std::max(1, static_cast<int>(std::lround(0.6 * M)));
  const bool high = name == "Sc1" || name == "Sc3" || name == "Sc5";
  c.alpha_survey = high ? 0.5 : 1.0;
  c.alpha_census = 1.0;
  if (name == "Sc1" || name == "Sc2") {
    c.L = 0.35;
    c.U = 0.65;
    c.u = 0.05;
  } else if (name == "Sc3" || name == "Sc4") {
    c.L = 0.1;
    c.U = 0.4;
    c.u = 0.01;
  } else if (name == "Sc5" || name == "Sc6") {
    c.L = 0.6;
    c.U = 0.9;
    c.u = 0.01;
  } else if (name == "SuppE") {
    c.L = 0.05;
    c.U = 0.3;
    c.u = 0.01;
    c.alpha_survey = 1.0;
    c.variant = CensusVariant::SuppE;
  } else {
    throw std::invalid_argument("unknown scenario '" + std::string(name) + "'");
  }
  return c;
}

std::span<const CensusPerson> CensusFrame::area(int area_id) const {
  const auto k = static_cast<std::size_t>(area_id - 1);
  return std::span<const CensusPerson>(people).subspan(offset.at(k), offset.at(k + 1) - offset.at(k));
}

namespace {

void standardize(std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  for (double& v : x) v = sd > 0.0 ? (v - mean) / sd : 0.0;
}

}  // namespace

CensusFrame generate_census(const ScenarioConfig& config) {
  config.validate();
  auto rng = make_stream(config.seed, {streams::census});
  const int M = config.M;
  CensusFrame census;

  // Step one: equally spaced proportions, population sizes, binomial counts.
  std::vector<double> target(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) {
    target[static_cast<std::size_t>(i)] =
        M == 1 ? config.L : config.L + (config.U - config.L) * i / static_cast<double>(M - 1);
  }
  census.N.resize(static_cast<std::size_t>(M));
  if (config.size_rule == PopulationSizeRule::UniformRange) {
    std::uniform_int_distribution<long> size_dist(config.N_min, config.N_max);
    for (auto& n : census.N) n = size_dist(rng);
  } else {
    std::bernoulli_distribution coin(0.5);
    for (auto& n : census.N) n = coin(rng) ? config.N_max : config.N_min;
  }
  census.offset.assign(1, 0);
  std::vector<long> counts(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) {
    const auto k = static_cast<std::size_t>(i);
    std::binomial_distribution<long> binom(census.N[k], target[k]);
    counts[k] = binom(rng);
    for (long j = 0; j < census.N[k]; ++j) {
      census.people.push_back({i + 1, j < counts[k] ? 1 : 0, 1, 0.0, 1.0});
    }
    census.offset.push_back(census.people.size());
  }

  // Step two: individual covariates y + alpha * e.
  const std::size_t total = census.people.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xs(total);
  std::vector<double> xc(total);
  for (std::size_t j = 0; j < total; ++j) xs[j] = census.people[j].y + config.alpha_survey * normal(rng);
  for (std::size_t j = 0; j < total; ++j) xc[j] = census.people[j].y + config.alpha_census * normal(rng);
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  const double q1 = sorted[total / 3];
  const double q2 = sorted[(2 * total) / 3];
  standardize(xc);
  for (std::size_t j = 0; j < total; ++j) {
    census.people[j].x_survey = xs[j] < q1 ? 1 : (xs[j] < q2 ? 2 : 3);
    census.people[j].x_census = xc[j];
  }

  // Step three: true proportions and the area covariate.
  census.true_mu.resize(static_cast<std::size_t>(M));
  census.Z.resize(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) {
    const auto k = static_cast<std::size_t>(i);
    census.true_mu[k] = static_cast<double>(counts[k]) / static_cast<double>(census.N[k]);
  }
  for (int i = 0; i < M; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double mu = std::clamp(census.true_mu[k], 1e-6, 1.0 - 1e-6);
    census.Z[k] = logit(mu) + config.u * normal(rng);
  }
  standardize(census.Z);

  // Step four: selection sizes z = 1(y = 0) + scale * h, h ~ Exp(1).
  std::exponential_distribution<double> expo(1.0);
  for (auto& p : census.people) {
    p.selection_size = std::max((p.y == 0 ? 1.0 : 0.0) + config.informativeness * expo(rng), 1e-12);
  }
  return census;
}

CensusFrame generate_suppE_census(ScenarioConfig config) {
  config.L = 0.05;
  config.U = 0.3;
  config.variant = CensusVariant::SuppE;
  return generate_census(config);
}

std::vector<long> planned_sample_sizes(const CensusFrame& census, const ScenarioConfig& config) {
  const double scale = static_cast<double>(config.M) / static_cast<double>(config.m) *
                       config.sampling_fraction;
  std::vector<long> n;
  n.reserve(census.N.size());
  for (long Ni : census.N) n.push_back(std::lround(scale * static_cast<double>(Ni)));
  return n;
}

std::vector<double> inclusion_probabilities(std::span<const double> size, long n) {
  const std::size_t N = size.size();
  if (n < 0 || static_cast<std::size_t>(n) > N) throw std::invalid_argument("sample size exceeds population");
  std::vector<double> pi(N, 0.0);
  std::vector<bool> certain(N, false);
  long remaining = n;
  while (remaining > 0) {
    double total = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      if (!certain[j]) total += size[j];
    }
    bool changed = false;
    for (std::size_t j = 0; j < N; ++j) {
      if (certain[j]) continue;
      pi[j] = static_cast<double>(remaining) * size[j] / total;
      if (pi[j] >= 1.0) {
        certain[j] = true;
        pi[j] = 1.0;
        --remaining;
        changed = true;
      }
    }
    if (!changed) break;
  }
  if (remaining == 0) {
    for (std::size_t j = 0; j < N; ++j) {
      if (!certain[j]) pi[j] = 0.0;
    }
  }
  return pi;
}

std::vector<std::size_t> systematic_pps(std::span<const double> size, long n, std::mt19937_64& rng) {
  const auto pi = inclusion_probabilities(size, n);
  std::vector<std::size_t> chosen;
  std::vector<std::size_t> rest;
  for (std::size_t j = 0; j < pi.size(); ++j) {
    if (pi[j] >= 1.0) {
      chosen.push_back(j);
    } else if (pi[j] > 0.0) {
      rest.push_back(j);
    }
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  const long needed = n - static_cast<long>(chosen.size());
  if (needed > 0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double point = unif(rng);
    double cumulative = 0.0;
    long taken = 0;
    for (std::size_t j : rest) {
      cumulative += pi[j];
      if (taken < needed && cumulative > point) {
        chosen.push_back(j);
        point += 1.0;
        ++taken;
      }
    }
    // Rounding can leave the last point just past the cumulative total.
    for (auto it = rest.rbegin(); taken < needed && it != rest.rend(); ++it) {
      if (std::find(chosen.begin(), chosen.end(), *it) == chosen.end()) {
        chosen.push_back(*it);
        ++taken;
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

SampleDraw draw_informative_sample(const CensusFrame& census, const ScenarioConfig& config,
                                   std::uint64_t replicate_seed) {
  config.validate();
  if (census.total_areas() != config.M) throw std::invalid_argument("census does not match config");
  auto rng = make_stream(config.seed, {streams::replicate, replicate_seed});
  SampleDraw out;
  const auto n_plan = planned_sample_sizes(census, config);

  // Areas: successive size-proportional draws without replacement.
  std::vector<double> remaining_size(census.N.begin(), census.N.end());
  std::vector<int> selected;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < config.m; ++k) {
    const double total = std::accumulate(remaining_size.begin(), remaining_size.end(), 0.0);
    double point = unif(rng) * total;
    std::size_t pick = remaining_size.size();
    for (std::size_t i = 0; i < remaining_size.size(); ++i) {
      if (remaining_size[i] <= 0.0) continue;
      pick = i;
      if (point < remaining_size[i]) break;
      point -= remaining_size[i];
    }
    selected.push_back(static_cast<int>(pick) + 1);
    remaining_size[pick] = 0.0;
  }
  std::sort(selected.begin(), selected.end());

  std::vector<SurveyRecord> records;
  for (int a : selected) {
    const auto k = static_cast<std::size_t>(a - 1);
    const long n = n_plan[k];
    if (n < 1) {
      out.warnings.push_back("area " + std::to_string(a) + " dropped: planned sample size rounds to 0");
      continue;
    }
    if (n > census.N[k]) throw std::invalid_argument("planned sample size exceeds area population");
    const auto people = census.area(a);
    std::vector<double> z(people.size());
    double z_total = 0.0;
    for (std::size_t j = 0; j < people.size(); ++j) {
      z[j] = people[j].selection_size;
      z_total += z[j];
    }
    const auto idx = systematic_pps(z, n, rng);
    std::vector<double> w;
    double w_total = 0.0;
    for (auto j : idx) {
      const double pi = z[j] / z_total;
      w.push_back(1.0 / (static_cast<double>(n) * pi));
      w_total += w.back();
    }
    const double rescale = static_cast<double>(census.N[k]) / w_total;
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const auto& p = people[idx[s]];
      records.push_back({a, p.y, p.x_survey, p.x_census, w[s] * rescale});
    }
  }
  out.sample = SurveySample(std::move(records), config.M);
  return out;
}

void write_census_csv(const std::filesystem::path& path, const CensusFrame& census) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "area_id,y,x_survey,x_census\n";
  for (const auto& p : census.people) {
    out << p.area_id << ',' << p.y << ',' << p.x_survey << ',' << csv::exact(p.x_census) << '\n';
  }
}

CensusFrame read_census_csv(const std::filesystem::path& census_path, const AreaTable& areas) {
  const auto table = csv::read(census_path);
  csv::require_header(table, {"area_id", "y", "x_survey", "x_census"}, census_path);
  const int M = static_cast<int>(areas.size());
  std::vector<std::vector<CensusPerson>> by_area(static_cast<std::size_t>(M));
  for (const auto& row : table.rows) {
    CensusPerson p;
    p.area_id = static_cast<int>(csv::to_long(row[0]));
    p.y = static_cast<int>(csv::to_long(row[1]));
    p.x_survey = static_cast<int>(csv::to_long(row[2]));
    p.x_census = csv::to_double(row[3]);
    if (p.area_id < 1 || p.area_id > M) throw std::runtime_error("census area id out of range");
    by_area[static_cast<std::size_t>(p.area_id - 1)].push_back(p);
  }
  CensusFrame census;
  census.N = areas.N;
  census.Z = areas.Z;
  census.offset.assign(1, 0);
  for (int i = 0; i < M; ++i) {
    const auto& v = by_area[static_cast<std::size_t>(i)];
    if (static_cast<long>(v.size()) != areas.N[static_cast<std::size_t>(i)]) {
      throw std::runtime_error("census/area metadata mismatch for area " + std::to_string(i + 1));
    }
    long ones = 0;
    for (const auto& p : v) ones += p.y;
    census.true_mu.push_back(static_cast<double>(ones) / static_cast<double>(v.size()));
    census.people.insert(census.people.end(), v.begin(), v.end());
    census.offset.push_back(census.people.size());
  }
  return census;
}

}  // namespace tsln
