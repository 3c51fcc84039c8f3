#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsln/experiment.hpp"

using namespace tsln;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tsln_exp_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  const auto c = config_from_json(json::object());
  CHECK(c.scenario.name == "Sc3");
  CHECK(c.scenario.M == 40);
  CHECK(c.replicates == 50);
  CHECK(c.models == kModelNames);

  const auto f = config_from_json(json{{"full_scale", true}});
  CHECK(f.scenario.M == 100);
  CHECK(f.replicates == 500);
  CHECK(f.engine.chains == 4);
  CHECK(f.engine.warmup == 1000);
  CHECK(f.engine.draws == 500);

  const auto o = config_from_json(
      json{{"full_scale", true}, {"replicates", 3}, {"scenario", {{"preset", "Sc5"}, {"M", 30}}}, {"models", {"ELN"}}});
  CHECK(o.replicates == 3);
  CHECK(o.scenario.M == 30);
  CHECK(o.scenario.name == "Sc5");
  CHECK(o.models == std::vector<std::string>{"ELN"});
}

TEST_CASE("config rejects bad input") {
  CHECK_THROWS_AS(config_from_json(json{{"replicate", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"engine", {{"chain", 2}}}}), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"models", {"TSLN", "GLMM"}}}), "unknown model 'GLMM'", ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"replicates", 0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"replicates", "ten"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"scenario", {{"preset", "Sc9"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"stage2", {{"rho_prior", "gamma"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"suppe", {{"sigma_e", {0.5, -1.0}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
  const auto a = config_from_json(json::object());
  const auto b = config_from_json(json::object());
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  const auto c = config_from_json(json{{"engine", {{"seed", 2}}}});
  CHECK(config_hash(a) != config_hash(c));
  // Round trip through the canonical JSON.
  CHECK(config_hash(config_from_json(config_to_json(c))) == config_hash(c));
}

TEST_CASE("worker count") {
  CHECK(worker_count(3) == 3);
  CHECK(worker_count(0) >= 1);
}

TEST_CASE("metrics csv round trip is exact") {
  const auto p = scratch("metrics.csv");
  std::vector<MetricRow> rows{{"Sc3", "TSLN", "sampled", "MRRMSE", 1, 0.1 + 0.2},
                              {"Sc3", "ELN", "all", "coverage", 2, 1.0 / 3.0},
                              {"Sc3", "S1", "sampled", "alc", 2, -1e-300}};
  write_metrics_csv(p, rows);
  const auto back = read_metrics_csv(p);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].model == rows[i].model);
    CHECK(back[i].group == rows[i].group);
    CHECK(back[i].metric == rows[i].metric);
    CHECK(back[i].replicate == rows[i].replicate);
    CHECK(back[i].value == rows[i].value);
  }
  std::filesystem::remove(p);
  CHECK_THROWS_AS(read_metrics_csv(p), DataError);
}

TEST_CASE("table5 medians, pooled coverage and ratios") {
  std::vector<MetricRow> rows;
  auto add = [&](const std::string& model, int d, double mrrmse, double cov, double n, double width) {
    rows.push_back({"X", model, "sampled", "n_areas", d, n});
    rows.push_back({"X", model, "sampled", "MARB", d, mrrmse / 2});
    rows.push_back({"X", model, "sampled", "MRRMSE", d, mrrmse});
    rows.push_back({"X", model, "sampled", "coverage", d, cov});
    rows.push_back({"X", model, "sampled", "ci_width", d, width});
  };
  add("TSLN", 1, 0.2, 1.0, 10, 0.1);
  add("TSLN", 2, 0.4, 0.5, 30, 0.3);
  add("TSLN", 3, 0.3, 0.9, 10, 0.2);
  add("ELN", 1, 0.6, 0.8, 10, 0.4);
  rows.push_back({"X", "S1", "sampled", "alc", 1, 0.9});

  const auto t = table5(rows);
  REQUIRE(t.size() == 2);
  CHECK(t[0].model == "TSLN");
  CHECK(t[0].replicates == 3);
  CHECK(t[0].mrrmse == doctest::Approx(0.3));
  CHECK(t[0].marb == doctest::Approx(0.15));
  CHECK(t[0].ci_width == doctest::Approx(0.2));
  // (10 + 15 + 9) / 50
  CHECK(t[0].coverage == doctest::Approx(0.68));
  CHECK(t[0].mrrmse_ratio == doctest::Approx(1.0));
  CHECK(t[1].mrrmse_ratio == doctest::Approx(2.0));
  CHECK(t[1].width_ratio == doctest::Approx(2.0));

  const auto t4 = table4(rows);
  REQUIRE(t4.size() == 1);
  CHECK(t4[0].metric == "alc");
  CHECK(t4[0].value.median == doctest::Approx(0.9));
}

TEST_CASE("boxplot svg") {
  const auto svg = boxplot_svg("MRRMSE", {"TSLN", "ELN"}, {{0.1, 0.2, 0.3}, {0.5, 0.6}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("TSLN") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("replicate run is deterministic and reports") {
  const auto run = [](const std::filesystem::path& out, int workers) {
    auto c = config_from_json(json{{"scenario", {{"preset", "Sc3"}, {"M", 12}}},
                                   {"replicates", 2},
                                   {"models", {"ELN", "BETA"}},
                                   {"engine", {{"chains", 2}, {"warmup", 150}, {"draws", 150}}},
                                   {"workers", workers}});
    c.output = out;
    return cmd_replicate(c);
  };
  const auto a = scratch("rep_a");
  const auto b = scratch("rep_b");
  const auto sa = run(a, 1);
  run(b, 2);
  CHECK(sa.converged + sa.discarded + sa.failed == 4);
  for (const char* f : {"metrics.csv", "area_estimates.csv", "table5.csv", "table4.csv", "manifest.json"}) {
    INFO(f);
    REQUIRE(std::filesystem::exists(a / f));
  }
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "area_estimates.csv") == slurp(b / "area_estimates.csv"));

  const auto manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("replicates").size() == 2);
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);

  // report regenerates the same table from metrics.csv alone.
  const auto t5 = slurp(a / "table5.csv");
  std::filesystem::remove(a / "table5.csv");
  cmd_report(a);
  CHECK(slurp(a / "table5.csv") == t5);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("simulate writes a consistent sample") {
  const auto out = scratch("sim");
  auto c = config_from_json(json{{"scenario", {{"preset", "Sc1"}, {"M", 15}}}});
  c.output = out;
  cmd_simulate(c, 3);
  const auto areas = read_area_csv(out / "areas.csv");
  CHECK(areas.size() == 15);
  const auto sample = read_sample_csv(out / "sample.csv", 15);
  CHECK(sample.size() > 0);
  CHECK(std::filesystem::exists(out / "truth.csv"));
  CHECK(std::filesystem::exists(out / "census.csv"));
  CHECK_THROWS_AS(cmd_simulate(c, 0), ConfigError);
  std::filesystem::remove_all(out);
}
