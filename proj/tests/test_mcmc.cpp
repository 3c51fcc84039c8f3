#include "doctest.h"

#include <cmath>
#include <random>

#include "tsln/diagnostics.hpp"
#include "tsln/mcmc.hpp"

using namespace tsln;

namespace {

/// Independent Gaussian with given means and sds.
class Gaussian : public LogDensityModel {
 public:
  Gaussian(Eigen::VectorXd mean, Eigen::VectorXd sd) : mean_(std::move(mean)), sd_(std::move(sd)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  std::vector<std::string> names() const override {
    std::vector<std::string> n;
    for (Eigen::Index i = 0; i < mean_.size(); ++i) n.push_back("x" + std::to_string(i));
    return n;
  }
  double log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override {
    const Eigen::ArrayXd z = (q - mean_).array() / sd_.array();
    grad = -(z / sd_.array()).matrix();
    return -0.5 * z.square().sum();
  }
  Eigen::VectorXd constrain(const Eigen::VectorXd& q) const override { return q; }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd sd_;
};

/// Full-covariance Gaussian.
class Correlated : public LogDensityModel {
 public:
  explicit Correlated(Eigen::Matrix2d cov) : prec_(cov.inverse()) {}
  std::size_t dim() const override { return 2; }
  std::vector<std::string> names() const override { return {"a", "b"}; }
  double log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override {
    grad = -prec_ * q;
    return -0.5 * q.dot(prec_ * q);
  }
  Eigen::VectorXd constrain(const Eigen::VectorXd& q) const override { return q; }

 private:
  Eigen::Matrix2d prec_;
};

class Flat : public LogDensityModel {
 public:
  std::size_t dim() const override { return 1; }
  std::vector<std::string> names() const override { return {"x"}; }
  double log_density(const Eigen::VectorXd&, Eigen::VectorXd& grad) const override {
    grad.setZero(1);
    return 0.0;
  }
  Eigen::VectorXd constrain(const Eigen::VectorXd& q) const override { return q; }
};

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("standard normal target") {
  Gaussian g(vec({0.0}), vec({1.0}));
  SamplerConfig cfg;
  cfg.draws = 2000;
  cfg.seed = 3;
  auto post = sample(g, cfg);
  auto d = post.pooled(0);
  CHECK(std::abs(mean(d)) < 0.05);
  CHECK(std::abs(std::sqrt(variance(d)) - 1.0) < 0.05);
  CHECK(post.max_rhat({0}) < kRhatThreshold);
  CHECK_FALSE(post.divergence_flag());
}

TEST_CASE("conjugate normal-normal posterior") {
  // Prior N(0,1) and one observation y = 1 with unit noise: posterior N(0.5, 1/2).
  Gaussian g(vec({0.5}), vec({std::sqrt(0.5)}));
  SamplerConfig cfg;
  cfg.draws = 2000;
  cfg.seed = 17;
  auto d = sample(g, cfg).pooled(0);
  CHECK(std::abs(mean(d) - 0.5) < 0.03);
  CHECK(std::abs(std::sqrt(variance(d)) - std::sqrt(0.5)) < 0.03);
}

TEST_CASE("badly scaled target adapts the metric") {
  Gaussian g(vec({1.0, -3.0, 0.0}), vec({0.01, 10.0, 1.0}));
  SamplerConfig cfg;
  cfg.seed = 5;
  cfg.draws = 1000;
  auto post = sample(g, cfg);
  CHECK(std::abs(mean(post.pooled(0)) - 1.0) < 0.003);
  CHECK(std::abs(mean(post.pooled(1)) + 3.0) < 1.0);
  CHECK(std::sqrt(variance(post.pooled(1))) == doctest::Approx(10.0).epsilon(0.1));
  CHECK(post.max_rhat({0, 1, 2}) < kRhatThreshold);
}

TEST_CASE("correlated Gaussian covariance") {
  Eigen::Matrix2d cov;
  cov << 1.0, 0.8, 0.8, 2.0;
  Correlated model(cov);
  SamplerConfig cfg;
  cfg.draws = 5000;
  cfg.seed = 8;
  auto post = sample(model, cfg);
  auto a = post.pooled(0);
  auto b = post.pooled(1);
  const double ma = mean(a), mb = mean(b);
  Eigen::Matrix2d est = Eigen::Matrix2d::Zero();
  for (std::size_t t = 0; t < a.size(); ++t) {
    Eigen::Vector2d x(a[t] - ma, b[t] - mb);
    est += x * x.transpose();
  }
  est /= static_cast<double>(a.size() - 1);
  CHECK((est - cov).norm() / cov.norm() < 0.05);
}

TEST_CASE("sampling is deterministic and independent of chain scheduling") {
  Gaussian g(vec({0.0, 2.0}), vec({1.0, 0.5}));
  SamplerConfig cfg;
  cfg.warmup = 200;
  cfg.draws = 200;
  cfg.seed = 21;
  auto a = sample(g, cfg);
  auto b = sample(g, cfg);
  cfg.parallel_chains = true;
  auto c = sample(g, cfg);
  for (int ch = 0; ch < cfg.chains; ++ch) {
    for (int t = 0; t < cfg.draws; ++t) {
      for (std::size_t p = 0; p < 2; ++p) {
        CHECK(a.at(ch, t, p) == b.at(ch, t, p));
        CHECK(a.at(ch, t, p) == c.at(ch, t, p));
      }
    }
  }
  cfg.seed = 22;
  auto d = sample(g, cfg);
  CHECK(d.at(0, 0, 0) != a.at(0, 0, 0));
}

TEST_CASE("flat target finishes with a diagnostic flag") {
  Flat f;
  SamplerConfig cfg;
  cfg.warmup = 300;
  cfg.draws = 300;
  PosteriorMatrix post;
  CHECK_NOTHROW(post = sample(f, cfg));
  const bool flagged = post.divergence_flag() || !(post.max_rhat({0}) <= kRhatThreshold);
  CHECK(flagged);
}

TEST_CASE("gradient check") {
  Gaussian g(vec({1.0, 2.0}), vec({0.5, 3.0}));
  CHECK(gradient_check(g, vec({0.3, -1.0})) < 1e-8);
  CHECK_THROWS(gradient_check(g, vec({0.3, -1.0}), 0.0));
}

TEST_CASE("split R-hat") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> c(4000);
  for (double& v : c) v = n(rng);
  const double r = split_rhat({c, c});
  CHECK(r >= 0.99);
  CHECK(r <= 1.01);

  std::vector<double> a(1000), b(1000);
  for (double& v : a) v = n(rng);
  for (double& v : b) v = 5.0 + n(rng);
  CHECK(split_rhat({a, b}) > 1.5);

  // Direct formula on a tiny case: halves {0,1},{2,3},{4,5},{6,7}.
  std::vector<double> x{0, 1, 2, 3}, y{4, 5, 6, 7};
  // W = 0.5; half means have variance 20/3 so B = 40/3 and V = 0.25 + 20/3.
  CHECK(split_rhat({x, y}) == doctest::Approx(std::sqrt((0.25 + 20.0 / 3.0) / 0.5)));

  std::vector<double> k(10, 2.0);
  CHECK_THROWS_WITH(split_rhat({k, k}), "degenerate chains");
  CHECK_THROWS(split_rhat({k}));
  CHECK_THROWS(split_rhat({{1, 2, 3}, {1, 2, 3}}));
}

TEST_CASE("effective sample size") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> iid(4, std::vector<double>(1000));
  for (auto& c : iid) {
    for (double& v : c) v = n(rng);
  }
  const double ess = effective_sample_size(iid);
  CHECK(ess > 3000);
  CHECK(ess < 5500);
  // AR(1) with phi = 0.9 has ESS roughly N (1 - phi) / (1 + phi).
  std::vector<std::vector<double>> ar(4, std::vector<double>(5000));
  for (auto& c : ar) {
    double x = 0.0;
    for (double& v : c) {
      x = 0.9 * x + std::sqrt(1 - 0.81) * n(rng);
      v = x;
    }
  }
  const double ess_ar = effective_sample_size(ar);
  CHECK(ess_ar == doctest::Approx(20000.0 * 0.1 / 1.9).epsilon(0.25));
}

TEST_CASE("highest density interval") {
  std::vector<double> same(50, 0.7);
  auto i = hdi(same);
  CHECK(i.lo == 0.7);
  CHECK(i.hi == 0.7);

  std::vector<double> seq;
  for (int k = 1; k <= 100; ++k) seq.push_back(k);
  auto s = hdi(seq, 0.95);
  CHECK(s.width() == 94.0);
  CHECK(s.lo == 1.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> d(20000);
  for (double& v : d) v = n(rng);
  auto h = hdi(d);
  CHECK(h.lo == doctest::Approx(quantile(d, 0.025)).epsilon(0.05));
  CHECK(h.hi == doctest::Approx(quantile(d, 0.975)).epsilon(0.05));

  CHECK_THROWS(hdi(seq, 1.0));
  CHECK_THROWS(hdi(seq, 0.0));
  CHECK_THROWS(hdi(std::vector<double>(10, 1.0)));
}
