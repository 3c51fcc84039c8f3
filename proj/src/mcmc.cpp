#include "tsln/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "tsln/csv.hpp"
#include "tsln/diagnostics.hpp"
#include "tsln/rng.hpp"

namespace tsln {

PosteriorMatrix::PosteriorMatrix(std::vector<std::string> names, int chains, int draws)
    : names_(std::move(names)), chains_(chains), draws_(draws) {
  values_.assign(static_cast<std::size_t>(chains_) * static_cast<std::size_t>(draws_) * names_.size(), 0.0);
}

std::size_t PosteriorMatrix::index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no parameter named " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

double& PosteriorMatrix::at(int chain, int draw, std::size_t param) {
  return values_[(static_cast<std::size_t>(chain) * static_cast<std::size_t>(draws_) +
                  static_cast<std::size_t>(draw)) * names_.size() + param];
}

double PosteriorMatrix::at(int chain, int draw, std::size_t param) const {
  return values_[(static_cast<std::size_t>(chain) * static_cast<std::size_t>(draws_) +
                  static_cast<std::size_t>(draw)) * names_.size() + param];
}

Eigen::Map<const Eigen::VectorXd> PosteriorMatrix::row(int chain, int draw) const {
  const double* p = &values_[(static_cast<std::size_t>(chain) * static_cast<std::size_t>(draws_) +
                              static_cast<std::size_t>(draw)) * names_.size()];
  return Eigen::Map<const Eigen::VectorXd>(p, static_cast<Eigen::Index>(names_.size()));
}

void PosteriorMatrix::set_row(int chain, int draw, const Eigen::VectorXd& values) {
  if (static_cast<std::size_t>(values.size()) != names_.size()) {
    throw std::invalid_argument("constrained draw has wrong length");
  }
  for (std::size_t p = 0; p < names_.size(); ++p) at(chain, draw, p) = values[static_cast<Eigen::Index>(p)];
}

std::vector<std::vector<double>> PosteriorMatrix::chains_of(std::size_t param) const {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(chains_));
  for (int c = 0; c < chains_; ++c) {
    out[static_cast<std::size_t>(c)].reserve(static_cast<std::size_t>(draws_));
    for (int t = 0; t < draws_; ++t) out[static_cast<std::size_t>(c)].push_back(at(c, t, param));
  }
  return out;
}

std::vector<double> PosteriorMatrix::pooled(std::size_t param) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(chains_ * draws_));
  for (int c = 0; c < chains_; ++c) {
    for (int t = 0; t < draws_; ++t) out.push_back(at(c, t, param));
  }
  return out;
}

int PosteriorMatrix::total_divergences() const {
  int d = 0;
  for (const auto& c : chain_diagnostics) d += c.divergences;
  return d;
}

bool PosteriorMatrix::divergence_flag() const {
  return total_divergences() > 0.01 * static_cast<double>(chains_ * draws_);
}

double PosteriorMatrix::max_rhat(const std::vector<std::size_t>& params) const {
  double worst = 0.0;
  for (auto p : params) {
    double r = 0.0;
    try {
      r = split_rhat(chains_of(p));
    } catch (const std::domain_error&) {
      r = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(r)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, r);
  }
  return worst;
}

void PosteriorMatrix::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& n : names_) out << n << ',';
  out << "chain\n";
  for (int c = 0; c < chains_; ++c) {
    for (int t = 0; t < draws_; ++t) {
      for (std::size_t p = 0; p < names_.size(); ++p) out << csv::exact(at(c, t, p)) << ',';
      out << c + 1 << '\n';
    }
  }
}

void PosteriorMatrix::write_diagnostics_json(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["chains"] = chains_;
  j["draws"] = draws_;
  j["divergences"] = total_divergences();
  j["divergence_flag"] = divergence_flag();
  for (const auto& c : chain_diagnostics) {
    j["chain_step_size"].push_back(c.step_size);
    j["chain_accept_rate"].push_back(c.accept_rate);
  }
  for (std::size_t p = 0; p < names_.size(); ++p) {
    nlohmann::json entry;
    entry["name"] = names_[p];
    const auto ch = chains_of(p);
    try {
      entry["rhat"] = chains_ >= 2 ? split_rhat(ch) : std::nan("");
    } catch (const std::exception&) {
      entry["rhat"] = nullptr;
    }
    try {
      entry["ess"] = effective_sample_size(ch);
    } catch (const std::exception&) {
      entry["ess"] = nullptr;
    }
    j["parameters"].push_back(entry);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

constexpr double kMaxStepSize = 1e3;
constexpr double kMinStepSize = 1e-10;

class DualAveraging {
 public:
  explicit DualAveraging(double target) : target_(target) {}

  void restart(double step) {
    mu_ = std::log(10.0 * step);
    log_step_ = std::log(step);
    log_step_bar_ = 0.0;
    h_bar_ = 0.0;
    count_ = 0.0;
  }

  void update(double accept_stat) {
    count_ += 1.0;
    const double eta = 1.0 / (count_ + kT0);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_stat);
    log_step_ = mu_ - std::sqrt(count_) / kGamma * h_bar_;
    log_step_ = std::clamp(log_step_, std::log(kMinStepSize), std::log(kMaxStepSize));
    const double x = std::pow(count_, -kKappa);
    log_step_bar_ = x * log_step_ + (1.0 - x) * log_step_bar_;
  }

  double step() const { return std::exp(log_step_); }
  double final_step() const { return std::exp(log_step_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double target_;
  double mu_ = 0.0;
  double log_step_ = 0.0;
  double log_step_bar_ = 0.0;
  double h_bar_ = 0.0;
  double count_ = 0.0;
};

class RunningVariance {
 public:
  explicit RunningVariance(Eigen::Index dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  void reset() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

  /// Sample variance shrunk toward 1e-3, as in Stan's diagonal adaptation.
  Eigen::VectorXd regularized() const {
    const double n = static_cast<double>(n_);
    Eigen::VectorXd var = m2_ / (n - 1.0);
    return (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }

  long count() const { return n_; }

 private:
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

struct WarmupPlan {
  int start = 0;
  std::vector<int> ends;
};

/// Warmup windows: fast step-size phase, doubling metric windows, final step-size phase.
WarmupPlan metric_windows(int warmup) {
  WarmupPlan plan;
  if (warmup < 20) return plan;
  int init = 75;
  int term = 50;
  int base = 25;
  if (init + term + base > warmup) {
    init = static_cast<int>(0.15 * warmup);
    term = static_cast<int>(0.1 * warmup);
    base = warmup - init - term;
  }
  plan.start = init;
  int start = init;
  int size = base;
  const int last = warmup - term;
  while (start < last) {
    int end = start + size;
    if (end + 2 * size > last) end = last;
    plan.ends.push_back(end);
    start = end;
    size *= 2;
  }
  return plan;
}

class Chain {
 public:
  Chain(const LogDensityModel& model, const SamplerConfig& cfg, int index)
      : model_(model),
        cfg_(cfg),
        rng_(make_stream(cfg.seed, {streams::chain, static_cast<std::uint64_t>(index)})),
        dim_(static_cast<Eigen::Index>(model.dim())),
        q_(dim_),
        grad_(dim_),
        inv_metric_(Eigen::VectorXd::Ones(dim_)) {}

  void run(PosteriorMatrix& out, int chain_index) {
    initialize();
    step_ = find_step_size(1.0);
    DualAveraging da(cfg_.target_accept);
    da.restart(step_);
    RunningVariance var(dim_);
    const WarmupPlan plan = cfg_.adapt_metric ? metric_windows(cfg_.warmup) : WarmupPlan{};
    const auto& window_ends = plan.ends;
    const int window_start = plan.start;
    std::size_t next_window = 0;

    for (int it = 0; it < cfg_.warmup; ++it) {
      const double accept = transition();
      da.update(accept);
      step_ = da.step();
      if (next_window < window_ends.size() && it >= window_start) {
        var.add(q_);
        if (it + 1 == window_ends[next_window]) {
          if (var.count() > 2) inv_metric_ = var.regularized();
          var.reset();
          step_ = find_step_size(step_);
          da.restart(step_);
          ++next_window;
        }
      }
    }
    if (cfg_.warmup > 0) step_ = std::clamp(da.final_step(), kMinStepSize, kMaxStepSize);

    ChainDiagnostics diag;
    int accepted = 0;
    double accept_sum = 0.0;
    divergences_ = 0;
    leapfrogs_ = 0;
    for (int t = 0; t < cfg_.draws; ++t) {
      const double a = transition();
      accept_sum += a;
      if (last_accepted_) ++accepted;
      out.set_row(chain_index, t, model_.constrain(q_));
    }
    if (cfg_.draws > 0 && accepted == 0) {
      throw std::runtime_error("chain " + std::to_string(chain_index) + " rejected every proposal");
    }
    diag.step_size = step_;
    diag.accept_rate = cfg_.draws > 0 ? accept_sum / cfg_.draws : 0.0;
    diag.divergences = divergences_;
    diag.leapfrog_steps = leapfrogs_;
    diag.inv_metric = inv_metric_;
    out.chain_diagnostics[static_cast<std::size_t>(chain_index)] = diag;
  }

 private:
  double evaluate(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    double lp = 0.0;
    try {
      lp = model_.log_density(q, g);
    } catch (const std::domain_error&) {
      return -std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(lp) || !g.allFinite()) return -std::numeric_limits<double>::infinity();
    return lp;
  }

  void initialize() {
    std::uniform_real_distribution<double> unif(-cfg_.init_radius, cfg_.init_radius);
    const Eigen::VectorXd centre = model_.init_center();
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (Eigen::Index i = 0; i < dim_; ++i) q_[i] = centre[i] + unif(rng_);
      logp_ = evaluate(q_, grad_);
      if (std::isfinite(logp_)) return;
    }
    throw std::runtime_error("could not find a finite initial point in 100 attempts");
  }

  double hamiltonian(double logp, const Eigen::VectorXd& p) const {
    return -logp + 0.5 * p.cwiseProduct(p).dot(inv_metric_);
  }

  Eigen::VectorXd draw_momentum() {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd p(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) p[i] = normal(rng_) / std::sqrt(inv_metric_[i]);
    return p;
  }

  double find_step_size(double step) {
    Eigen::VectorXd q1(dim_);
    Eigen::VectorXd g1(dim_);
    int direction = 0;
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd p = draw_momentum();
      const double h0 = hamiltonian(logp_, p);
      p += 0.5 * step * grad_;
      q1 = q_ + step * inv_metric_.cwiseProduct(p);
      const double lp1 = evaluate(q1, g1);
      p += 0.5 * step * g1;
      const double h1 = hamiltonian(lp1, p);
      const double delta = std::isfinite(h1) ? h0 - h1 : -std::numeric_limits<double>::infinity();
      const int want = delta > std::log(0.8) ? 1 : -1;
      if (direction == 0) direction = want;
      if (want != direction) break;
      const double next = direction > 0 ? 2.0 * step : 0.5 * step;
      if (next > kMaxStepSize || next < kMinStepSize) break;
      step = next;
    }
    return step;
  }

  double transition() {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double jitter = 0.5 + unif(rng_);
    const int steps = std::clamp(static_cast<int>(std::ceil(jitter * cfg_.path_length / step_)), 1,
                                 cfg_.max_leapfrog);
    Eigen::VectorXd p = draw_momentum();
    const double h0 = hamiltonian(logp_, p);
    Eigen::VectorXd q1 = q_;
    Eigen::VectorXd g1 = grad_;
    double lp1 = logp_;
    bool divergent = false;
    p += 0.5 * step_ * g1;
    for (int l = 0; l < steps; ++l) {
      q1 += step_ * inv_metric_.cwiseProduct(p);
      lp1 = evaluate(q1, g1);
      ++leapfrogs_;
      if (!std::isfinite(lp1) || !q1.allFinite()) {
        divergent = true;
        break;
      }
      p += (l + 1 < steps ? 1.0 : 0.5) * step_ * g1;
    }
    double accept = 0.0;
    last_accepted_ = false;
    if (!divergent) {
      const double h1 = hamiltonian(lp1, p);
      if (!std::isfinite(h1) || h1 - h0 > 1000.0) {
        divergent = true;
      } else {
        accept = std::min(1.0, std::exp(h0 - h1));
        if (unif(rng_) < accept) {
          q_ = q1;
          grad_ = g1;
          logp_ = lp1;
          last_accepted_ = true;
        }
      }
    }
    if (divergent) ++divergences_;
    return accept;
  }

  const LogDensityModel& model_;
  const SamplerConfig& cfg_;
  Rng rng_;
  Eigen::Index dim_;
  Eigen::VectorXd q_;
  Eigen::VectorXd grad_;
  Eigen::VectorXd inv_metric_;
  double logp_ = 0.0;
  double step_ = 1.0;
  int divergences_ = 0;
  long leapfrogs_ = 0;
  bool last_accepted_ = false;
};

}  // namespace

PosteriorMatrix sample(const LogDensityModel& model, const SamplerConfig& config) {
  if (config.chains < 1 || config.draws < 0 || config.warmup < 0) {
    throw std::invalid_argument("invalid sampler configuration");
  }
  if (model.dim() == 0) throw std::invalid_argument("model has no parameters");
  PosteriorMatrix out(model.names(), config.chains, config.draws);
  out.chain_diagnostics.resize(static_cast<std::size_t>(config.chains));
  if (config.parallel_chains && config.chains > 1) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.chains));
    std::vector<std::thread> workers;
    for (int c = 0; c < config.chains; ++c) {
      workers.emplace_back([&, c] {
        try {
          Chain(model, config, c).run(out, c);
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (int c = 0; c < config.chains; ++c) Chain(model, config, c).run(out, c);
  }
  return out;
}

double gradient_check(const LogDensityModel& model, const Eigen::VectorXd& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const auto n = static_cast<Eigen::Index>(model.dim());
  if (point.size() != n) throw std::invalid_argument("point has wrong dimension");
  Eigen::VectorXd grad(n);
  Eigen::VectorXd scratch(n);
  const double f0 = model.log_density(point, grad);
  if (!std::isfinite(f0)) throw std::domain_error("log density not finite at check point");
  double worst = 0.0;
  auto at = [&](Eigen::Index i, double shift) {
    Eigen::VectorXd q = point;
    q[i] += shift;
    const double f = model.log_density(q, scratch);
    if (!std::isfinite(f)) throw std::domain_error("log density not finite at perturbed point");
    return f;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    // Five-point stencil: truncation error O(eps^4), so eps can stay large enough
    // to keep cancellation error small when the density itself is large.
    const double fd = (at(i, -2.0 * eps) - 8.0 * at(i, -eps) + 8.0 * at(i, eps) - at(i, 2.0 * eps)) / (12.0 * eps);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(grad[i])));
  }
  return worst;
}

void require_gradients(const LogDensityModel& model, std::uint64_t seed, int points, double tol) {
  auto rng = make_stream(seed, {streams::fit, 0xC0FFEEULL});
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  const auto n = static_cast<Eigen::Index>(model.dim());
  for (int k = 0; k < points; ++k) {
    Eigen::VectorXd q(n);
    for (Eigen::Index i = 0; i < n; ++i) q[i] = unif(rng);
    const double err = gradient_check(model, q);
    if (!(err < tol)) {
      throw std::logic_error("gradient check failed: relative error " + std::to_string(err));
    }
  }
}

}  // namespace tsln
