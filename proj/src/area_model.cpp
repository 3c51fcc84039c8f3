#include "tsln/area_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>

#include "tsln/csv.hpp"
#include "tsln/survey.hpp"

namespace tsln {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double normal_lpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * d * d / var;
}

}  // namespace

void BenchmarkSpec::validate(int areas) const {
  if (regions.size() != C_hat.size() || regions.size() != var.size()) {
    throw std::invalid_argument("benchmark regions, estimates and variances differ in length");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("benchmark epsilon must be positive");
  for (std::size_t k = 0; k < regions.size(); ++k) {
    if (regions[k].empty()) throw std::invalid_argument("empty region");
    for (int i : regions[k]) {
      if (i < 0 || i >= areas) throw std::invalid_argument("benchmark region area out of range");
    }
    if (!(var[k] > 0.0)) throw std::invalid_argument("benchmark variance must be positive");
  }
}

double gvf_impute(double omega0, double omega1, double sigma_gvf, double n, GvfCorrection correction) {
  if (!(n >= 1.0)) throw std::invalid_argument("sample size must be at least one");
  const double lin = omega0 + omega1 * std::log(n);
  const double corr = correction == GvfCorrection::Corrected ? 2.0 * sigma_gvf * sigma_gvf : 0.0;
  return std::exp(2.0 * lin + corr);
}

AreaLevelModel::AreaLevelModel(AreaModelData data) : data_(std::move(data)) {
  const int M = data_.M;
  if (M < 1) throw std::invalid_argument("area model needs at least one area");
  if (data_.Z.rows() != M) throw std::invalid_argument("area covariates do not match the number of areas");
  const auto q = static_cast<int>(data_.Z.cols());
  Zc_ = data_.Z;
  if (q > 0) {
    Zc_.rowwise() -= Zc_.colwise().mean();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Zc_);
    if (qr.rank() < q) throw std::invalid_argument("area design is rank deficient");
  }
  for (const auto& o : data_.obs) {
    if (o.area < 0 || o.area >= M) throw std::invalid_argument("observation area out of range");
  }
  has_gvf_ = data_.likelihood == AreaLikelihood::Tsln || data_.likelihood == AreaLikelihood::Eln;
  if (data_.likelihood == AreaLikelihood::Beta) {
    if (static_cast<int>(data_.beta_lo.size()) != M || static_cast<int>(data_.beta_hi.size()) != M) {
      throw std::invalid_argument("beta bounds missing");
    }
    for (const auto& o : data_.obs) {
      if (!(o.variance > 0.0 && o.variance < 0.25)) throw std::invalid_argument("beta variance must lie in (0, 0.25)");
      if (!(o.value > 0.0 && o.value < 1.0)) throw std::invalid_argument("beta observation must lie in (0, 1)");
    }
  }
  for (const auto& o : data_.obs) {
    if (data_.likelihood == AreaLikelihood::Binomial) {
      if (o.trials < 1 || o.value < 0.0 || o.value > static_cast<double>(o.trials)) {
        throw std::invalid_argument("binomial count outside 0..n");
      }
      lchoose_.push_back(std::lgamma(static_cast<double>(o.trials) + 1.0) - std::lgamma(o.value + 1.0) -
                         std::lgamma(static_cast<double>(o.trials) - o.value + 1.0));
    } else {
      lchoose_.push_back(0.0);
    }
    if ((data_.likelihood == AreaLikelihood::Tsln || data_.likelihood == AreaLikelihood::Eln) && o.stable &&
        !(o.variance > 0.0)) {
      throw std::invalid_argument("stable area needs a positive sampling variance");
    }
    if (data_.likelihood == AreaLikelihood::Tsln && (!(o.meas_var > 0.0) || o.subset < 1)) {
      throw std::invalid_argument("measurement model needs a positive variance and subset size");
    }
  }
  if (data_.spatial) {
    if (data_.spatial->adjacency.size() != M) throw std::invalid_argument("adjacency does not match areas");
    kappa_ = compute_icar_scaling(data_.spatial->adjacency);
    if (data_.spatial->fixed_rho && !(*data_.spatial->fixed_rho >= 0.0 && *data_.spatial->fixed_rho <= 1.0)) {
      throw std::invalid_argument("fixed rho must lie in [0, 1]");
    }
  }
  if (data_.benchmark) {
    data_.benchmark->validate(M);
    if (static_cast<int>(data_.N.size()) != M) throw std::invalid_argument("benchmark needs population sizes");
    for (const auto& r : data_.benchmark->regions) {
      double total = 0.0;
      for (int i : r) total += static_cast<double>(data_.N[static_cast<std::size_t>(i)]);
      bench_total_.push_back(total);
    }
  }

  int k = 1 + q;
  at_.scale = k++;
  at_.effects = k;
  k += M;
  if (data_.spatial) {
    at_.s = k;
    k += M;
    if (!data_.spatial->fixed_rho) at_.rho = k++;
  }
  if (data_.likelihood == AreaLikelihood::Tsln) {
    at_.theta_bar = k;
    k += static_cast<int>(data_.obs.size());
  }
  if (has_gvf_) {
    at_.gvf = k;
    k += 3;
  }
  dim_ = static_cast<std::size_t>(k);
  mu_offset_ = dim_;
}

std::vector<std::string> AreaLevelModel::names() const {
  std::vector<std::string> out{"lambda0"};
  for (Eigen::Index c = 0; c < Zc_.cols(); ++c) out.push_back("lambda[" + std::to_string(c + 1) + "]");
  const int M = data_.M;
  if (data_.spatial) {
    out.push_back("sigma_delta");
    for (int i = 1; i <= M; ++i) out.push_back("v[" + std::to_string(i) + "]");
    for (int i = 1; i <= M; ++i) out.push_back("s[" + std::to_string(i) + "]");
    if (at_.rho >= 0) out.push_back("rho");
  } else {
    out.push_back("sigma_v");
    for (int i = 1; i <= M; ++i) out.push_back("v[" + std::to_string(i) + "]");
  }
  if (at_.theta_bar >= 0) {
    for (const auto& o : data_.obs) out.push_back("theta_bar[" + std::to_string(o.area + 1) + "]");
  }
  if (has_gvf_) {
    out.push_back("omega0");
    out.push_back("omega1");
    out.push_back("sigma_gvf");
  }
  for (int i = 1; i <= M; ++i) out.push_back("mu[" + std::to_string(i) + "]");
  return out;
}

Eigen::VectorXd AreaLevelModel::linear_predictor(const Eigen::VectorXd& q) const {
  const int M = data_.M;
  const auto nq = Zc_.cols();
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(M, q[at_.lambda0]);
  if (nq > 0) eta.noalias() += Zc_ * q.segment(at_.lambda, nq);
  const double sigma = std::exp(q[at_.scale]);
  if (data_.spatial) {
    const double rho = at_.rho >= 0 ? inv_logit(q[at_.rho]) : *data_.spatial->fixed_rho;
    eta += bym2_contribution(q.segment(at_.s, M), q.segment(at_.effects, M), rho, sigma, data_.spatial->adjacency,
                             kappa_)
               .delta;
  } else {
    eta += sigma * q.segment(at_.effects, M);
  }
  return eta;
}

Eigen::VectorXd AreaLevelModel::mean(const Eigen::VectorXd& eta) const {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = inv_logit(eta[i]);
    if (data_.likelihood == AreaLikelihood::Beta) {
      const auto k = static_cast<std::size_t>(i);
      mu[i] = data_.beta_lo[k] + (data_.beta_hi[k] - data_.beta_lo[k]) * p;
    } else {
      mu[i] = p;
    }
  }
  return mu;
}

double AreaLevelModel::log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
  const int M = data_.M;
  const auto nq = Zc_.cols();
  grad.setZero(static_cast<Eigen::Index>(dim_));
  double lp = 0.0;

  // Linking model.
  const double lambda0 = q[at_.lambda0];
  const double log_sigma = q[at_.scale];
  const double sigma = std::exp(log_sigma);
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(M, lambda0);
  if (nq > 0) eta.noalias() += Zc_ * q.segment(at_.lambda, nq);
  std::optional<Bym2Terms> bym2;
  double rho = 0.0;
  if (data_.spatial) {
    rho = at_.rho >= 0 ? inv_logit(q[at_.rho]) : *data_.spatial->fixed_rho;
    bym2 = bym2_contribution(q.segment(at_.s, M), q.segment(at_.effects, M), rho, sigma, data_.spatial->adjacency,
                             kappa_);
    eta += bym2->delta;
  } else {
    eta += sigma * q.segment(at_.effects, M);
  }
  Eigen::VectorXd g_eta = Eigen::VectorXd::Zero(M);

  // Joint variance function on log sqrt(gamma).
  double omega0 = 0.0, omega1 = 0.0, sg = 0.0;
  if (has_gvf_) {
    omega0 = q[at_.gvf];
    omega1 = q[at_.gvf + 1];
    sg = std::exp(q[at_.gvf + 2]);
    const double sg2 = sg * sg;
    for (const auto& o : data_.obs) {
      if (!o.stable) continue;
      const double target = 0.5 * std::log(o.variance);
      const double fit = omega0 + omega1 * o.log_n;
      const double r = target - fit;
      lp += normal_lpdf(target, fit, sg2);
      grad[at_.gvf] += r / sg2;
      grad[at_.gvf + 1] += r / sg2 * o.log_n;
      grad[at_.gvf + 2] += -1.0 + r * r / sg2;
    }
  }
  const bool corrected = data_.gvf == GvfCorrection::Corrected;

  for (std::size_t k = 0; k < data_.obs.size(); ++k) {
    const auto& o = data_.obs[k];
    const auto i = static_cast<Eigen::Index>(o.area);
    const double e = eta[i];
    switch (data_.likelihood) {
      case AreaLikelihood::Tsln:
      case AreaLikelihood::Eln: {
        double centre = o.value;
        if (data_.likelihood == AreaLikelihood::Tsln) {
          const auto tb = at_.theta_bar + static_cast<int>(k);
          centre = q[tb];
          const double v = o.meas_var;
          const double d = o.value - centre;
          lp += -0.5 * (kLog2Pi + std::log(v)) - (o.meas_ss / o.subset + d * d) / (2.0 * v);
          grad[tb] += d / v;
        }
        double gamma = o.variance;
        if (!o.stable) {
          gamma = std::exp(2.0 * (omega0 + omega1 * o.log_n) + (corrected ? 2.0 * sg * sg : 0.0));
        }
        const double r = centre - e;
        lp += normal_lpdf(centre, e, gamma);
        g_eta[i] += r / gamma;
        if (data_.likelihood == AreaLikelihood::Tsln) grad[at_.theta_bar + static_cast<int>(k)] -= r / gamma;
        if (!o.stable) {
          const double dlg = -0.5 + 0.5 * r * r / gamma;
          grad[at_.gvf] += 2.0 * dlg;
          grad[at_.gvf + 1] += 2.0 * dlg * o.log_n;
          if (corrected) grad[at_.gvf + 2] += 4.0 * sg * sg * dlg;
        }
        break;
      }
      case AreaLikelihood::Binomial: {
        const double n = static_cast<double>(o.trials);
        lp += o.value * e - n * softplus(e) + lchoose_[k];
        g_eta[i] += o.value - n * inv_logit(e);
        break;
      }
      case AreaLikelihood::Beta: {
        const auto a_idx = static_cast<std::size_t>(o.area);
        const double lo = data_.beta_lo[a_idx];
        const double width = data_.beta_hi[a_idx] - lo;
        const double p = inv_logit(e);
        const double mu = lo + width * p;
        const double psi = o.variance;
        const double phi = mu * (1.0 - mu) / psi - 1.0;
        const double a = mu * phi;
        const double b = (1.0 - mu) * phi;
        if (!(a > 0.0 && b > 0.0)) return -std::numeric_limits<double>::infinity();
        const double x = o.value;
        lp += std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) +
              (b - 1.0) * std::log1p(-x);
        const double dphi = (1.0 - 2.0 * mu) / psi;
        const double da = phi + mu * dphi;
        const double db = -phi + (1.0 - mu) * dphi;
        using boost::math::digamma;
        const double dmu = digamma(phi) * dphi - digamma(a) * da - digamma(b) * db + da * std::log(x) +
                           db * std::log1p(-x);
        g_eta[i] += dmu * width * p * (1.0 - p);
        break;
      }
    }
  }

  if (data_.benchmark) {
    const auto& bm = *data_.benchmark;
    const Eigen::VectorXd mu = mean(eta);
    for (std::size_t k = 0; k < bm.regions.size(); ++k) {
      double c = 0.0;
      for (int i : bm.regions[k]) c += static_cast<double>(data_.N[static_cast<std::size_t>(i)]) * mu[i];
      c /= bench_total_[k];
      const double sd = bm.epsilon * std::sqrt(bm.var[k]);
      const double r = c - bm.C_hat[k];
      lp += normal_lpdf(c, bm.C_hat[k], sd * sd);
      for (int i : bm.regions[k]) {
        double dmu = mu[i] * (1.0 - mu[i]);
        if (data_.likelihood == AreaLikelihood::Beta) {
          const auto a_idx = static_cast<std::size_t>(i);
          const double width = data_.beta_hi[a_idx] - data_.beta_lo[a_idx];
          const double p = (mu[i] - data_.beta_lo[a_idx]) / width;
          dmu = width * p * (1.0 - p);
        }
        g_eta[i] += -r / (sd * sd) * static_cast<double>(data_.N[static_cast<std::size_t>(i)]) / bench_total_[k] * dmu;
      }
    }
  }

  // Chain rule through the linking predictor.
  grad[at_.lambda0] += g_eta.sum();
  if (nq > 0) grad.segment(at_.lambda, nq) += Zc_.transpose() * g_eta;
  if (bym2) {
    grad.segment(at_.effects, M) += bym2->ddelta_dv.cwiseProduct(g_eta) + bym2->dprior_dv;
    grad.segment(at_.s, M) += bym2->ddelta_ds.cwiseProduct(g_eta) + bym2->dprior_ds;
    grad[at_.scale] += bym2->delta.dot(g_eta);
    lp += bym2->log_prior;
    if (at_.rho >= 0) {
      const auto& sp = *data_.spatial;
      grad[at_.rho] += bym2->ddelta_drho.dot(g_eta) * rho * (1.0 - rho);
      if (sp.rho_prior == RhoPrior::Beta) {
        lp += 3.05 * std::log(rho) + 1.65 * std::log1p(-rho);
        grad[at_.rho] += 3.05 * (1.0 - rho) - 1.65 * rho;
      } else {
        lp += std::log(rho) + std::log1p(-rho);
        grad[at_.rho] += 1.0 - 2.0 * rho;
      }
    }
  } else {
    const auto z = q.segment(at_.effects, M);
    grad.segment(at_.effects, M) += sigma * g_eta - z;
    grad[at_.scale] += sigma * z.dot(g_eta);
    lp += -0.5 * z.squaredNorm();
  }

  // Priors: intercept t(3, 0, 1), coefficients N(0, 2), scale half-normal (log scale with Jacobian).
  lp += -2.0 * std::log1p(lambda0 * lambda0 / 3.0);
  grad[at_.lambda0] += -4.0 * lambda0 / (3.0 + lambda0 * lambda0);
  if (nq > 0) {
    const auto lam = q.segment(at_.lambda, nq);
    lp += -lam.squaredNorm() / 8.0;
    grad.segment(at_.lambda, nq) -= lam / 4.0;
  }
  const double s2 = data_.sigma_prior_sd * data_.sigma_prior_sd;
  lp += -0.5 * sigma * sigma / s2 + log_sigma;
  grad[at_.scale] += -sigma * sigma / s2 + 1.0;
  if (has_gvf_) {
    // omega ~ N(0, 2); sigma_gvf ~ half-Cauchy(0, 2).
    lp += -(omega0 * omega0 + omega1 * omega1) / 8.0;
    grad[at_.gvf] -= omega0 / 4.0;
    grad[at_.gvf + 1] -= omega1 / 4.0;
    lp += -std::log1p(sg * sg / 4.0) + q[at_.gvf + 2];
    grad[at_.gvf + 2] += -(sg * sg / 2.0) / (1.0 + sg * sg / 4.0) + 1.0;
  }
  return lp;
}

Eigen::VectorXd AreaLevelModel::constrain(const Eigen::VectorXd& q) const {
  const int M = data_.M;
  Eigen::VectorXd out(static_cast<Eigen::Index>(dim_) + M);
  out.head(static_cast<Eigen::Index>(dim_)) = q;
  const double sigma = std::exp(q[at_.scale]);
  out[at_.scale] = sigma;
  if (data_.spatial) {
    if (at_.rho >= 0) out[at_.rho] = inv_logit(q[at_.rho]);
  } else {
    out.segment(at_.effects, M) *= sigma;
  }
  if (has_gvf_) out[at_.gvf + 2] = std::exp(q[at_.gvf + 2]);
  out.tail(M) = mean(linear_predictor(q));
  return out;
}

Eigen::VectorXd AreaLevelModel::init_center() const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  if (data_.obs.empty()) return c;
  double level = 0.0;
  if (data_.likelihood == AreaLikelihood::Binomial) {
    double y = 0.0, n = 0.0;
    for (const auto& o : data_.obs) {
      y += o.value;
      n += static_cast<double>(o.trials);
    }
    level = logit((y + 0.5) / (n + 1.0));
  } else {
    for (const auto& o : data_.obs) {
      if (data_.likelihood == AreaLikelihood::Beta) {
        const auto i = static_cast<std::size_t>(o.area);
        const double p = (o.value - data_.beta_lo[i]) / (data_.beta_hi[i] - data_.beta_lo[i]);
        level += logit(std::clamp(p, 0.01, 0.99));
      } else {
        level += o.value;
      }
    }
    level /= static_cast<double>(data_.obs.size());
  }
  c[at_.lambda0] = std::clamp(level, -6.0, 6.0);
  if (at_.theta_bar >= 0) {
    for (std::size_t k = 0; k < data_.obs.size(); ++k) c[at_.theta_bar + static_cast<int>(k)] = data_.obs[k].value;
  }
  return c;
}

void summarize_fit(AreaFit& fit) {
  const auto M = fit.mu_draws.size();
  fit.median.assign(M, 0.0);
  fit.hdi.assign(M, {});
  fit.max_rhat = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    const auto& d = fit.mu_draws[i];
    fit.median[i] = median(d);
    fit.hdi[i] = hdi(d, 0.95);
    double r = std::numeric_limits<double>::infinity();
    if (fit.chains >= 2) {
      const std::size_t per = d.size() / static_cast<std::size_t>(fit.chains);
      std::vector<std::vector<double>> ch(static_cast<std::size_t>(fit.chains));
      for (std::size_t c = 0; c < ch.size(); ++c) {
        ch[c].assign(d.begin() + static_cast<long>(c * per), d.begin() + static_cast<long>((c + 1) * per));
      }
      try {
        r = split_rhat(ch);
      } catch (const std::exception&) {
      }
    }
    fit.max_rhat = std::max(fit.max_rhat, r);
  }
  fit.converged = fit.max_rhat <= kRhatThreshold;
}

AreaFit area_fit_from_posterior(std::string model, PosteriorMatrix posterior, std::size_t mu_offset, int M,
                                std::vector<bool> sampled, std::vector<bool> stable) {
  AreaFit fit;
  fit.model = std::move(model);
  fit.chains = posterior.chains();
  fit.mu_draws.resize(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) {
    fit.mu_draws[static_cast<std::size_t>(i)] = posterior.pooled(mu_offset + static_cast<std::size_t>(i));
  }
  fit.sampled = std::move(sampled);
  fit.stable = std::move(stable);
  fit.divergences = posterior.total_divergences();
  fit.divergence_flag = posterior.divergence_flag();
  fit.posterior = std::move(posterior);
  summarize_fit(fit);
  return fit;
}

void write_fit_csv(const std::filesystem::path& path, const AreaFit& fit) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "area_id,median,hdi_lo,hdi_hi,sampled,stable\n";
  for (std::size_t i = 0; i < fit.mu_draws.size(); ++i) {
    out << i + 1 << ',' << csv::exact(fit.median[i]) << ',' << csv::exact(fit.hdi[i].lo) << ','
        << csv::exact(fit.hdi[i].hi) << ',' << (fit.sampled[i] ? 1 : 0) << ',' << (fit.stable[i] ? 1 : 0) << '\n';
  }
}

}  // namespace tsln
