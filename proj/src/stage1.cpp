#include "tsln/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tsln/csv.hpp"
#include "tsln/diagnostics.hpp"
#include "tsln/rng.hpp"

namespace tsln {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Stage1Spec Stage1Spec::smoothing_variant(double sigma_e, bool area_effect) {
  if (!(sigma_e > 0.0)) throw std::invalid_argument("fixed sigma_e must be positive");
  Stage1Spec s;
  s.survey_covariate = false;
  s.census_covariate = false;
  s.area_covariate = false;
  s.include_area_effect = area_effect;
  s.fixed_sigma_e = sigma_e;
  return s;
}

Stage1Spec Stage1Spec::census_only() {
  Stage1Spec s;
  s.survey_covariate = false;
  return s;
}

Stage1Design::Stage1Design(const SurveySample& sample, const AreaTable& areas, const Stage1Spec& spec)
    : spec_(spec) {
  if (spec.survey_covariate) {
    names_.push_back("x_survey2");
    names_.push_back("x_survey3");
  }
  if (spec.census_covariate) names_.push_back("x_census");
  if (spec.area_covariate) names_.push_back("Z");
  const auto K = static_cast<Eigen::Index>(names_.size());
  const auto n = static_cast<Eigen::Index>(sample.size());
  if (n == 0) throw std::invalid_argument("empty sample");
  if (areas.size() != static_cast<std::size_t>(sample.total_areas())) {
    throw std::invalid_argument("area table does not match sample");
  }
  center_ = Eigen::RowVectorXd::Zero(K);
  X_.resize(n, K);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = sample.records()[static_cast<std::size_t>(j)];
    X_.row(j) = raw_row(r.x_survey, r.x_census, areas.Z.at(static_cast<std::size_t>(r.area_id - 1)));
  }
  if (K > 0) {
    center_ = X_.colwise().mean();
    X_.rowwise() -= center_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X_);
    if (qr.rank() < K) throw std::invalid_argument("stage-1 design is rank deficient");
  }
}

Eigen::RowVectorXd Stage1Design::raw_row(int x_survey, double x_census, double Z) const {
  Eigen::RowVectorXd r(center_.size());
  Eigen::Index k = 0;
  if (spec_.survey_covariate) {
    r[k++] = x_survey == 2 ? 1.0 : 0.0;
    r[k++] = x_survey == 3 ? 1.0 : 0.0;
  }
  if (spec_.census_covariate) r[k++] = x_census;
  if (spec_.area_covariate) r[k++] = Z;
  return r;
}

Eigen::RowVectorXd Stage1Design::row(int x_survey, double x_census, double Z) const {
  return raw_row(x_survey, x_census, Z) - center_;
}

Stage1Model::Stage1Model(const SurveySample& sample, const AreaTable& areas, Stage1Spec spec)
    : spec_(spec), design_(sample, areas, spec), area_ids_(sample.sampled_area_ids()) {
  if (spec_.fixed_sigma_e && !(*spec_.fixed_sigma_e > 0.0)) {
    throw std::invalid_argument("fixed sigma_e must be positive");
  }
  const auto n = sample.size();
  y_.resize(static_cast<Eigen::Index>(n));
  record_area_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& r = sample.records()[j];
    y_[static_cast<Eigen::Index>(j)] = r.y;
    record_area_[j] = sample.sampled_position(r.area_id);
  }
  const auto w = sample_scaled_weights(sample);
  w_ = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  dim_ = 1 + static_cast<std::size_t>(design_.columns());
  if (spec_.include_area_effect) dim_ += 1 + area_ids_.size();
  if (spec_.fixed_sigma_e) dim_ += n;
}

int Stage1Model::error_offset() const {
  return spec_.include_area_effect ? effect_offset() + static_cast<int>(area_ids_.size()) : 1 + design_.columns();
}

std::vector<std::string> Stage1Model::names() const {
  std::vector<std::string> out{"intercept"};
  for (const auto& c : design_.column_names()) out.push_back("beta[" + c + "]");
  if (spec_.include_area_effect) {
    out.push_back("sigma_area");
    for (int a : area_ids_) out.push_back("e[" + std::to_string(a) + "]");
  }
  if (spec_.fixed_sigma_e) {
    for (Eigen::Index j = 0; j < y_.size(); ++j) out.push_back("eps[" + std::to_string(j + 1) + "]");
  }
  return out;
}

double Stage1Model::log_density(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
  const int K = design_.columns();
  const auto n = y_.size();
  const auto m = static_cast<Eigen::Index>(area_ids_.size());
  grad.setZero(static_cast<Eigen::Index>(dim_));

  const double b0 = q[0];
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, b0);
  if (K > 0) eta.noalias() += design_.matrix() * q.segment(1, K);
  double sigma = 0.0;
  if (spec_.include_area_effect) {
    sigma = std::exp(q[scale_offset()]);
    const auto z = q.segment(effect_offset(), m);
    for (Eigen::Index j = 0; j < n; ++j) eta[j] += sigma * z[record_area_[static_cast<std::size_t>(j)]];
  }
  const double sf = spec_.fixed_sigma_e.value_or(0.0);
  if (spec_.fixed_sigma_e) eta += sf * q.segment(error_offset(), n);

  double lp = 0.0;
  Eigen::VectorXd r(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double e = eta[j];
    if (!std::isfinite(e)) throw std::domain_error("non-finite linear predictor");
    lp += w_[j] * (y_[j] * e - softplus(e));
    r[j] = w_[j] * (y_[j] - inv_logit(e));
  }

  grad[0] = r.sum();
  if (K > 0) grad.segment(1, K) = design_.matrix().transpose() * r;

  // Intercept ~ t(3, 0, 1); coefficients ~ N(0, 2).
  lp += -2.0 * std::log1p(b0 * b0 / 3.0);
  grad[0] += -4.0 * b0 / (3.0 + b0 * b0);
  if (K > 0) {
    const auto beta = q.segment(1, K);
    lp += -beta.squaredNorm() / 8.0;
    grad.segment(1, K) -= beta / 4.0;
  }

  if (spec_.include_area_effect) {
    const auto z = q.segment(effect_offset(), m);
    Eigen::VectorXd area_r = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < n; ++j) area_r[record_area_[static_cast<std::size_t>(j)]] += r[j];
    grad.segment(effect_offset(), m) = sigma * area_r - z;
    // sigma ~ half-N(0, 1) on the log scale, with Jacobian.
    grad[scale_offset()] = sigma * z.dot(area_r) - sigma * sigma + 1.0;
    lp += -0.5 * z.squaredNorm() - 0.5 * sigma * sigma + q[scale_offset()];
  }
  if (spec_.fixed_sigma_e) {
    const auto xi = q.segment(error_offset(), n);
    grad.segment(error_offset(), n) = sf * r - xi;
    lp += -0.5 * xi.squaredNorm();
  }
  return lp;
}

Eigen::VectorXd Stage1Model::constrain(const Eigen::VectorXd& q) const {
  Eigen::VectorXd out = q;
  if (spec_.include_area_effect) {
    const double sigma = std::exp(q[scale_offset()]);
    out[scale_offset()] = sigma;
    out.segment(effect_offset(), static_cast<Eigen::Index>(area_ids_.size())) *= sigma;
  }
  if (spec_.fixed_sigma_e) out.segment(error_offset(), y_.size()) *= *spec_.fixed_sigma_e;
  return out;
}

Eigen::VectorXd Stage1Model::linear_predictor(Eigen::Ref<const Eigen::VectorXd> draw) const {
  const int K = design_.columns();
  const auto n = y_.size();
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, draw[0]);
  if (K > 0) eta.noalias() += design_.matrix() * draw.segment(1, K);
  if (spec_.include_area_effect) {
    for (Eigen::Index j = 0; j < n; ++j) {
      eta[j] += draw[effect_offset() + record_area_[static_cast<std::size_t>(j)]];
    }
  }
  if (spec_.fixed_sigma_e) eta += draw.segment(error_offset(), n);
  return eta;
}

const S1Area* S1Summaries::find(int area_id) const {
  auto it = std::lower_bound(areas.begin(), areas.end(), area_id,
                             [](const S1Area& a, int id) { return a.area_id < id; });
  return it != areas.end() && it->area_id == area_id ? &*it : nullptr;
}

S1Summaries build_s1_estimates(const Eigen::MatrixXd& p_draws, const SurveySample& sample, const AreaTable& areas,
                               std::uint64_t subset_seed, std::optional<int> subset_size) {
  if (p_draws.cols() != static_cast<Eigen::Index>(sample.size())) {
    throw std::invalid_argument("probability draws do not match the sample");
  }
  const auto T = static_cast<int>(p_draws.rows());
  if (T < 2) throw std::invalid_argument("need at least two posterior draws");
  const int k = subset_size.value_or(std::max(1, T / 2));
  if (k < 1 || k > T) throw std::invalid_argument("subset size must lie in 1..T");

  std::vector<int> order(static_cast<std::size_t>(T));
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(subset_seed, {streams::subset});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());

  const auto w_all = area_normalized_weights(sample);
  S1Summaries out;
  for (int a : sample.sampled_area_ids()) {
    const auto& idx = sample.area_records(a);
    const std::size_t n = idx.size();
    if (n < 2) {
      out.warnings.push_back("area " + std::to_string(a) + " excluded from S1 estimates: single record");
      continue;
    }
    std::vector<int> y(n);
    std::vector<double> w(n);
    for (std::size_t s = 0; s < n; ++s) {
      y[s] = sample.records()[idx[s]].y;
      w[s] = w_all[idx[s]];
    }
    const long N = areas.population(a);
    S1Area area;
    area.area_id = a;
    area.n = n;
    area.mu_direct = hajek_estimate(y, w);
    area.psi_direct = hajek_variance(y, w, area.mu_direct, N);
    area.mu.resize(static_cast<std::size_t>(T));
    area.psi.resize(static_cast<std::size_t>(T));
    area.theta.resize(static_cast<std::size_t>(T));
    area.gamma.resize(static_cast<std::size_t>(T));
    area.bias.resize(static_cast<std::size_t>(T));
    std::vector<double> resid(n);
    const double nd = static_cast<double>(n);
    for (int t = 0; t < T; ++t) {
      double mu = 0.0;
      double b = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double p = p_draws(t, static_cast<Eigen::Index>(idx[s]));
        mu += w[s] * p;
        resid[s] = p - y[s];
        b += w[s] * resid[s];
      }
      const auto tt = static_cast<std::size_t>(t);
      area.mu[tt] = mu / nd;
      area.bias[tt] = b / nd;
      area.psi[tt] = area.psi_direct + weighted_residual_variance(resid, w, N);
      const auto le = empirical_logit(area.mu[tt], area.psi[tt]);
      area.theta[tt] = le.theta;
      area.gamma[tt] = le.gamma;
    }
    area.gamma_bar = mean(area.gamma);
    area.var_theta = variance(area.theta);
    area.theta_subset.reserve(static_cast<std::size_t>(k));
    for (int t : order) area.theta_subset.push_back(area.theta[static_cast<std::size_t>(t)]);
    out.areas.push_back(std::move(area));
  }
  return out;
}

double alc(const std::vector<double>& theta_s1_median, const std::vector<double>& theta_direct,
           const std::vector<double>& psi_direct) {
  const std::size_t m = theta_direct.size();
  if (theta_s1_median.size() != m || psi_direct.size() != m) throw std::invalid_argument("ALC inputs differ in length");
  if (m < 3) throw std::invalid_argument("ALC needs at least three stable areas");
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(psi_direct[i] > 0.0)) throw std::invalid_argument("ALC weights need positive sampling variances");
    const double w = 1.0 / psi_direct[i];
    sw += w;
    sx += w * theta_direct[i];
    sy += w * theta_s1_median[i];
  }
  const double xbar = sx / sw;
  const double ybar = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = 1.0 / psi_direct[i];
    sxx += w * (theta_direct[i] - xbar) * (theta_direct[i] - xbar);
    sxy += w * (theta_direct[i] - xbar) * (theta_s1_median[i] - ybar);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("no variation in direct estimates");
  return sxy / sxx;
}

std::vector<double> smoothing_ratio(const Eigen::MatrixXd& p_draws, const SurveySample& sample,
                                    const std::vector<double>& w_area, double overall) {
  if (p_draws.cols() != static_cast<Eigen::Index>(sample.size()) || w_area.size() != sample.size()) {
    throw std::invalid_argument("smoothing ratio inputs do not match the sample");
  }
  const auto& recs = sample.records();
  auto area_sum = [&](auto&& fitted) {
    double total = 0.0;
    for (int a : sample.sampled_area_ids()) {
      const auto& idx = sample.area_records(a);
      double s = 0.0;
      for (auto j : idx) s += w_area[j] * (recs[j].y - fitted(j));
      total += std::abs(s / static_cast<double>(idx.size()));
    }
    return total;
  };
  const double den = area_sum([&](std::size_t) { return overall; });
  if (!(den > 0.0)) throw std::invalid_argument("degenerate sample");
  std::vector<double> sr(static_cast<std::size_t>(p_draws.rows()));
  for (Eigen::Index t = 0; t < p_draws.rows(); ++t) {
    const double num = area_sum([&](std::size_t j) { return p_draws(t, static_cast<Eigen::Index>(j)); });
    sr[static_cast<std::size_t>(t)] = 1.0 - num / den;
  }
  return sr;
}

double stage1_alc(const S1Summaries& s1, const DirectEstimates& direct) {
  std::vector<double> ys, xs, ps;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    if (!direct.stable[i]) continue;
    const auto* a = s1.find(direct.area_ids[i]);
    if (a == nullptr || !(direct.psi[i] > 0.0)) continue;
    ys.push_back(median(a->theta));
    xs.push_back(direct.theta[i]);
    ps.push_back(direct.psi[i]);
  }
  if (xs.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  try {
    return alc(ys, xs, ps);
  } catch (const std::invalid_argument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

Stage1Fit fit_stage1(const SurveySample& sample, const AreaTable& areas, const Stage1Spec& spec,
                     const SamplerConfig& sampler, std::optional<int> subset_size) {
  Stage1Model model(sample, areas, spec);
  require_gradients(model, sampler.seed);
  Stage1Fit fit;
  fit.posterior = tsln::sample(model, sampler);
  const int C = fit.posterior.chains();
  const int D = fit.posterior.draws();
  const auto n = static_cast<Eigen::Index>(sample.size());
  fit.p_draws.resize(static_cast<Eigen::Index>(C) * D, n);
  constexpr double kEdge = 1e-12;
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < D; ++t) {
      const auto eta = model.linear_predictor(fit.posterior.row(c, t));
      const auto row = static_cast<Eigen::Index>(c) * D + t;
      for (Eigen::Index j = 0; j < n; ++j) fit.p_draws(row, j) = std::clamp(inv_logit(eta[j]), kEdge, 1.0 - kEdge);
    }
  }
  fit.summaries = build_s1_estimates(fit.p_draws, sample, areas, stream_seed(sampler.seed, {streams::subset}),
                                     subset_size);
  fit.summaries.chains = C;

  fit.max_rhat = 0.0;
  for (const auto& a : fit.summaries.areas) {
    std::vector<std::vector<double>> chains(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
      chains[static_cast<std::size_t>(c)].assign(a.mu.begin() + static_cast<long>(c) * D,
                                                  a.mu.begin() + static_cast<long>(c + 1) * D);
    }
    double r = std::numeric_limits<double>::infinity();
    if (C >= 2) {
      try {
        r = split_rhat(chains);
      } catch (const std::exception&) {
      }
    }
    fit.max_rhat = std::max(fit.max_rhat, r);
  }
  fit.converged = fit.max_rhat <= kRhatThreshold;

  const auto direct = compute_direct_estimates(sample, areas);
  fit.alc = stage1_alc(fit.summaries, direct);
  const auto sr = smoothing_ratio(fit.p_draws, sample, area_normalized_weights(sample), overall_prevalence(sample));
  fit.sr_median = median(sr);
  return fit;
}

void write_s1_draws_csv(const std::filesystem::path& path, const S1Summaries& s1) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "area_id,draw,mu,psi,theta,gamma,bias\n";
  for (const auto& a : s1.areas) {
    for (std::size_t t = 0; t < a.mu.size(); ++t) {
      out << a.area_id << ',' << t + 1 << ',' << csv::exact(a.mu[t]) << ',' << csv::exact(a.psi[t]) << ','
          << csv::exact(a.theta[t]) << ',' << csv::exact(a.gamma[t]) << ',' << csv::exact(a.bias[t]) << '\n';
    }
  }
}

void write_s1_summary_csv(const std::filesystem::path& path, const S1Summaries& s1) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "area_id,n,mu_direct,psi_direct,theta_median,gamma_bar,var_theta\n";
  for (const auto& a : s1.areas) {
    out << a.area_id << ',' << a.n << ',' << csv::exact(a.mu_direct) << ',' << csv::exact(a.psi_direct) << ','
        << csv::exact(median(a.theta)) << ',' << csv::exact(a.gamma_bar) << ',' << csv::exact(a.var_theta) << '\n';
  }
}

}  // namespace tsln
