#include "tsln/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tsln/csv.hpp"

namespace tsln {

Adjacency::Adjacency(int areas, const std::vector<std::pair<int, int>>& edges) : areas_(areas) {
  if (areas < 1) throw std::invalid_argument("adjacency needs at least one area");
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= areas || b >= areas) throw std::invalid_argument("adjacency edge out of range");
    if (a == b) throw std::invalid_argument("adjacency must have a zero diagonal");
    edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  nbrs_.assign(static_cast<std::size_t>(areas), {});
  for (auto [a, b] : edges_) {
    nbrs_[static_cast<std::size_t>(a)].push_back(b);
    nbrs_[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<int> label(static_cast<std::size_t>(areas), -1);
  for (int start = 0; start < areas; ++start) {
    if (label[static_cast<std::size_t>(start)] >= 0 || isolated(start)) continue;
    std::vector<int> comp{start};
    label[static_cast<std::size_t>(start)] = static_cast<int>(components_.size());
    for (std::size_t k = 0; k < comp.size(); ++k) {
      for (int nb : nbrs_[static_cast<std::size_t>(comp[k])]) {
        if (label[static_cast<std::size_t>(nb)] < 0) {
          label[static_cast<std::size_t>(nb)] = label[static_cast<std::size_t>(start)];
          comp.push_back(nb);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    components_.push_back(std::move(comp));
  }
}

Eigen::MatrixXd Adjacency::laplacian() const {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(areas_, areas_);
  for (auto [a, b] : edges_) {
    L(a, b) -= 1.0;
    L(b, a) -= 1.0;
    L(a, a) += 1.0;
    L(b, b) += 1.0;
  }
  return L;
}

Adjacency read_adjacency_csv(const std::filesystem::path& path, int areas) {
  const auto t = csv::read(path);
  csv::require_header(t, {"area_a", "area_b"}, path);
  std::vector<std::pair<int, int>> edges;
  for (const auto& row : t.rows) {
    edges.emplace_back(static_cast<int>(csv::to_long(row[0])) - 1, static_cast<int>(csv::to_long(row[1])) - 1);
  }
  return Adjacency(areas, edges);
}

double compute_icar_scaling(const Adjacency& adjacency) {
  if (adjacency.edges().empty()) throw std::invalid_argument("empty graph");
  const Eigen::MatrixXd L = adjacency.laplacian();
  double log_sum = 0.0;
  int count = 0;
  for (const auto& comp : adjacency.components()) {
    const auto n = static_cast<Eigen::Index>(comp.size());
    Eigen::MatrixXd Lc(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < n; ++k) Lc(i, k) = L(comp[static_cast<std::size_t>(i)], comp[static_cast<std::size_t>(k)]);
    }
    // (L + J/n)^-1 - J/n is the generalized inverse on the sum-to-zero subspace.
    const Eigen::MatrixXd J = Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    const Eigen::MatrixXd G = (Lc + J).ldlt().solve(Eigen::MatrixXd::Identity(n, n)) - J;
    for (Eigen::Index i = 0; i < n; ++i) {
      log_sum += std::log(G(i, i));
      ++count;
    }
  }
  return std::exp(log_sum / count);
}

Bym2Terms bym2_contribution(const Eigen::VectorXd& s, const Eigen::VectorXd& v, double rho, double sigma_delta,
                            const Adjacency& adjacency, double kappa) {
  const Eigen::Index M = adjacency.size();
  if (s.size() != M || v.size() != M) throw std::invalid_argument("BYM2 effects do not match the graph");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
  if (!(kappa > 0.0)) throw std::invalid_argument("scaling factor must be positive");
  Bym2Terms t;
  const double a = std::sqrt(rho / kappa);
  const double b = std::sqrt(1.0 - rho);
  const bool interior = rho > 0.0 && rho < 1.0;
  t.delta.resize(M);
  t.ddelta_ds.resize(M);
  t.ddelta_dv.resize(M);
  t.ddelta_drho = Eigen::VectorXd::Zero(M);
  t.dprior_ds = Eigen::VectorXd::Zero(M);
  t.dprior_dv = -v;
  t.log_prior = -0.5 * v.squaredNorm();
  for (Eigen::Index i = 0; i < M; ++i) {
    if (adjacency.isolated(static_cast<int>(i))) {
      t.delta[i] = sigma_delta * v[i];
      t.ddelta_ds[i] = 0.0;
      t.ddelta_dv[i] = sigma_delta;
      t.log_prior += -0.5 * s[i] * s[i];
      t.dprior_ds[i] = -s[i];
    } else {
      t.delta[i] = sigma_delta * (a * s[i] + b * v[i]);
      t.ddelta_ds[i] = sigma_delta * a;
      t.ddelta_dv[i] = sigma_delta * b;
      if (interior) {
        t.ddelta_drho[i] = sigma_delta * (s[i] / (2.0 * std::sqrt(rho * kappa)) - v[i] / (2.0 * b));
      }
    }
  }
  for (auto [i, k] : adjacency.edges()) {
    const double d = s[i] - s[k];
    t.log_prior += -0.5 * d * d;
    t.dprior_ds[i] -= d;
    t.dprior_ds[k] += d;
  }
  for (const auto& comp : adjacency.components()) {
    double total = 0.0;
    for (int i : comp) total += s[i];
    const double sd = 0.001 * static_cast<double>(comp.size());
    t.log_prior += -0.5 * (total / sd) * (total / sd);
    for (int i : comp) t.dprior_ds[i] -= total / (sd * sd);
  }
  return t;
}

}  // namespace tsln
