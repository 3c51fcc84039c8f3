#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tsln {

/// Undirected neighbourhood graph over areas 0..M-1.
class Adjacency {
 public:
  Adjacency() = default;
  /// Edges are 0-based pairs; duplicates and either orientation are accepted.
  Adjacency(int areas, const std::vector<std::pair<int, int>>& edges);

  int size() const { return areas_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& neighbours(int i) const { return nbrs_.at(static_cast<std::size_t>(i)); }
  bool isolated(int i) const { return neighbours(i).empty(); }
  /// Connected components with at least two nodes.
  const std::vector<std::vector<int>>& components() const { return components_; }
  /// Graph Laplacian D - W.
  Eigen::MatrixXd laplacian() const;

 private:
  int areas_ = 0;
  std::vector<std::pair<int, int>> edges_;  // i < k, sorted
  std::vector<std::vector<int>> nbrs_;
  std::vector<std::vector<int>> components_;
};

/// Edge list `area_a,area_b` with 1-based ids.
Adjacency read_adjacency_csv(const std::filesystem::path& path, int areas);

/// Geometric mean of the diagonal of the Laplacian's generalized inverse over
/// non-isolated areas.  Each connected component is inverted on its own
/// sum-to-zero subspace.
double compute_icar_scaling(const Adjacency& adjacency);

struct Bym2Terms {
  Eigen::VectorXd delta;
  /// ICAR, soft sum-to-zero and standard-normal terms for s and v.
  double log_prior = 0.0;
  Eigen::VectorXd dprior_ds;
  Eigen::VectorXd dprior_dv;
  /// d delta / d s_i and d delta / d v_i (diagonal).
  Eigen::VectorXd ddelta_ds;
  Eigen::VectorXd ddelta_dv;
  /// d delta / d rho, zero at the endpoints.
  Eigen::VectorXd ddelta_drho;
};

/// delta_i = sigma (s_i sqrt(rho / kappa) + v_i sqrt(1 - rho)); isolated areas
/// drop the structured part and get delta_i = sigma v_i with s_i ~ N(0, 1).
Bym2Terms bym2_contribution(const Eigen::VectorXd& s, const Eigen::VectorXd& v, double rho, double sigma_delta,
                            const Adjacency& adjacency, double kappa);

}  // namespace tsln
