#pragma once

#include <tirso/dense.hpp>
#include <tirso/group.hpp>

#include <vector>

namespace tirso {

/// Directed edge source -> target: `source` VAR-causes `target`.
struct Edge {
  Index source = 0;
  Index target = 0;
  double weight = 0;
};

struct CausalityGraph {
  Index n_nodes = 0;
  std::vector<Edge> edges;
  /// ||a_{n,n}|| per node; never part of `edges`.
  VectorXd self_weights;
};

/// Edge src -> n iff src != n and ||a_{n,src}|| >= threshold with a nonzero
/// group, so threshold 0 returns the support of the estimate.
template <typename Derived>
CausalityGraph graph_snapshot(const Eigen::MatrixBase<Derived>& coeffs, GroupLayout layout, double threshold) {
  require(threshold >= 0, "graph threshold must be non-negative");
  require(coeffs.rows() == layout.n_nodes && coeffs.cols() == layout.dim(), "coefficient matrix must be N x NP");
  const MatrixXd norms = group_norm_matrix(coeffs, layout).template cast<double>();
  CausalityGraph out;
  out.n_nodes = layout.n_nodes;
  out.self_weights = norms.diagonal();
  for (Index target = 0; target < layout.n_nodes; ++target)
    for (Index source = 0; source < layout.n_nodes; ++source)
      if (source != target && norms(target, source) >= threshold && norms(target, source) > 0) out.edges.push_back({source, target, norms(target, source)});
  return out;
}

}  // namespace tirso
