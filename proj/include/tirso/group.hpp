#pragma once

#include <tirso/dense.hpp>

#include <cmath>
#include <vector>

namespace tirso {

/// Coefficient vector a_n of one node, partitioned into N groups a_{n,src}
/// of P lags each.
template <typename Scalar>
class NodeEstimate {
 public:
  NodeEstimate(GroupLayout layout, Index node) : layout_(layout), node_(node), values_(Vec<Scalar>::Zero(layout.dim())) {}
  NodeEstimate(GroupLayout layout, Index node, Vec<Scalar> values)
      : layout_(layout), node_(node), values_(std::move(values)) {
    require(values_.size() == layout_.dim(), "node estimate length must be N * P");
  }

  static NodeEstimate from_groups(GroupLayout layout, Index node, const std::vector<Vec<Scalar>>& groups) {
    require(static_cast<Index>(groups.size()) == layout.n_nodes, "need one group per node");
    NodeEstimate out(layout, node);
    for (Index g = 0; g < layout.n_nodes; ++g) {
      require(groups[static_cast<std::size_t>(g)].size() == layout.order, "group length must equal the VAR order");
      out.group(g) = groups[static_cast<std::size_t>(g)];
    }
    return out;
  }

  std::vector<Vec<Scalar>> groups() const {
    std::vector<Vec<Scalar>> out;
    out.reserve(static_cast<std::size_t>(layout_.n_nodes));
    for (Index g = 0; g < layout_.n_nodes; ++g) out.emplace_back(group(g));
    return out;
  }

  auto group(Index source) { return values_.segment(layout_.offset(source), layout_.order); }
  auto group(Index source) const { return values_.segment(layout_.offset(source), layout_.order); }
  Scalar group_norm(Index source) const { return group(source).norm(); }

  GroupLayout layout() const noexcept { return layout_; }
  Index node() const noexcept { return node_; }
  const Vec<Scalar>& values() const noexcept { return values_; }
  Vec<Scalar>& values() noexcept { return values_; }

 private:
  GroupLayout layout_;
  Index node_ = 0;
  Vec<Scalar> values_;
};

/// Multidimensional shrinkage-thresholding applied groupwise.
///
/// Non-self groups are scaled by [1 - shrink(g) / ||a_f,g||]_+ and become
/// exactly zero when ||a_f,g|| <= shrink(g) (no division happens in that
/// branch). The self group passes through untouched.
template <typename Derived, typename ShrinkDerived>
Vec<typename Derived::Scalar> group_shrink(const Eigen::MatrixBase<Derived>& forward, GroupLayout layout,
                                           const Eigen::MatrixBase<ShrinkDerived>& shrink, Index self) {
  using Scalar = typename Derived::Scalar;
  require(forward.size() == layout.dim(), "group_shrink: vector length must be N * P");
  require(shrink.size() == layout.n_nodes, "group_shrink: need one shrink amount per group");
  Vec<Scalar> out = forward;
  for (Index g = 0; g < layout.n_nodes; ++g) {
    if (g == self) continue;
    auto seg = out.segment(layout.offset(g), layout.order);
    const Scalar norm = seg.norm();
    const Scalar amount = static_cast<Scalar>(shrink(g));
    if (norm <= amount)
      seg.setZero();
    else
      seg *= Scalar(1) - amount / norm;
  }
  return out;
}

/// sum over src != self of weights(src) * ||a_src||.
template <typename Derived, typename WeightDerived>
typename Derived::Scalar group_penalty(const Eigen::MatrixBase<Derived>& a, GroupLayout layout,
                                       const Eigen::MatrixBase<WeightDerived>& weights, Index self) {
  using Scalar = typename Derived::Scalar;
  Scalar total = 0;
  for (Index g = 0; g < layout.n_nodes; ++g)
    if (g != self && weights(g) != 0) total += static_cast<Scalar>(weights(g)) * a.segment(layout.offset(g), layout.order).norm();
  return total;
}

/// N x N matrix of ||a_{n,src}||_2 for a coefficient matrix whose row n is a_n.
template <typename Derived>
Mat<typename Derived::Scalar> group_norm_matrix(const Eigen::MatrixBase<Derived>& coeffs, GroupLayout layout) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(layout.n_nodes, layout.n_nodes);
  for (Index n = 0; n < coeffs.rows(); ++n)
    for (Index g = 0; g < layout.n_nodes; ++g) out(n, g) = coeffs.row(n).segment(layout.offset(g), layout.order).norm();
  return out;
}

/// Count of off-diagonal groups that are exactly zero.
template <typename Derived>
Index count_zero_groups(const Eigen::MatrixBase<Derived>& coeffs, GroupLayout layout) {
  Index zeros = 0;
  for (Index n = 0; n < coeffs.rows(); ++n)
    for (Index g = 0; g < layout.n_nodes; ++g)
      if (g != n && coeffs.row(n).segment(layout.offset(g), layout.order).isZero(0)) ++zeros;
  return zeros;
}

}  // namespace tirso
