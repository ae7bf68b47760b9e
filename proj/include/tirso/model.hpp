#pragma once

// Ground-truth generation: random causality graphs, stable VAR coefficient
// tensors and synthetic (stationary, smooth-transition, drifting) series.

#include <tirso/dense.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace tirso {

/// Edge-support pattern. entries(n, src) is true iff src -> n may carry a
/// nonzero coefficient group. Self entries are always true.
class AdjacencyMask {
 public:
  AdjacencyMask() = default;
  explicit AdjacencyMask(BoolMat entries) : entries_(std::move(entries)) {
    require(entries_.rows() == entries_.cols(), "adjacency mask must be square");
    require(entries_.rows() >= 1, "adjacency mask needs at least one node");
    entries_.diagonal().setConstant(true);
  }

  static AdjacencyMask self_loops_only(Index n) {
    BoolMat e = BoolMat::Constant(n, n, false);
    return AdjacencyMask(std::move(e));
  }

  Index n_nodes() const noexcept { return entries_.rows(); }
  bool operator()(Index target, Index source) const { return entries_(target, source); }
  const BoolMat& entries() const noexcept { return entries_; }

  Index off_diagonal_edges() const {
    return static_cast<Index>(entries_.count()) - n_nodes();
  }

 private:
  BoolMat entries_;
};

/// Coefficient tensor of an order-P VAR: lags()[p-1] is A_p (N x N), with
/// A_p(n, src) the weight of y_src[t - p] in the equation for y_n[t].
template <typename Scalar>
class VarParameters {
 public:
  VarParameters() = default;
  VarParameters(Index n_nodes, Index order) : lags_(static_cast<std::size_t>(order), Mat<Scalar>::Zero(n_nodes, n_nodes)) {
    require(n_nodes >= 1 && order >= 1, "VAR parameters need N >= 1 and P >= 1");
  }
  explicit VarParameters(std::vector<Mat<Scalar>> lags) : lags_(std::move(lags)) {
    require(!lags_.empty(), "VAR parameters need at least one lag");
    for (const auto& a : lags_)
      require(a.rows() == lags_.front().rows() && a.cols() == a.rows(), "lag matrices must be square and equal-sized");
  }

  Index order() const noexcept { return static_cast<Index>(lags_.size()); }
  Index n_nodes() const noexcept { return lags_.empty() ? 0 : lags_.front().rows(); }
  GroupLayout layout() const noexcept { return {n_nodes(), order()}; }

  const std::vector<Mat<Scalar>>& lags() const noexcept { return lags_; }
  std::vector<Mat<Scalar>>& lags() noexcept { return lags_; }
  const Mat<Scalar>& lag(Index p) const { return lags_.at(static_cast<std::size_t>(p - 1)); }
  Mat<Scalar>& lag(Index p) { return lags_.at(static_cast<std::size_t>(p - 1)); }

  Scalar coeff(Index target, Index source, Index p) const { return lag(p)(target, source); }

  /// N x NP matrix whose row n is the node estimate a_n in GroupLayout order.
  Mat<Scalar> regression_matrix() const {
    const Index n = n_nodes(), order_p = order();
    Mat<Scalar> out(n, n * order_p);
    for (Index src = 0; src < n; ++src)
      for (Index p = 1; p <= order_p; ++p) out.col(src * order_p + p - 1) = lag(p).col(src);
    return out;
  }

  static VarParameters from_regression_matrix(const Mat<Scalar>& m, Index order) {
    require(order >= 1 && m.cols() == m.rows() * order, "regression matrix must be N x NP");
    VarParameters out(m.rows(), order);
    for (Index src = 0; src < m.rows(); ++src)
      for (Index p = 1; p <= order; ++p) out.lag(p).col(src) = m.col(src * order + p - 1);
    return out;
  }

  /// NP x NP companion matrix [[A_1 ... A_P], [I 0]].
  Mat<Scalar> companion() const {
    const Index n = n_nodes(), order_p = order();
    Mat<Scalar> c = Mat<Scalar>::Zero(n * order_p, n * order_p);
    for (Index p = 0; p < order_p; ++p) c.block(0, p * n, n, n) = lags_[static_cast<std::size_t>(p)];
    if (order_p > 1) c.block(n, 0, n * (order_p - 1), n * (order_p - 1)).setIdentity();
    return c;
  }

  /// Off-diagonal group norms ||a_{n,src}||_2 as an N x N matrix (diagonal
  /// holds the self-group norms).
  Mat<Scalar> group_norms() const {
    const Index n = n_nodes();
    Mat<Scalar> out = Mat<Scalar>::Zero(n, n);
    for (const auto& a : lags_) out += a.cwiseAbs2();
    return out.cwiseSqrt();
  }

  bool respects(const AdjacencyMask& mask) const {
    for (Index i = 0; i < n_nodes(); ++i)
      for (Index j = 0; j < n_nodes(); ++j)
        if (!mask(i, j))
          for (const auto& a : lags_)
            if (a(i, j) != Scalar(0)) return false;
    return true;
  }

  VarParameters& operator+=(const VarParameters& o) {
    for (std::size_t p = 0; p < lags_.size(); ++p) lags_[p] += o.lags_[p];
    return *this;
  }

 private:
  std::vector<Mat<Scalar>> lags_;
};

/// T x N sample matrix; row t is y[t]^T.
template <typename Scalar>
struct TimeSeries {
  Mat<Scalar> samples;
  Scalar innovation_std = 0;
  /// Set when the generating process had companion radius >= 1.
  bool unstable = false;

  Index length() const noexcept { return samples.rows(); }
  Index n_nodes() const noexcept { return samples.cols(); }
  auto at(Index t) const { return samples.row(t).transpose(); }
};

template <typename Scalar>
struct SmoothTransitionConfig {
  Scalar kappa = Scalar(0.99);
  Index t_break = 0;
  VarParameters<Scalar> params_a;
  VarParameters<Scalar> params_b;
};

struct SimulationOptions {
  Index burn_in = 200;
  /// Optional P x N block used as y[0..P-1] (chronological). Zero if unset.
  std::optional<MatrixXd> initial;
};

template <typename Scalar>
struct Stabilized {
  VarParameters<Scalar> params;
  /// True when the input radius was zero and no rescaling was possible.
  bool degenerate = false;
};

/// Erdos-Renyi mask; every off-diagonal entry is present independently with
/// probability edge_prob.
inline AdjacencyMask generate_er_graph(Index n_nodes, double edge_prob, std::uint64_t seed) {
  require(n_nodes >= 1, "graph needs at least one node");
  require(edge_prob >= 0.0 && edge_prob <= 1.0, "edge probability must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  BoolMat e(n_nodes, n_nodes);
  for (Index i = 0; i < n_nodes; ++i)
    for (Index j = 0; j < n_nodes; ++j) e(i, j) = (i == j) || unif(rng) < edge_prob;
  return AdjacencyMask(std::move(e));
}

template <typename Scalar>
Scalar companion_spectral_radius(const VarParameters<Scalar>& params) {
  const Mat<Scalar> c = params.companion();
  if (c.size() == 1) return std::abs(c(0, 0));
  Eigen::EigenSolver<Mat<Scalar>> solver(c, /*computeEigenvectors=*/false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Rescales A_p by c^p with c = target / radius, which multiplies every
/// companion eigenvalue magnitude by c.
template <typename Scalar>
Stabilized<Scalar> stabilize(const VarParameters<Scalar>& params, Scalar target_radius) {
  require(target_radius > Scalar(0), "target radius must be positive");
  const Scalar radius = companion_spectral_radius(params);
  if (radius == Scalar(0)) return {params, true};
  const Scalar c = target_radius / radius;
  VarParameters<Scalar> out = params;
  Scalar scale = 1;
  for (Index p = 1; p <= out.order(); ++p) {
    scale *= c;
    out.lag(p) *= scale;
  }
  return {std::move(out), false};
}

template <typename Scalar = double>
VarParameters<Scalar> sample_var_coefficients(const AdjacencyMask& mask, Index order, std::uint64_t seed,
                                              Scalar target_radius = Scalar(0.9)) {
  require(order >= 1, "VAR order must be >= 1");
  require(target_radius > Scalar(0) && target_radius < Scalar(1), "target radius must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  VarParameters<Scalar> params(mask.n_nodes(), order);
  for (Index p = 1; p <= order; ++p)
    for (Index i = 0; i < mask.n_nodes(); ++i)
      for (Index j = 0; j < mask.n_nodes(); ++j)
        if (mask(i, j)) params.lag(p)(i, j) = static_cast<Scalar>(normal(rng));
  return stabilize(params, target_radius).params;
}

/// s_f[t] = 1 - exp(-kappa * ([t - T_B]_+)^2).
template <typename Scalar>
Scalar transition_profile(Index t, Scalar kappa, Index t_break) {
  const Scalar d = static_cast<Scalar>(std::max<Index>(t - t_break, 0));
  return Scalar(1) - std::exp(-kappa * d * d);
}

template <typename Scalar>
Scalar transition_profile(Index t, const SmoothTransitionConfig<Scalar>& cfg) {
  return transition_profile(t, cfg.kappa, cfg.t_break);
}

template <typename Scalar>
VarParameters<Scalar> interpolate(const VarParameters<Scalar>& a, const VarParameters<Scalar>& b, Scalar weight) {
  VarParameters<Scalar> out = a;
  for (Index p = 1; p <= a.order(); ++p) out.lag(p) = a.lag(p) + weight * (b.lag(p) - a.lag(p));
  return out;
}

template <typename Scalar>
struct TimeVaryingSeries {
  TimeSeries<Scalar> series;
  /// Coefficient tensor in force at every output sample t.
  std::vector<VarParameters<Scalar>> params;
};

namespace detail {

// Shared recursion for the constant, smooth-transition and drifting
// generators. coeffs_at(k) returns the tensor for output index k (k may be
// negative during burn-in). Noise is drawn N values per generated step in a
// fixed order so all generators agree under the same seed.
template <typename Scalar, typename CoeffsAt>
TimeSeries<Scalar> run_var_recursion(Index n_nodes, Index order, Index length, Scalar innovation_std,
                                     std::uint64_t seed, const SimulationOptions& opts, CoeffsAt&& coeffs_at) {
  require(length > order, "series length must exceed the VAR order");
  require(innovation_std >= Scalar(0), "innovation std must be nonnegative");
  require(opts.burn_in >= 0, "burn-in must be nonnegative");
  const Index total = opts.burn_in + length;
  Mat<Scalar> z = Mat<Scalar>::Zero(total, n_nodes);
  if (opts.initial) {
    require(opts.initial->rows() == order && opts.initial->cols() == n_nodes, "initial block must be P x N");
    z.topRows(order) = opts.initial->template cast<Scalar>();
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec<Scalar> y(n_nodes);
  for (Index t = order; t < total; ++t) {
    const VarParameters<Scalar>& a = coeffs_at(t - opts.burn_in);
    y.setZero();
    for (Index p = 1; p <= order; ++p) y.noalias() += a.lag(p) * z.row(t - p).transpose();
    for (Index i = 0; i < n_nodes; ++i) y(i) += innovation_std * static_cast<Scalar>(normal(rng));
    z.row(t) = y.transpose();
  }
  TimeSeries<Scalar> out;
  out.samples = z.bottomRows(length);
  out.innovation_std = innovation_std;
  return out;
}

}  // namespace detail

/// y[t] = sum_p A_p y[t-p] + u[t], u[t] ~ N(0, innovation_std^2 I).
template <typename Scalar>
TimeSeries<Scalar> simulate_var(const VarParameters<Scalar>& params, Index length, Scalar innovation_std,
                                std::uint64_t seed, const SimulationOptions& opts = {}) {
  auto series = detail::run_var_recursion<Scalar>(params.n_nodes(), params.order(), length, innovation_std, seed, opts,
                                                  [&](Index) -> const VarParameters<Scalar>& { return params; });
  series.unstable = companion_spectral_radius(params) >= Scalar(1);
  return series;
}

template <typename Scalar>
TimeVaryingSeries<Scalar> simulate_smooth_transition(const SmoothTransitionConfig<Scalar>& cfg, Index length,
                                                     Scalar innovation_std, std::uint64_t seed,
                                                     const SimulationOptions& opts = {}) {
  require(cfg.params_a.n_nodes() == cfg.params_b.n_nodes() && cfg.params_a.order() == cfg.params_b.order(),
          "smooth-transition endpoints must share N and P");
  require(cfg.kappa >= Scalar(0), "transition speed must be nonnegative");
  require(cfg.t_break >= 0 && cfg.t_break < length, "transition start must lie inside the simulated range");
  TimeVaryingSeries<Scalar> out;
  out.params.reserve(static_cast<std::size_t>(length));
  for (Index t = 0; t < length; ++t)
    out.params.push_back(interpolate(cfg.params_a, cfg.params_b, transition_profile(t, cfg)));
  out.series = detail::run_var_recursion<Scalar>(
      cfg.params_a.n_nodes(), cfg.params_a.order(), length, innovation_std, seed, opts,
      [&](Index k) -> const VarParameters<Scalar>& { return k < 0 ? cfg.params_a : out.params[static_cast<std::size_t>(k)]; });
  // Coarse stability scan; the interpolated process is expected to be stable.
  const Index stride = std::max<Index>(1, length / 20);
  for (Index t = 0; t < length && !out.series.unstable; t += stride)
    out.series.unstable = companion_spectral_radius(out.params[static_cast<std::size_t>(t)]) >= Scalar(1);
  return out;
}

/// Coefficients follow a Gaussian random walk on the support of `start`;
/// whenever the companion radius exceeds radius_cap the tensor is rescaled
/// back onto it.
template <typename Scalar>
TimeVaryingSeries<Scalar> simulate_drifting_var(const VarParameters<Scalar>& start, Index length, Scalar innovation_std,
                                                Scalar drift_std, std::uint64_t seed, Scalar radius_cap = Scalar(0.95),
                                                const SimulationOptions& opts = {}) {
  require(drift_std >= Scalar(0), "drift std must be nonnegative");
  std::mt19937_64 rng(derive_seed(seed, 0xd1f7));
  std::normal_distribution<double> normal(0.0, 1.0);
  TimeVaryingSeries<Scalar> out;
  out.params.reserve(static_cast<std::size_t>(length));
  VarParameters<Scalar> current = start;
  for (Index t = 0; t < length; ++t) {
    if (t > 0) {
      for (Index p = 1; p <= current.order(); ++p)
        for (Index i = 0; i < current.n_nodes(); ++i)
          for (Index j = 0; j < current.n_nodes(); ++j)
            if (start.lag(p)(i, j) != Scalar(0)) current.lag(p)(i, j) += drift_std * static_cast<Scalar>(normal(rng));
      if (companion_spectral_radius(current) > radius_cap) current = stabilize(current, radius_cap).params;
    }
    out.params.push_back(current);
  }
  out.series = detail::run_var_recursion<Scalar>(
      start.n_nodes(), start.order(), length, innovation_std, seed, opts,
      [&](Index k) -> const VarParameters<Scalar>& { return k < 0 ? start : out.params[static_cast<std::size_t>(k)]; });
  return out;
}

}  // namespace tirso
