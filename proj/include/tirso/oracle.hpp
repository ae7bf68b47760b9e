#pragma once

#include <tirso/dense.hpp>
#include <tirso/estimators.hpp>
#include <tirso/group.hpp>
#include <tirso/regressor.hpp>
#include <tirso/step_size.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <type_traits>

namespace tirso {

/// f(a) = 1/2 a^T H a - b^T a + constant + sum_g weights(g) ||a_g||.
///
/// `weights(node)` is expected to be zero; the self group is never shrunk.
template <typename Scalar>
struct CompositeProblem {
  GroupLayout layout;
  Index node = 0;
  Mat<Scalar> hessian;
  Vec<Scalar> linear;
  Vec<Scalar> weights;
  Scalar constant = 0;

  void validate() const {
    require(hessian.rows() == layout.dim() && hessian.cols() == layout.dim(), "problem Hessian must be NP x NP");
    require(linear.size() == layout.dim(), "problem linear term must have length NP");
    require(weights.size() == layout.n_nodes, "problem needs one weight per group");
    require((weights.array() >= 0).all(), "group weights must be non-negative");
  }

  Vec<Scalar> gradient(const Vec<Scalar>& a) const { return hessian * a - linear; }

  Scalar smooth_value(const Vec<Scalar>& a) const { return Scalar(0.5) * a.dot(hessian * a) - linear.dot(a) + constant; }

  Scalar objective(const Vec<Scalar>& a) const { return smooth_value(a) + group_penalty(a, layout, weights, node); }

  /// a <- shrink(a - step (H a - b), step * weights).
  Vec<Scalar> prox_step(const Vec<Scalar>& a, Scalar step) const {
    return group_shrink(a - step * gradient(a), layout, step * weights, node);
  }
};

template <typename Scalar>
struct SolveReport {
  Vec<Scalar> solution;
  Index iterations = 0;
  Scalar final_objective = 0;
  /// ||a - prox_step(a)|| at the returned iterate.
  Scalar kkt_residual = 0;
  bool converged = false;
  /// False if some iteration increased the objective beyond rounding.
  bool monotone = true;
};

struct SolveOptions {
  /// Defaults to 1 / lambda_max(H).
  std::optional<double> step;
  double tol = 1e-8;
  Index max_iter = 50000;
};

/// Plain proximal gradient on a CompositeProblem.
template <typename Scalar>
SolveReport<Scalar> prox_grad_solve(const CompositeProblem<Scalar>& problem, const std::type_identity_t<Vec<Scalar>>& init,
                                    const SolveOptions& options = {}) {
  problem.validate();
  require(options.tol > 0, "solver tolerance must be positive");
  require(init.size() == problem.layout.dim(), "initial point must have length NP");
  Scalar step;
  if (options.step) {
    step = static_cast<Scalar>(*options.step);
  } else {
    const Scalar lmax = lambda_max_power_iteration<Scalar>(problem.hessian).value;
    step = lmax > 0 ? Scalar(1) / lmax : Scalar(1);
  }
  require(step > 0, "solver step must be positive");

  SolveReport<Scalar> report;
  Vec<Scalar> a = init;
  Scalar value = problem.objective(a);
  const auto tol = static_cast<Scalar>(options.tol);
  const Scalar slack = Scalar(64) * std::numeric_limits<Scalar>::epsilon();
  for (Index k = 0; k < options.max_iter; ++k) {
    Vec<Scalar> next = problem.prox_step(a, step);
    const Scalar residual = (next - a).norm();
    const Scalar next_value = problem.objective(next);
    if (next_value > value + slack * (std::abs(value) + Scalar(1))) report.monotone = false;
    report.iterations = k + 1;
    a = std::move(next);
    value = next_value;
    if (residual <= tol) {
      report.converged = true;
      break;
    }
  }
  report.kkt_residual = (problem.prox_step(a, step) - a).norm();
  report.converged = report.converged || report.kkt_residual <= tol;
  report.final_objective = value;
  report.solution = std::move(a);
  return report;
}

/// Largest violation of 0 in grad f(a) + sum_g w_g d||a_g||, computed groupwise
/// from the subgradient conditions.
template <typename Scalar>
Scalar optimality_residual(const CompositeProblem<Scalar>& problem, const Vec<Scalar>& a) {
  const Vec<Scalar> grad = problem.gradient(a);
  const GroupLayout layout = problem.layout;
  Scalar worst = 0;
  for (Index g = 0; g < layout.n_nodes; ++g) {
    const auto ag = a.segment(layout.offset(g), layout.order);
    const auto gg = grad.segment(layout.offset(g), layout.order);
    const Scalar w = g == problem.node ? Scalar(0) : problem.weights(g);
    const Scalar norm = ag.norm();
    Scalar violation;
    if (norm > 0)
      violation = (gg + w * ag / norm).norm();
    else
      violation = std::max(Scalar(0), gg.norm() - w);
    worst = std::max(worst, violation);
  }
  return worst;
}

/// Per-group weights for one node: lambda everywhere except the self group.
template <typename Scalar>
Vec<Scalar> node_weights(GroupLayout layout, Index node, Scalar lambda) {
  Vec<Scalar> w = Vec<Scalar>::Constant(layout.n_nodes, lambda);
  w(node) = 0;
  return w;
}

/// Sample-weighted least-squares quadratic for node n over t = P .. T-1:
/// H = sum w_t g g^T, b = sum w_t y_n g, constant = sum w_t y_n^2 / 2.
template <typename Scalar, typename WeightFn>
CompositeProblem<Scalar> assemble_weighted_problem(const Mat<Scalar>& samples, Index node, Index order,
                                                   const Vec<Scalar>& group_weights, WeightFn&& sample_weight) {
  const Index total = samples.rows();
  const GroupLayout layout{samples.cols(), order};
  require(order >= 1 && total > order, "hindsight problem needs T > P");
  require(node >= 0 && node < layout.n_nodes, "node index out of range");
  CompositeProblem<Scalar> p;
  p.layout = layout;
  p.node = node;
  p.hessian = Mat<Scalar>::Zero(layout.dim(), layout.dim());
  p.linear = Vec<Scalar>::Zero(layout.dim());
  p.weights = group_weights;
  Mat<Scalar> lags(order, layout.n_nodes);
  for (Index t = order; t < total; ++t) {
    for (Index p_lag = 1; p_lag <= order; ++p_lag) lags.row(p_lag - 1) = samples.row(t - p_lag);
    const Vec<Scalar> g = build_regressor(lags);
    const Scalar w = sample_weight(t);
    const Scalar y = samples(t, node);
    p.hessian.noalias() += w * (g * g.transpose());
    p.linear += (w * y) * g;
    p.constant += Scalar(0.5) * w * y * y;
  }
  return p;
}

/// C_T(a) = 1/(T-P) sum_t 1/2 (y_n[t] - g[t]^T a)^2 + lambda sum_{src != n} ||a_src||.
template <typename Scalar>
CompositeProblem<Scalar> assemble_hindsight_tiso(const Mat<Scalar>& samples, Index node, Index order, Scalar lambda) {
  require(lambda >= 0, "lambda must be non-negative");
  const Scalar scale = Scalar(1) / static_cast<Scalar>(samples.rows() - order);
  return assemble_weighted_problem<Scalar>(samples, node, order, node_weights<Scalar>({samples.cols(), order}, node, lambda),
                                           [scale](Index) { return scale; });
}

/// Exponentially weighted counterpart: sample t carries (1 - gamma^(T - t)) / (T - P).
template <typename Scalar>
CompositeProblem<Scalar> assemble_hindsight_tirso(const Mat<Scalar>& samples, Index node, Index order, Scalar lambda,
                                                  Scalar gamma) {
  require(lambda >= 0, "lambda must be non-negative");
  require(gamma > 0 && gamma < 1, "forgetting factor must lie in (0, 1)");
  const Index total = samples.rows();
  const Scalar scale = Scalar(1) / static_cast<Scalar>(total - order);
  return assemble_weighted_problem<Scalar>(
      samples, node, order, node_weights<Scalar>({samples.cols(), order}, node, lambda),
      [=](Index t) { return scale * (Scalar(1) - std::pow(gamma, static_cast<Scalar>(total - t))); });
}

/// argmin 1/2 a^T Phi a - r^T a + sum_g w_g ||a_g||.
template <typename Scalar>
SolveReport<Scalar> instantaneous_minimizer(const Mat<Scalar>& phi, const Vec<Scalar>& r_n, GroupLayout layout, Index node,
                                            const Vec<Scalar>& weights, const Vec<Scalar>& init = {},
                                            const SolveOptions& options = {}) {
  CompositeProblem<Scalar> p{layout, node, phi, r_n, weights, Scalar(0)};
  const Vec<Scalar> start = init.size() == layout.dim() ? init : Vec<Scalar>::Zero(layout.dim());
  return prox_grad_solve(p, start, options);
}

/// Online subgradient descent on the instantaneous loss plus the group
/// penalty, with the subgradient of ||x|| taken as 0 at x = 0.
template <typename Scalar = double>
class Osgd : public OnlineEstimator<Osgd<Scalar>, Scalar> {
  using Base = OnlineEstimator<Osgd<Scalar>, Scalar>;
  friend Base;

 public:
  explicit Osgd(const EstimatorConfig& config) : Base(config, false) {}

 private:
  void update_estimates() {
    const GroupLayout layout = this->layout_;
    const Vec<Scalar> residual = this->coeffs_ * this->regressor_ - this->sample_;
    Mat<Scalar> direction = residual * this->regressor_.transpose();
    for (Index n = 0; n < layout.n_nodes; ++n) {
      for (Index g = 0; g < layout.n_nodes; ++g) {
        if (g == n) continue;
        const auto a = this->coeffs_.row(n).segment(layout.offset(g), layout.order);
        const Scalar norm = a.norm();
        if (norm > 0) direction.row(n).segment(layout.offset(g), layout.order) += (this->weights_(n, g) / norm) * a;
      }
    }
    this->coeffs_ -= this->alpha_ * direction;
  }
};

/// Runs K proximal-gradient iterations on the current recursive loss per
/// sample, warm-started at the previous estimate. K = 1 is the recursive
/// estimator itself.
template <typename Scalar = double>
class PgdTirso : public OnlineEstimator<PgdTirso<Scalar>, Scalar> {
  using Base = OnlineEstimator<PgdTirso<Scalar>, Scalar>;
  friend Base;

 public:
  PgdTirso(const EstimatorConfig& config, Index inner_iterations) : Base(config, true), inner_(inner_iterations) {
    require(inner_iterations >= 1, "PGD needs at least one inner iteration");
  }

  Index inner_iterations() const noexcept { return inner_; }

 private:
  void update_estimates() {
    for (Index k = 0; k < inner_; ++k)
      prox_gradient_sweep(this->coeffs_, this->stats_->phi, this->stats_->cross, this->alpha_, this->weights_, this->layout_);
  }

  Index inner_;
};

}  // namespace tirso
