#pragma once

#include <tirso/dense.hpp>
#include <tirso/estimators.hpp>
#include <tirso/oracle.hpp>
#include <tirso/step_size.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace tirso {

/// Running sum of per-sample quadratic losses, shared across nodes:
/// sum_t 1/2 a^T H_t a - (B_t)_n^T a + c_{t,n}.
template <typename Scalar>
struct QuadraticLossSum {
  Mat<Scalar> hessian;
  Mat<Scalar> linear;  // NP x N
  Vec<Scalar> constant;
  Index terms = 0;

  explicit QuadraticLossSum(GroupLayout layout)
      : hessian(Mat<Scalar>::Zero(layout.dim(), layout.dim())),
        linear(Mat<Scalar>::Zero(layout.dim(), layout.n_nodes)),
        constant(Vec<Scalar>::Zero(layout.n_nodes)) {}

  /// Instantaneous squared prediction loss of sample (g, y).
  void add_sample(const Vec<Scalar>& g, const Vec<Scalar>& y) {
    hessian.noalias() += g * g.transpose();
    linear.noalias() += g * y.transpose();
    constant += Scalar(0.5) * y.cwiseAbs2();
    ++terms;
  }

  /// Recursive loss defined by the current statistics.
  void add_statistics(const RecursiveStatistics<Scalar>& s) {
    hessian += s.phi;
    linear += s.cross;
    constant += Scalar(0.5) * s.energy;
    ++terms;
  }

  /// Sum of the per-term objectives (loss plus penalty) as one problem.
  CompositeProblem<Scalar> problem(GroupLayout layout, Index node, const Vec<Scalar>& weights) const {
    return {layout, node, hessian, linear.col(node), static_cast<Scalar>(terms) * weights, constant(node)};
  }
};

/// Per-node regret quantities of one run.
struct RegretReport {
  VectorXd online_loss;
  VectorXd comparator_loss;
  VectorXd static_regret;
  /// Only filled when dynamic tracking is on.
  VectorXd dynamic_regret;
  VectorXd path_length;
  VectorXd max_minimizer_step;
  VectorXd initial_minimizer_norm;
  /// steps x N matrix of ||a_n[t] - a_n^o[t]|| (dynamic tracking only).
  MatrixXd tracking_error;
  bool comparator_converged = true;
};

/// Accumulates online losses of an estimator, the comparator's aggregate
/// objective and, optionally, the per-step instantaneous minimizers.
///
/// Call observe() between the estimator's prepare() and commit(). With the
/// recursive loss the per-step objective is
///   1/2 a^T Phi[t] a - r_n[t]^T a + s_n[t] / 2 + penalty(a),
/// otherwise 1/2 (y_n[t] - g[t]^T a)^2 + penalty(a).
template <typename Scalar = double>
class RegretTracker {
 public:
  enum class Loss { Instantaneous, Recursive };

  RegretTracker(GroupLayout layout, Mat<Scalar> weights, Loss loss, bool track_dynamic = false, SolveOptions options = {})
      : layout_(layout),
        weights_(std::move(weights)),
        loss_(loss),
        dynamic_(track_dynamic),
        options_(options),
        sums_(layout),
        online_(Vec<Scalar>::Zero(layout.n_nodes)),
        optimal_(Vec<Scalar>::Zero(layout.n_nodes)),
        path_(Vec<Scalar>::Zero(layout.n_nodes)),
        max_step_(Vec<Scalar>::Zero(layout.n_nodes)),
        first_norm_(Vec<Scalar>::Zero(layout.n_nodes)) {
    require(weights_.rows() == layout.n_nodes && weights_.cols() == layout.n_nodes, "regret weights must be N x N");
    require(!(track_dynamic && loss == Loss::Instantaneous), "dynamic regret is tracked for the recursive loss only");
  }

  template <typename Estimator>
  void observe(const Estimator& est) {
    require(est.pending(), "observe() must be called between prepare() and commit()");
    const Mat<Scalar>& a = est.coefficients();
    if (loss_ == Loss::Recursive) {
      const auto* s = est.statistics();
      require(s != nullptr, "recursive regret needs estimator statistics");
      sums_.add_statistics(*s);
      for (Index n = 0; n < layout_.n_nodes; ++n) online_(n) += recursive_value(*s, n, a.row(n).transpose());
      if (dynamic_) track_minimizers(*s, a);
    } else {
      sums_.add_sample(est.regressor(), est.sample());
      const Vec<Scalar> residual = est.sample() - a * est.regressor();
      for (Index n = 0; n < layout_.n_nodes; ++n)
        online_(n) += Scalar(0.5) * residual(n) * residual(n) + penalty(n, a.row(n).transpose());
    }
  }

  Index terms() const noexcept { return sums_.terms; }
  const Vec<Scalar>& online_loss() const noexcept { return online_; }

  /// Solves the comparator problems on everything observed so far.
  RegretReport report() const {
    require(sums_.terms > 0, "no losses observed yet");
    RegretReport r;
    const Index n_nodes = layout_.n_nodes;
    r.online_loss = online_.template cast<double>();
    r.comparator_loss.resize(n_nodes);
    r.static_regret.resize(n_nodes);
    for (Index n = 0; n < n_nodes; ++n) {
      const auto problem = sums_.problem(layout_, n, weights_.row(n).transpose());
      const auto sol = prox_grad_solve(problem, Vec<Scalar>::Zero(layout_.dim()), options_);
      r.comparator_converged = r.comparator_converged && sol.converged;
      r.comparator_loss(n) = static_cast<double>(sol.final_objective);
      r.static_regret(n) = static_cast<double>(online_(n) - sol.final_objective);
    }
    if (dynamic_) {
      r.dynamic_regret = (online_ - optimal_).template cast<double>();
      r.path_length = path_.template cast<double>();
      r.max_minimizer_step = max_step_.template cast<double>();
      r.initial_minimizer_norm = first_norm_.template cast<double>();
      r.tracking_error = MatrixXd(static_cast<Index>(tracking_.size()), n_nodes);
      for (std::size_t k = 0; k < tracking_.size(); ++k) r.tracking_error.row(static_cast<Index>(k)) = tracking_[k].transpose();
    }
    return r;
  }

 private:
  Scalar penalty(Index n, const Vec<Scalar>& a) const { return group_penalty(a, layout_, weights_.row(n), n); }

  Scalar recursive_value(const RecursiveStatistics<Scalar>& s, Index n, const Vec<Scalar>& a) const {
    return Scalar(0.5) * a.dot(s.phi * a) - s.cross.col(n).dot(a) + Scalar(0.5) * s.energy(n) + penalty(n, a);
  }

  void track_minimizers(const RecursiveStatistics<Scalar>& s, const Mat<Scalar>& a) {
    const bool first = minimizers_.size() == 0;
    if (first) minimizers_ = Mat<Scalar>::Zero(layout_.n_nodes, layout_.dim());
    VectorXd err(layout_.n_nodes);
    for (Index n = 0; n < layout_.n_nodes; ++n) {
      const Vec<Scalar> prev = minimizers_.row(n).transpose();
      const Vec<Scalar> w = weights_.row(n).transpose();
      const auto sol = instantaneous_minimizer<Scalar>(s.phi, s.cross.col(n), layout_, n, w, prev, options_);
      const Scalar v = recursive_value(s, n, sol.solution);
      optimal_(n) += v;
      if (first) {
        first_norm_(n) = sol.solution.norm();
      } else {
        const Scalar stepn = (sol.solution - prev).norm();
        path_(n) += stepn;
        max_step_(n) = std::max(max_step_(n), stepn);
      }
      err(n) = static_cast<double>((a.row(n).transpose() - sol.solution).norm());
      minimizers_.row(n) = sol.solution.transpose();
    }
    tracking_.push_back(std::move(err));
  }

  GroupLayout layout_;
  Mat<Scalar> weights_;
  Loss loss_;
  bool dynamic_;
  SolveOptions options_;
  QuadraticLossSum<Scalar> sums_;
  Vec<Scalar> online_;
  Vec<Scalar> optimal_;
  Vec<Scalar> path_;
  Vec<Scalar> max_step_;
  Vec<Scalar> first_norm_;
  Mat<Scalar> minimizers_;
  std::vector<VectorXd> tracking_;
};

/// Data-dependent constants entering the regret bounds.
struct BoundsCertificate {
  Index n_nodes = 0;
  Index order = 0;
  double b_y = 0;
  double l_max = 0;
  /// max_t ||g[t]||^2, the Lipschitz constant of the instantaneous loss gradient.
  double l_instant = 0;
  double l_cap = 0;
  double beta_tilde = 0;
  double beta = 0;
  double kappa_phi = 0;
  double b_a = 0;
  double b_a_tilde = 0;
  double g_tilde = 0;
  bool lipschitz_within_cap = true;
  bool recursive_eigen_positive = false;  // beta_tilde > 0
  bool sample_eigen_positive = false;     // beta > 0
};

/// (1 / beta) (B_y sqrt(PN) + sqrt(B_y^2 PN + beta B_y)).
inline double iterate_bound(double b_y, double beta, Index n_nodes, Index order) {
  require(beta > 0, "iterate bound needs a positive eigenvalue floor");
  const double pn = static_cast<double>(n_nodes * order);
  return (b_y * std::sqrt(pn) + std::sqrt(b_y * b_y * pn + beta * b_y)) / beta;
}

struct CertificateOptions {
  double forgetting = 0.99;
  double init_phi_scale = 0.01;
  /// Samples after P before the running covariance enters beta; defaults to 5 NP.
  std::optional<Index> covariance_burn_in;
};

/// Replays the recursive statistics over `samples` (T x N) and extracts the
/// eigenvalue extremes and the closed-form constants derived from them.
inline BoundsCertificate bounds_certificate(const MatrixXd& samples, Index order, const CertificateOptions& options = {}) {
  const Index total = samples.rows(), n_nodes = samples.cols();
  const GroupLayout layout{n_nodes, order};
  require(order >= 1 && total > order, "certificate needs T > P");
  const Index burn = options.covariance_burn_in.value_or(5 * layout.dim());

  BoundsCertificate c;
  c.n_nodes = n_nodes;
  c.order = order;
  c.b_y = samples.cwiseAbs2().maxCoeff();
  c.l_cap = static_cast<double>(layout.dim()) * c.b_y;

  auto stats = RecursiveStatistics<double>::initial(layout, options.forgetting, options.init_phi_scale);
  MatrixXd covariance_sum = MatrixXd::Zero(layout.dim(), layout.dim());
  LagBuffer<double> buffer(order, n_nodes);
  for (Index t = 0; t < order; ++t) buffer.push(samples.row(t).transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig;
  double l_max = 0, beta_tilde = std::numeric_limits<double>::infinity(), beta = std::numeric_limits<double>::infinity();
  for (Index t = order; t < total; ++t) {
    const VectorXd y = samples.row(t).transpose();
    const VectorXd g = buffer.regressor();
    stats.update(g, y);
    c.l_instant = std::max(c.l_instant, g.squaredNorm());
    covariance_sum.noalias() += g * g.transpose();
    eig.compute(stats.phi, Eigen::EigenvaluesOnly);
    l_max = std::max(l_max, eig.eigenvalues().maxCoeff());
    beta_tilde = std::min(beta_tilde, eig.eigenvalues().minCoeff());
    if (t >= order + burn) {
      eig.compute(covariance_sum / static_cast<double>(t - order + 1), Eigen::EigenvaluesOnly);
      beta = std::min(beta, eig.eigenvalues().minCoeff());
    }
    buffer.push(y);
  }
  c.l_max = l_max;
  c.beta_tilde = beta_tilde;
  c.beta = std::isfinite(beta) ? beta : 0.0;
  // Phi also carries the decaying sigma^2 I prior, which the analytic cap ignores.
  c.lipschitz_within_cap = l_max <= c.l_cap + options.init_phi_scale;
  // Eigenvalues at rounding level of L count as zero.
  const double floor = 1e-12 * std::max(l_max, 1.0);
  c.recursive_eigen_positive = c.beta_tilde > floor;
  c.sample_eigen_positive = c.beta > floor;
  if (c.recursive_eigen_positive) {
    c.kappa_phi = c.l_max / c.beta_tilde;
    c.b_a_tilde = iterate_bound(c.b_y, c.beta_tilde, n_nodes, order);
    c.g_tilde = (1 + c.kappa_phi) * std::sqrt(static_cast<double>(layout.dim())) * c.b_y;
  }
  if (c.sample_eigen_positive) c.b_a = iterate_bound(c.b_y, c.beta, n_nodes, order);
  return c;
}

struct BoundCheck {
  bool certified = false;
  bool passed = false;
  double lhs = 0;
  double rhs = 0;
  std::string note;

  double margin() const { return rhs - lhs; }
};

/// (G^2 / (2 beta)) (log(steps) + 1) + B^2 beta (P - 1) / 2, where steps is the
/// number of online updates and the last summand is the initial-step term with
/// alpha_{P-1} = 1 / (beta (P - 1)).
inline double logarithmic_regret_bound(double g_tilde, double beta_tilde, double b_a_tilde, double steps, Index order) {
  require(beta_tilde > 0 && steps >= 1, "logarithmic bound needs beta > 0 and at least one step");
  const double head = g_tilde * g_tilde / (2 * beta_tilde) * (std::log(steps) + 1);
  const double tail = order > 1 ? b_a_tilde * b_a_tilde * beta_tilde * static_cast<double>(order - 1) / 2 : 0.0;
  return head + tail;
}

inline BoundCheck check_logarithmic_regret(double static_regret, const BoundsCertificate& cert, Index terms,
                                           const StepSizeSchedule& schedule) {
  BoundCheck out;
  const auto* dim = std::get_if<step::Diminishing>(&schedule);
  if (!dim || !cert.recursive_eigen_positive || std::abs(dim->beta_tilde - cert.beta_tilde) > 1e-9 * cert.beta_tilde) {
    out.note = "needs the 1/(beta_tilde t) schedule with the certificate's beta_tilde";
    return out;
  }
  out.certified = true;
  out.lhs = static_regret;
  out.rhs = logarithmic_regret_bound(cert.g_tilde, cert.beta_tilde, cert.b_a_tilde, static_cast<double>(terms), cert.order);
  out.passed = out.lhs <= out.rhs;
  return out;
}

/// (1 / (alpha beta)) ((1 + kappa) sqrt(PN) B_y + lambda N) (||a^o[P]|| + W).
inline double dynamic_regret_bound(const BoundsCertificate& cert, double alpha, double lambda, double initial_norm,
                                   double path_length) {
  require(alpha > 0 && cert.beta_tilde > 0, "dynamic bound needs alpha > 0 and beta > 0");
  const double pn = static_cast<double>(cert.n_nodes * cert.order);
  const double lead = (1 + cert.kappa_phi) * std::sqrt(pn) * cert.b_y + lambda * static_cast<double>(cert.n_nodes);
  return lead * (initial_norm + path_length) / (alpha * cert.beta_tilde);
}

inline BoundCheck check_dynamic_regret(double dynamic_regret, const BoundsCertificate& cert, const StepSizeSchedule& schedule,
                                       double lambda, double initial_norm, double path_length) {
  BoundCheck out;
  const auto* c = std::get_if<step::Constant>(&schedule);
  if (!c || !cert.recursive_eigen_positive || c->alpha > 1.0 / cert.l_max) {
    out.note = "needs a constant step in (0, 1/L]";
    return out;
  }
  out.certified = true;
  out.lhs = dynamic_regret;
  out.rhs = dynamic_regret_bound(cert, c->alpha, lambda, initial_norm, path_length);
  out.passed = out.lhs <= out.rhs;
  return out;
}

/// Steady-state tracking: tail mean of ||a[t] - a^o[t]|| against sigma / (alpha beta).
inline BoundCheck check_tracking(double tail_mean_error, double max_minimizer_step, const BoundsCertificate& cert,
                                 const StepSizeSchedule& schedule) {
  BoundCheck out;
  const auto* c = std::get_if<step::Constant>(&schedule);
  if (!c || !cert.recursive_eigen_positive || c->alpha > 1.0 / cert.l_max) {
    out.note = "needs a constant step in (0, 1/L]";
    return out;
  }
  out.certified = true;
  out.lhs = tail_mean_error;
  out.rhs = max_minimizer_step / (c->alpha * cert.beta_tilde);
  out.passed = out.lhs <= out.rhs;
  return out;
}

/// R[T] / sqrt(T) non-increasing over the last three window boundaries.
/// `boundaries` holds (T, R[T]) in increasing T.
inline BoundCheck check_sublinear_trend(const std::vector<std::pair<Index, double>>& boundaries, const StepSizeSchedule& schedule) {
  BoundCheck out;
  if (!std::holds_alternative<step::Doubling>(schedule) || boundaries.size() < 3) {
    out.note = "needs a doubling schedule and at least three window boundaries";
    return out;
  }
  out.certified = true;
  const std::size_t k = boundaries.size();
  auto scaled = [&](std::size_t i) { return boundaries[i].second / std::sqrt(static_cast<double>(boundaries[i].first)); };
  const double a = scaled(k - 3), b = scaled(k - 2), c = scaled(k - 1);
  out.lhs = c;
  out.rhs = a;
  out.passed = b <= a && c <= b;
  return out;
}

/// G(a) = NP B_y ||a||^2 / 2 + B_y / 2 + sqrt(NP) B_y ||a||.
inline double loss_envelope(double a_norm, double b_y, Index n_nodes, Index order) {
  const double pn = static_cast<double>(n_nodes * order);
  return 0.5 * pn * b_y * a_norm * a_norm + 0.5 * b_y + std::sqrt(pn) * b_y * a_norm;
}

/// G(a) (1 - gamma^(T-P)) / ((T - P) (1/gamma - 1)).
inline double hindsight_gap_envelope(double a_norm, double b_y, Index n_nodes, Index order, double gamma, Index total) {
  require(total > order && gamma > 0 && gamma < 1, "gap envelope needs T > P and gamma in (0, 1)");
  const double span = static_cast<double>(total - order);
  return loss_envelope(a_norm, b_y, n_nodes, order) * (1 - std::pow(gamma, span)) / (span * (1 / gamma - 1));
}

struct GapPoint {
  Index total = 0;
  double min_instantaneous = 0;
  double min_recursive = 0;
  double objective_gap = 0;
  double minimizer_gap = 0;
  double envelope = 0;
  bool converged = true;
};

/// Hindsight objective and minimizer gaps between the two batch criteria for
/// each prefix length in `totals`.
inline std::vector<GapPoint> asymptotic_gap(const MatrixXd& samples, Index node, Index order, double lambda, double gamma,
                                            const std::vector<Index>& totals, const SolveOptions& options = {}) {
  std::vector<GapPoint> out;
  for (const Index total : totals) {
    require(total > order && total <= samples.rows(), "gap grid point out of range");
    const MatrixXd prefix = samples.topRows(total);
    const auto plain = assemble_hindsight_tiso<double>(prefix, node, order, lambda);
    const auto weighted = assemble_hindsight_tirso<double>(prefix, node, order, lambda, gamma);
    const VectorXd zero = VectorXd::Zero(plain.layout.dim());
    const auto a = prox_grad_solve(plain, zero, options);
    const auto b = prox_grad_solve(weighted, zero, options);
    GapPoint p;
    p.total = total;
    p.min_instantaneous = a.final_objective;
    p.min_recursive = b.final_objective;
    p.objective_gap = std::abs(a.final_objective - b.final_objective);
    p.minimizer_gap = (a.solution - b.solution).norm();
    p.envelope = hindsight_gap_envelope(b.solution.norm(), prefix.cwiseAbs2().maxCoeff(), samples.cols(), order, gamma, total);
    p.converged = a.converged && b.converged;
    out.push_back(p);
  }
  return out;
}

}  // namespace tirso
