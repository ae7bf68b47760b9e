#pragma once

#include <tirso/dense.hpp>
#include <tirso/group.hpp>
#include <tirso/regressor.hpp>
#include <tirso/step_size.hpp>

#include <optional>
#include <utility>

namespace tirso {

struct EstimatorConfig {
  Index n_nodes = 1;
  Index order = 1;
  double reg_lambda = 0.0;
  /// Overrides reg_lambda off the diagonal when set. The diagonal is ignored.
  std::optional<MatrixXd> per_edge_lambda;
  StepSizeSchedule schedule = step::Constant{0.1};
  double forgetting = 0.99;
  double init_phi_scale = 0.01;

  GroupLayout layout() const { return {n_nodes, order}; }
  double mu() const { return 1.0 - forgetting; }

  void validate() const {
    require(n_nodes >= 1 && order >= 1, "estimator needs N >= 1 and P >= 1");
    require(reg_lambda >= 0, "lambda must be non-negative");
    require(forgetting > 0 && forgetting < 1, "forgetting factor must lie in (0, 1)");
    require(init_phi_scale >= 0, "initial Phi scale must be non-negative");
    if (per_edge_lambda) {
      require(per_edge_lambda->rows() == n_nodes && per_edge_lambda->cols() == n_nodes, "per-edge lambda must be N x N");
      require((per_edge_lambda->array() >= 0).all(), "per-edge lambda must be non-negative");
    }
  }

  /// Row n holds the group weights for node n; the diagonal is zero.
  MatrixXd regularization_weights() const {
    MatrixXd w = per_edge_lambda ? *per_edge_lambda : MatrixXd::Constant(n_nodes, n_nodes, reg_lambda);
    w.diagonal().setZero();
    return w;
  }
};

/// v = g (g^T a - y_n).
template <typename Scalar>
Vec<Scalar> tiso_gradient(const Vec<Scalar>& a, const Vec<Scalar>& g, Scalar y_n) {
  require(a.size() == g.size(), "tiso_gradient: dimension mismatch");
  return g * (g.dot(a) - y_n);
}

/// v = Phi a - r_n.
template <typename Scalar>
Vec<Scalar> tirso_gradient(const Mat<Scalar>& phi, const Vec<Scalar>& r_n, const Vec<Scalar>& a) {
  require(phi.rows() == a.size() && phi.cols() == a.size() && r_n.size() == a.size(), "tirso_gradient: dimension mismatch");
  return phi * a - r_n;
}

/// Exponentially weighted second-order statistics.
///
///   Phi[t] = gamma Phi[t-1] + mu g g^T,  Phi[P-1] = sigma^2 I
///   r_n[t] = gamma r_n[t-1] + mu y_n g   (column n of `cross`)
///   s_n[t] = gamma s_n[t-1] + mu y_n^2   (data-only term of the loss)
template <typename Scalar>
struct RecursiveStatistics {
  Mat<Scalar> phi;
  Mat<Scalar> cross;
  Vec<Scalar> energy;
  Scalar forgetting = Scalar(0.99);

  static RecursiveStatistics initial(GroupLayout layout, Scalar forgetting, Scalar sigma2) {
    RecursiveStatistics s;
    s.phi = sigma2 * Mat<Scalar>::Identity(layout.dim(), layout.dim());
    s.cross = Mat<Scalar>::Zero(layout.dim(), layout.n_nodes);
    s.energy = Vec<Scalar>::Zero(layout.n_nodes);
    s.forgetting = forgetting;
    return s;
  }

  Scalar mu() const { return Scalar(1) - forgetting; }
  auto r(Index node) const { return cross.col(node); }

  template <typename GDerived, typename YDerived>
  void update(const Eigen::MatrixBase<GDerived>& g, const Eigen::MatrixBase<YDerived>& y) {
    const Scalar m = mu();
    phi *= forgetting;
    phi.noalias() += m * (g * g.transpose());
    phi = (Scalar(0.5) * (phi + phi.transpose())).eval();
    cross *= forgetting;
    cross.noalias() += m * (g * y.transpose());
    energy = forgetting * energy + m * y.cwiseAbs2();
  }
};

/// Checkpointable state of a recursive estimator.
template <typename Scalar>
struct TirsoState {
  RecursiveStatistics<Scalar> stats;
  Mat<Scalar> estimates;  // N x NP, row n = a_n^T
  Index t = 0;            // index of the next sample
  LagBuffer<Scalar> lag_buffer;
  Vec<Scalar> eigvec;     // power-iteration warm start; empty before the first adaptive step
};

/// One proximal-gradient pass over all nodes on the quadratic (Phi, r).
///
/// Shared by the recursive estimator and the multi-iteration baseline so that a
/// single inner iteration of the latter reproduces the former bit for bit.
template <typename Scalar>
void prox_gradient_sweep(Mat<Scalar>& coeffs, const Mat<Scalar>& phi, const Mat<Scalar>& cross, Scalar alpha,
                         const Mat<Scalar>& weights, GroupLayout layout) {
  Mat<Scalar> forward = coeffs;
  forward.noalias() -= alpha * (coeffs * phi - cross.transpose());
  for (Index n = 0; n < layout.n_nodes; ++n)
    coeffs.row(n) = group_shrink(forward.row(n).transpose(), layout, (alpha * weights.row(n)).transpose(), n).transpose();
}

/// Shared plumbing for the online estimators: lag buffer, sample clock,
/// step-size evaluation and optional recursive statistics.
///
/// Each sample y[t] with t >= P goes through prepare(y) (regressor, statistics
/// and step size for time t) and then commit() (estimate update, buffer
/// rotation). Between the two calls coefficients() still holds the pre-update
/// estimate, which is what regret bookkeeping needs. step(y) does both, and
/// only fills the buffer while t < P.
template <typename Derived, typename Scalar>
class OnlineEstimator {
 public:
  template <typename YDerived>
  void step(const Eigen::MatrixBase<YDerived>& y) {
    if (!ready()) {
      buffer_.push(y);
      ++t_;
      return;
    }
    prepare(y);
    commit();
  }

  template <typename YDerived>
  void prepare(const Eigen::MatrixBase<YDerived>& y) {
    require(ready(), "prepare() needs P warm-up samples first");
    require(!pending_, "prepare() called twice without commit()");
    require(y.size() == layout_.n_nodes, "sample length must equal N");
    sample_ = y;
    regressor_ = buffer_.regressor();
    if (stats_) stats_->update(regressor_, sample_);
    std::optional<double> lmax;
    if (needs_lambda_max(config_.schedule)) {
      if (stats_) {
        auto eig = lambda_max_power_iteration<Scalar>(stats_->phi, eigvec_);
        eigvec_ = std::move(eig.vector);
        if (!eig.converged) ++approximate_eigen_count_;
        lambda_max_ = eig.value;
      } else {
        // Instantaneous loss: its Hessian g g^T has lambda_max = ||g||^2.
        lambda_max_ = regressor_.squaredNorm();
      }
      lmax = static_cast<double>(lambda_max_);
    }
    const StepSize s = step_size_at(config_.schedule, t_, lmax);
    if (s.degenerate) ++degenerate_step_count_;
    alpha_ = static_cast<Scalar>(s.value);
    pending_ = true;
  }

  void commit() {
    require(pending_, "commit() without prepare()");
    static_cast<Derived*>(this)->update_estimates();
    buffer_.push(sample_);
    ++t_;
    pending_ = false;
  }

  const EstimatorConfig& config() const noexcept { return config_; }
  GroupLayout layout() const noexcept { return layout_; }
  Index time() const noexcept { return t_; }
  bool ready() const noexcept { return buffer_.full(); }
  bool pending() const noexcept { return pending_; }
  const Mat<Scalar>& coefficients() const noexcept { return coeffs_; }
  NodeEstimate<Scalar> node(Index n) const { return {layout_, n, coeffs_.row(n).transpose()}; }
  const Mat<Scalar>& weights() const noexcept { return weights_; }
  Scalar step_size() const noexcept { return alpha_; }
  const Vec<Scalar>& regressor() const noexcept { return regressor_; }
  const Vec<Scalar>& sample() const noexcept { return sample_; }
  const LagBuffer<Scalar>& lag_buffer() const noexcept { return buffer_; }
  const RecursiveStatistics<Scalar>* statistics() const noexcept { return stats_ ? &*stats_ : nullptr; }
  /// Last lambda_max(Phi) computed for an adaptive step (0 if none yet).
  Scalar lambda_max() const noexcept { return lambda_max_; }
  Index degenerate_step_count() const noexcept { return degenerate_step_count_; }
  Index approximate_eigen_count() const noexcept { return approximate_eigen_count_; }

 protected:
  OnlineEstimator(EstimatorConfig config, bool with_statistics)
      : config_(std::move(config)), layout_(config_.layout()) {
    config_.validate();
    buffer_ = LagBuffer<Scalar>(layout_.order, layout_.n_nodes);
    coeffs_ = Mat<Scalar>::Zero(layout_.n_nodes, layout_.dim());
    weights_ = config_.regularization_weights().template cast<Scalar>();
    if (with_statistics)
      stats_ = RecursiveStatistics<Scalar>::initial(layout_, static_cast<Scalar>(config_.forgetting),
                                                   static_cast<Scalar>(config_.init_phi_scale));
  }

  void restore(const TirsoState<Scalar>& state) {
    require(state.estimates.rows() == layout_.n_nodes && state.estimates.cols() == layout_.dim(), "state estimates have wrong shape");
    require(state.stats.phi.rows() == layout_.dim() && state.stats.cross.cols() == layout_.n_nodes, "state statistics have wrong shape");
    require(state.lag_buffer.lags().rows() == layout_.order && state.lag_buffer.lags().cols() == layout_.n_nodes, "state lag buffer has wrong shape");
    stats_ = state.stats;
    coeffs_ = state.estimates;
    t_ = state.t;
    buffer_ = state.lag_buffer;
    eigvec_ = state.eigvec;
  }

  TirsoState<Scalar> snapshot() const {
    require(stats_.has_value(), "estimator carries no recursive statistics");
    require(!pending_, "cannot snapshot between prepare() and commit()");
    return {*stats_, coeffs_, t_, buffer_, eigvec_};
  }

  EstimatorConfig config_;
  GroupLayout layout_;
  LagBuffer<Scalar> buffer_;
  Mat<Scalar> coeffs_;
  Mat<Scalar> weights_;
  std::optional<RecursiveStatistics<Scalar>> stats_;
  Vec<Scalar> regressor_;
  Vec<Scalar> sample_;
  Vec<Scalar> eigvec_;
  Scalar alpha_ = 0;
  Scalar lambda_max_ = 0;
  Index t_ = 0;
  Index degenerate_step_count_ = 0;
  Index approximate_eigen_count_ = 0;
  bool pending_ = false;
};

/// Instantaneous-loss online estimator with group shrinkage.
///
/// Keeps no recursive statistics; an adaptive step divides by ||g[t]||^2.
template <typename Scalar = double>
class Tiso : public OnlineEstimator<Tiso<Scalar>, Scalar> {
  using Base = OnlineEstimator<Tiso<Scalar>, Scalar>;
  friend Base;

 public:
  explicit Tiso(const EstimatorConfig& config) : Base(config, false) {}

 private:
  void update_estimates() {
    const Vec<Scalar> residual = this->coeffs_ * this->regressor_ - this->sample_;
    Mat<Scalar> forward = this->coeffs_;
    forward.noalias() -= this->alpha_ * (residual * this->regressor_.transpose());
    for (Index n = 0; n < this->layout_.n_nodes; ++n)
      this->coeffs_.row(n) =
          group_shrink(forward.row(n).transpose(), this->layout_, (this->alpha_ * this->weights_.row(n)).transpose(), n).transpose();
  }
};

/// Recursive-loss online estimator: one proximal-gradient step per sample on
/// the exponentially weighted least-squares loss.
template <typename Scalar = double>
class Tirso : public OnlineEstimator<Tirso<Scalar>, Scalar> {
  using Base = OnlineEstimator<Tirso<Scalar>, Scalar>;
  friend Base;

 public:
  explicit Tirso(EstimatorConfig config) : Base(std::move(config), true) {}
  Tirso(EstimatorConfig config, const TirsoState<Scalar>& state) : Base(std::move(config), true) { this->restore(state); }

  TirsoState<Scalar> state() const { return this->snapshot(); }

 private:
  void update_estimates() {
    prox_gradient_sweep(this->coeffs_, this->stats_->phi, this->stats_->cross, this->alpha_, this->weights_, this->layout_);
  }
};

}  // namespace tirso
