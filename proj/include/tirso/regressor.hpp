#pragma once

#include <tirso/dense.hpp>

namespace tirso {

/// Stacked lag vector g[t] = vec([y[t-1], ..., y[t-P]]^T).
///
/// `lags` is P x N with row 0 holding y[t-1] (most recent first). Group src
/// of the result is [y_src[t-1], ..., y_src[t-P]], which is exactly the
/// column-major flattening of `lags`.
template <typename Derived>
Vec<typename Derived::Scalar> build_regressor(const Eigen::MatrixBase<Derived>& lags) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> dense = lags;
  return Eigen::Map<const Vec<Scalar>>(dense.data(), dense.size());
}

/// Holds the last P samples, most recent in row 0.
template <typename Scalar>
class LagBuffer {
 public:
  LagBuffer() = default;
  LagBuffer(Index order, Index n_nodes) : lags_(Mat<Scalar>::Zero(order, n_nodes)) {}
  LagBuffer(Mat<Scalar> lags, Index filled) : lags_(std::move(lags)), filled_(filled) {}

  template <typename Derived>
  void push(const Eigen::MatrixBase<Derived>& y) {
    require(y.size() == lags_.cols(), "sample length must equal N");
    for (Index p = lags_.rows() - 1; p > 0; --p) lags_.row(p) = lags_.row(p - 1);
    lags_.row(0) = y.transpose();
    if (filled_ < lags_.rows()) ++filled_;
  }

  bool full() const noexcept { return filled_ == lags_.rows(); }
  Index filled() const noexcept { return filled_; }
  const Mat<Scalar>& lags() const noexcept { return lags_; }
  Vec<Scalar> regressor() const { return build_regressor(lags_); }

 private:
  Mat<Scalar> lags_;
  Index filled_ = 0;
};

}  // namespace tirso
