#pragma once

#include <tirso/dense.hpp>

#include <cmath>
#include <optional>
#include <variant>

namespace tirso {

template <typename Scalar>
struct DominantEigenpair {
  Scalar value = 0;
  Vec<Scalar> vector;
  int iterations = 0;
  bool converged = false;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// A warm start (e.g. the previous step's eigenvector, since Phi changes by a
/// rank-one term per sample) is used when its length matches. Stops once the
/// eigen-residual ||Phi v - lambda v|| drops below rel_tol * lambda, which
/// also bounds the eigenvalue error; otherwise the last estimate is returned
/// with converged == false.
template <typename Scalar>
DominantEigenpair<Scalar> lambda_max_power_iteration(const Mat<Scalar>& phi, const Vec<Scalar>& warm_start = {},
                                                     int max_iter = 200, Scalar rel_tol = Scalar(1e-6)) {
  require(phi.rows() == phi.cols(), "power iteration needs a square matrix");
  const Index dim = phi.rows();
  DominantEigenpair<Scalar> out;
  if (warm_start.size() == dim && warm_start.norm() > Scalar(0)) {
    out.vector = warm_start.normalized();
  } else {
    out.vector = Vec<Scalar>::LinSpaced(dim, Scalar(1), Scalar(2)).normalized();
  }
  Vec<Scalar> w(dim);
  for (int k = 1; k <= max_iter; ++k) {
    out.iterations = k;
    w.noalias() = phi * out.vector;
    const Scalar norm = w.norm();
    if (norm == Scalar(0)) {
      out.value = 0;
      out.converged = true;
      return out;
    }
    out.value = out.vector.dot(w);
    if ((w - out.value * out.vector).norm() <= rel_tol * std::abs(out.value)) {
      out.converged = true;
      return out;
    }
    out.vector = w / norm;
  }
  return out;
}

namespace step {
/// alpha_t = alpha.
struct Constant {
  double alpha = 0.1;
};
/// alpha_t = 1 / (beta_tilde * t).
struct Diminishing {
  double beta_tilde = 1.0;
};
/// alpha_t = c / sqrt(t0 * 2^(m-1)) on the window t0 2^(m-1) < t <= t0 2^m;
/// c / sqrt(t0) before t0.
struct Doubling {
  Index t0 = 8;
  double c = 1.0;
};
/// alpha_t = c / lambda_max(Phi[t]).
struct Adaptive {
  double c = 0.25;
};
}  // namespace step

using StepSizeSchedule = std::variant<step::Constant, step::Diminishing, step::Doubling, step::Adaptive>;

struct StepSize {
  double value = 0;
  /// Adaptive schedule met lambda_max == 0 and fell back to c / 1e-12.
  bool degenerate = false;
};

inline constexpr double kDegenerateEigenFloor = 1e-12;

inline bool needs_lambda_max(const StepSizeSchedule& s) { return std::holds_alternative<step::Adaptive>(s); }

/// Index m >= 1 of the doubling window containing t (0 for the pre-window).
inline Index doubling_window(Index t, Index t0) {
  require(t0 >= 1, "doubling schedule needs t0 >= 1");
  if (t <= t0) return 0;
  Index m = 1;
  while (t > t0 * (Index{1} << m)) ++m;
  return m;
}

/// `lambda_max` is only read by the adaptive variant.
inline StepSize step_size_at(const StepSizeSchedule& schedule, Index t, std::optional<double> lambda_max = std::nullopt) {
  require(t >= 1, "step sizes are defined for t >= 1");
  struct Visitor {
    Index t;
    std::optional<double> lambda_max;
    StepSize operator()(const step::Constant& s) const {
      require(s.alpha > 0, "constant step must be positive");
      return {s.alpha, false};
    }
    StepSize operator()(const step::Diminishing& s) const {
      require(s.beta_tilde > 0, "diminishing step needs beta_tilde > 0");
      return {1.0 / (s.beta_tilde * static_cast<double>(t)), false};
    }
    StepSize operator()(const step::Doubling& s) const {
      require(s.c > 0, "doubling step needs c > 0");
      const Index m = doubling_window(t, s.t0);
      const double base = m == 0 ? static_cast<double>(s.t0) : static_cast<double>(s.t0) * std::ldexp(1.0, static_cast<int>(m - 1));
      return {s.c / std::sqrt(base), false};
    }
    StepSize operator()(const step::Adaptive& s) const {
      require(s.c > 0 && s.c <= 1, "adaptive step needs c in (0, 1]");
      require(lambda_max.has_value(), "adaptive step needs lambda_max(Phi[t])");
      if (*lambda_max <= 0) return {s.c / kDegenerateEigenFloor, true};
      return {s.c / *lambda_max, false};
    }
  };
  return std::visit(Visitor{t, lambda_max}, schedule);
}

template <typename Scalar>
StepSize step_size_at(const StepSizeSchedule& schedule, Index t, const Mat<Scalar>& phi) {
  if (!needs_lambda_max(schedule)) return step_size_at(schedule, t);
  return step_size_at(schedule, t, static_cast<double>(lambda_max_power_iteration(phi).value));
}

}  // namespace tirso
