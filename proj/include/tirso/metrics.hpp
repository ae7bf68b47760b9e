#pragma once

#include <tirso/dense.hpp>
#include <tirso/model.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

namespace tirso {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// Ratio of ensemble means, E[num] / E[den], accumulated per time slot.
class EnsembleRatio {
 public:
  EnsembleRatio() = default;
  explicit EnsembleRatio(Index slots) : num_(VectorXd::Zero(slots)), den_(VectorXd::Zero(slots)) {}

  void add(Index slot, double numerator, double denominator) {
    num_(slot) += numerator;
    den_(slot) += denominator;
  }
  void merge(const EnsembleRatio& other) {
    require(other.num_.size() == num_.size(), "cannot merge ensembles of different length");
    num_ += other.num_;
    den_ += other.den_;
  }

  Index size() const noexcept { return num_.size(); }
  const VectorXd& numerator() const noexcept { return num_; }
  const VectorXd& denominator() const noexcept { return den_; }

  /// NaN where the denominator is zero.
  VectorXd values() const {
    VectorXd out(num_.size());
    for (Index i = 0; i < num_.size(); ++i) out(i) = den_(i) != 0 ? num_(i) / den_(i) : kUndefined;
    return out;
  }

 private:
  VectorXd num_;
  VectorXd den_;
};

/// Mean of the defined entries of v[first, last]; NaN if none.
inline double window_mean(const VectorXd& v, Index first, Index last) {
  double sum = 0;
  Index count = 0;
  for (Index i = std::max<Index>(first, 0); i <= std::min(last, v.size() - 1); ++i)
    if (!std::isnan(v(i))) {
      sum += v(i);
      ++count;
    }
  return count ? sum / static_cast<double>(count) : kUndefined;
}

/// NMSD[t] over an ensemble. estimates[run][t] and truth[run][t] are N x NP
/// coefficient matrices (or any equally shaped parametrisation).
inline VectorXd nmsd(std::span<const std::vector<MatrixXd>> estimates, std::span<const std::vector<MatrixXd>> truth) {
  require(estimates.size() == truth.size() && !estimates.empty(), "nmsd needs matching, non-empty ensembles");
  const auto length = static_cast<Index>(estimates.front().size());
  EnsembleRatio ratio(length);
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    require(static_cast<Index>(estimates[r].size()) == length && truth[r].size() == estimates[r].size(), "nmsd runs must have equal length");
    for (Index t = 0; t < length; ++t) {
      const auto& a = estimates[r][static_cast<std::size_t>(t)];
      const auto& b = truth[r][static_cast<std::size_t>(t)];
      ratio.add(t, (a - b).squaredNorm(), b.squaredNorm());
    }
  }
  return ratio.values();
}

struct DetectionCounts {
  Index misses = 0;
  Index present = 0;
  Index false_alarms = 0;
  Index absent = 0;

  Index errors() const noexcept { return misses + false_alarms; }
  DetectionCounts& operator+=(const DetectionCounts& o) {
    misses += o.misses;
    present += o.present;
    false_alarms += o.false_alarms;
    absent += o.absent;
    return *this;
  }
};

/// Off-diagonal confusion counts for one snapshot: an edge is declared when
/// norms(n, src) >= delta and the group is not exactly zero, so delta = 0
/// reads the support of the estimate as is.
inline DetectionCounts detection_counts(const MatrixXd& norms, const BoolMat& truth, double delta) {
  require(norms.rows() == truth.rows() && norms.cols() == truth.cols(), "norms and truth mask must agree in shape");
  DetectionCounts c;
  for (Index n = 0; n < norms.rows(); ++n)
    for (Index src = 0; src < norms.cols(); ++src) {
      if (src == n) continue;
      const bool declared = norms(n, src) >= delta && norms(n, src) > 0;
      if (truth(n, src)) {
        ++c.present;
        if (!declared) ++c.misses;
      } else {
        ++c.absent;
        if (declared) ++c.false_alarms;
      }
    }
  return c;
}

/// One group-norm snapshot of one run with its ground-truth support.
struct NormSample {
  Index slot = 0;
  MatrixXd norms;
  BoolMat truth;
};

struct DetectionRates {
  VectorXd miss;         // P_MD[slot]
  VectorXd false_alarm;  // P_FA[slot]
  VectorXd eier;
};

/// Ensemble detection metrics per slot. Undefined ratios are NaN.
inline DetectionRates detection_rates(std::span<const NormSample> samples, Index slots, double delta) {
  require(delta >= 0, "threshold must be non-negative");
  EnsembleRatio miss(slots), fa(slots), eier(slots);
  for (const auto& s : samples) {
    const DetectionCounts c = detection_counts(s.norms, s.truth, delta);
    miss.add(s.slot, static_cast<double>(c.misses), static_cast<double>(c.present));
    fa.add(s.slot, static_cast<double>(c.false_alarms), static_cast<double>(c.absent));
    eier.add(s.slot, static_cast<double>(c.errors()), static_cast<double>(c.present + c.absent));
  }
  return {miss.values(), fa.values(), eier.values()};
}

struct ThresholdCalibration {
  double delta = 0;
  /// avg P_FA - avg P_MD at delta.
  double rate_gap = 0;
  bool feasible = false;
};

namespace detail {

// Window-averaged P_FA and P_MD are step functions of delta that only change
// at observed norms. Calls visit(lo, hi, fa, md) once per interval (lo, hi]
// with the averaged rates for any delta inside it, in increasing order; the
// last interval is (max norm, 2 max norm].
template <typename Visit>
void walk_thresholds(std::span<const NormSample> samples, Visit&& visit) {
  require(!samples.empty(), "threshold sweep needs samples");
  Index max_slot = 0;
  for (const auto& s : samples) max_slot = std::max(max_slot, s.slot);
  VectorXd present = VectorXd::Zero(max_slot + 1), absent = VectorXd::Zero(max_slot + 1);
  for (const auto& s : samples) {
    const DetectionCounts c = detection_counts(s.norms, s.truth, 0.0);
    present(s.slot) += static_cast<double>(c.present);
    absent(s.slot) += static_cast<double>(c.absent);
  }
  Index fa_slots = 0, md_slots = 0;
  for (Index i = 0; i <= max_slot; ++i) {
    fa_slots += absent(i) > 0;
    md_slots += present(i) > 0;
  }
  require(fa_slots > 0 && md_slots > 0, "threshold sweep needs both present and absent edges");

  // Each absent group adds its weight to avg P_FA while norm >= delta; each
  // present group adds its weight to avg P_MD while norm < delta.
  struct Item {
    double norm;
    double fa_weight;
    double md_weight;
  };
  std::vector<Item> items;
  for (const auto& s : samples)
    for (Index n = 0; n < s.norms.rows(); ++n)
      for (Index src = 0; src < s.norms.cols(); ++src) {
        if (src == n) continue;
        if (s.truth(n, src))
          items.push_back({s.norms(n, src), 0.0, 1.0 / (static_cast<double>(md_slots) * present(s.slot))});
        else
          items.push_back({s.norms(n, src), 1.0 / (static_cast<double>(fa_slots) * absent(s.slot)), 0.0});
      }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.norm < b.norm; });

  // delta in (v_{k-1}, v_k] declares exactly the nonzero items with norm >= v_k.
  double fa = 0, md = 0;
  std::size_t i = 0;
  for (const auto& it : items) {
    if (it.norm > 0) fa += it.fa_weight;
    else md += it.md_weight;
  }
  while (i < items.size() && items[i].norm == 0) ++i;
  double lower = 0;
  while (i < items.size()) {
    const double v = items[i].norm;
    visit(lower, v, fa, md);
    while (i < items.size() && items[i].norm == v) {
      fa -= items[i].fa_weight;
      md += items[i].md_weight;
      ++i;
    }
    lower = v;
  }
  visit(lower, lower > 0 ? 2 * lower : 1.0, fa, md);
}

}  // namespace detail

/// Threshold at which the window-averaged false-alarm and miss rates agree.
///
/// Walks the sorted norms exactly instead of bisecting. Returns the midpoint
/// of the best interval; `feasible` is false when no interval gets within
/// `tolerance`.
inline ThresholdCalibration calibrate_threshold_equal_rates(std::span<const NormSample> samples, double tolerance = 1e-3) {
  ThresholdCalibration best;
  best.rate_gap = std::numeric_limits<double>::infinity();
  detail::walk_thresholds(samples, [&](double lo, double hi, double fa, double md) {
    if (std::abs(fa - md) < std::abs(best.rate_gap)) {
      best.rate_gap = fa - md;
      best.delta = 0.5 * (lo + hi);
    }
  });
  best.feasible = std::abs(best.rate_gap) < tolerance;
  return best;
}

struct BalancedThreshold {
  double delta = 0;
  double false_alarm = 0;
  double miss = 0;
  double worst() const { return std::max(false_alarm, miss); }
};

/// Threshold minimising max(avg P_FA, avg P_MD) over every distinct interval.
inline BalancedThreshold balanced_threshold(std::span<const NormSample> samples) {
  BalancedThreshold best;
  double worst = std::numeric_limits<double>::infinity();
  detail::walk_thresholds(samples, [&](double lo, double hi, double fa, double md) {
    if (std::max(fa, md) < worst) {
      worst = std::max(fa, md);
      best = {0.5 * (lo + hi), fa, md};
    }
  });
  return best;
}

/// k-th largest off-diagonal norm, k = round(edge_prob * (N^2 - N)).
inline double calibrate_threshold_edge_count(const MatrixXd& norms, double edge_prob) {
  require(norms.rows() == norms.cols() && norms.rows() >= 2, "edge-count calibration needs an N x N norm matrix with N >= 2");
  const Index n = norms.rows();
  const auto k = static_cast<Index>(std::llround(edge_prob * static_cast<double>(n * n - n)));
  require(k >= 1 && k <= n * n - n, "edge-count target must select between 1 and N^2 - N edges");
  std::vector<double> values;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) values.push_back(norms(i, j));
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end(), std::greater<>());
  return values[static_cast<std::size_t>(k - 1)];
}

/// y_hat[t+h | t] by recursive substitution. `history` rows are chronological
/// with the last row y[t]; at least P rows are needed.
template <typename Scalar>
Vec<Scalar> h_step_predict(const VarParameters<Scalar>& params, const std::type_identity_t<Mat<Scalar>>& history, Index horizon) {
  const Index order = params.order(), n = params.n_nodes();
  require(horizon >= 1, "prediction horizon must be at least 1");
  require(history.rows() >= order && history.cols() == n, "history needs P rows of length N");
  Mat<Scalar> window(order + horizon, n);
  window.topRows(order) = history.bottomRows(order);
  for (Index j = 0; j < horizon; ++j) {
    Vec<Scalar> next = Vec<Scalar>::Zero(n);
    for (Index p = 1; p <= order; ++p) next.noalias() += params.lag(p) * window.row(order + j - p).transpose();
    window.row(order + j) = next.transpose();
  }
  return window.row(order + horizon - 1).transpose();
}

/// Scalar forecasting error sum ||y - y_hat||^2 / sum ||y||^2 over aligned
/// rows; NaN for zero-energy targets.
inline double nmse(const MatrixXd& targets, const MatrixXd& predictions) {
  require(targets.rows() == predictions.rows() && targets.cols() == predictions.cols(), "targets and predictions must align");
  const double den = targets.squaredNorm();
  return den != 0 ? (targets - predictions).squaredNorm() / den : kUndefined;
}

}  // namespace tirso
