#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tirso {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Vec<double>;
using MatrixXd = Mat<double>;

/// Layout of a per-node coefficient vector: N groups of P contiguous lags.
///
/// Group n' (0-based) occupies positions [n' * P, (n' + 1) * P) and lag p
/// (1-based) sits at offset p - 1 inside its group. The same layout is used
/// for regressor vectors, so g.dot(a_n) is the one-step VAR prediction.
struct GroupLayout {
  Index n_nodes = 0;
  Index order = 0;

  constexpr Index dim() const noexcept { return n_nodes * order; }
  constexpr Index offset(Index group) const noexcept { return group * order; }

  template <typename Derived>
  auto group(Eigen::MatrixBase<Derived>& v, Index g) const {
    return v.segment(offset(g), order);
  }
  template <typename Derived>
  auto group(const Eigen::MatrixBase<Derived>& v, Index g) const {
    return v.segment(offset(g), order);
  }

  friend bool operator==(const GroupLayout&, const GroupLayout&) = default;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

// splitmix64 finalizer; used to fan a master seed out into independent
// per-run and per-purpose seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return mix_seed(master ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

}  // namespace tirso
