#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace omog {

// Dense storage is row-major throughout so matrices map 1:1 onto the
// row-major float32 blobs of the on-disk formats.
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatF = RowMat<float>;
using MatD = RowMat<double>;
using VecF = VecX<float>;
using VecD = VecX<double>;
using IntVec = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

inline constexpr double kNormEps = 1e-12;  // added to norms before division
inline constexpr double kDistEps = 1e-6;   // reciprocal-distance pole guard

// Cosine similarity with epsilon-guarded norms; safe for zero vectors.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& a,
                                 const Eigen::MatrixBase<DerivedB>& b) {
  using S = typename DerivedA::Scalar;
  const S na = a.norm() + static_cast<S>(kNormEps);
  const S nb = b.norm() + static_cast<S>(kNormEps);
  return a.dot(b) / (na * nb);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename S>
RowMat<S> to_scalar(const MatF& m) {
  return m.template cast<S>();
}

}  // namespace omog
