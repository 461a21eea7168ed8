#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Thin SVD of a tall matrix, singular values sorted descending.
struct Svd {
  VecX singular_values;
  MatX v;  // columns are right singular vectors, same order as singular_values

  /// Right singular vector of the smallest singular value.
  VecX null_vector() const { return v.col(v.cols() - 1); }
};

/// One-sided (Hestenes) Jacobi SVD. Columns of a working copy of `a` are
/// rotated pairwise until every pair is orthogonal to `tol` relative to
/// their norms; the accumulated rotations form V. Short matrices are zero-padded to square.
/// The sweep order is fixed, so results are bit-reproducible.
inline Svd jacobi_svd(MatX a, double tol = 1e-14, int max_sweeps = 100) {
  const Eigen::Index n = a.cols();
  if (a.rows() < n) {
    MatX padded = MatX::Zero(n, n);
    padded.topRows(a.rows()) = a;
    a = std::move(padded);
  }
  MatX v = MatX::Identity(n, n);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          const double ap = a(i, p);
          const double aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  VecX sigma(n);
  for (Eigen::Index j = 0; j < n; ++j) sigma(j) = a.col(j).norm();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index l, Eigen::Index r) { return sigma(l) > sigma(r); });

  Svd out{VecX(n), MatX(n, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    out.singular_values(j) = sigma(order[static_cast<std::size_t>(j)]);
    out.v.col(j) = v.col(order[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline bool all_finite(const MatX& m) { return m.allFinite(); }

}  // namespace mom
