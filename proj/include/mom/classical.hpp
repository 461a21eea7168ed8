#pragma once

#include "mom/error.hpp"
#include "mom/geometry.hpp"
#include "mom/linalg.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace mom {

struct Correspondence {
  WorldPoint world;
  PixelPoint pixel;
};

using CorrespondenceSet = std::vector<Correspondence>;

struct ViewObservation {
  int camera_id = 0;
  PixelPoint pixel;
  Mat34 projection;
};

using MultiViewObservation = std::vector<ViewObservation>;

namespace detail {

// Similarity transform moving the centroid to the origin and scaling the
// mean distance from it to sqrt(D).
template <int D>
Eigen::Matrix<double, D + 1, D + 1> isotropic_normalizer(const std::vector<Eigen::Matrix<double, D, 1>>& pts) {
  Eigen::Matrix<double, D, 1> centroid = Eigen::Matrix<double, D, 1>::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double scale = mean_dist > 0.0 ? std::sqrt(static_cast<double>(D)) / mean_dist : 1.0;
  Eigen::Matrix<double, D + 1, D + 1> t = Eigen::Matrix<double, D + 1, D + 1>::Identity();
  t.template topLeftCorner<D, D>() *= scale;
  t.template topRightCorner<D, 1>() = -scale * centroid;
  return t;
}

}  // namespace detail

/// Singular values of the normalized DLT system, exposed for diagnostics.
struct DltResult {
  ProjectionMatrix projection;
  VecX singular_values;
};

/// Direct linear transform for P from >= 6 world/pixel pairs, with isotropic
/// normalization of both point sets. The result is scaled to unit Frobenius
/// norm with the sign giving mostly positive depths.
inline DltResult dlt_pnp_detailed(const CorrespondenceSet& corr) {
  if (corr.size() < 6) fail(ErrorKind::TooFewPoints, "DLT needs at least 6 correspondences");
  std::vector<Vec3> world;
  std::vector<Vec2> pixel;
  world.reserve(corr.size());
  pixel.reserve(corr.size());
  for (const auto& c : corr) {
    if (!c.world.allFinite() || !c.pixel.allFinite()) fail(ErrorKind::Precondition, "non-finite correspondence");
    world.push_back(c.world);
    pixel.push_back(c.pixel);
  }
  const Eigen::Matrix4d tw = detail::isotropic_normalizer<3>(world);
  const Eigen::Matrix3d tp = detail::isotropic_normalizer<2>(pixel);

  MatX a = MatX::Zero(2 * static_cast<Eigen::Index>(corr.size()), 12);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Vec4 x = tw * homogeneous(world[i]);
    const Vec3 u = tp * homogeneous(pixel[i]);
    const auto r = static_cast<Eigen::Index>(2 * i);
    // rows of [u]x (P x) = 0 with u = (u0, u1, 1)
    a.block<1, 4>(r, 4) = -u.z() * x.transpose();
    a.block<1, 4>(r, 8) = u.y() * x.transpose();
    a.block<1, 4>(r + 1, 0) = u.z() * x.transpose();
    a.block<1, 4>(r + 1, 8) = -u.x() * x.transpose();
  }

  const Svd svd = jacobi_svd(a);
  const VecX& sv = svd.singular_values;
  const double smallest = sv(11);
  const double second = sv(10);
  if (second <= 1e-9 * sv(0) || smallest / second > 0.99)
    fail(ErrorKind::DegenerateConfiguration, "DLT null space is not one-dimensional");

  const VecX h = svd.null_vector();
  Mat34 pn;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) pn(r, c) = h(4 * r + c);

  Mat34 p = tp.inverse() * pn * tw;
  p /= p.norm();

  int positive = 0;
  for (const auto& w : world) positive += (p.row(2).dot(homogeneous(w)) > 0.0) ? 1 : -1;
  if (positive < 0) p = -p;

  return {{p, Provenance::Estimated}, sv};
}

inline ProjectionMatrix dlt_pnp(const CorrespondenceSet& corr) { return dlt_pnp_detailed(corr).projection; }

/// Linear triangulation from >= 2 views: stacks the top two rows of
/// [p_c]x P_k per view (each P_k rescaled to unit norm) and takes the
/// smallest right singular vector.
inline WorldPoint triangulate(const MultiViewObservation& obs) {
  if (obs.size() < 2) fail(ErrorKind::Precondition, "triangulation needs at least 2 cameras");
  MatX a(2 * static_cast<Eigen::Index>(obs.size()), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double norm = obs[i].projection.norm();
    if (!(norm > 0.0) || !obs[i].projection.allFinite() || !obs[i].pixel.allFinite())
      fail(ErrorKind::Precondition, "invalid view");
    const Eigen::Matrix<double, 3, 4> rows = cross_matrix(obs[i].pixel) * (obs[i].projection / norm);
    a.middleRows<2>(static_cast<Eigen::Index>(2 * i)) = rows.topRows<2>();
  }
  const Svd svd = jacobi_svd(a);
  const VecX& sv = svd.singular_values;
  if (!(sv(2) > 0.0) || sv(0) / sv(2) > 1e12)
    fail(ErrorKind::RaysNearParallel, "viewing rays are near parallel");
  const Vec4 x = svd.null_vector();
  if (std::abs(x(3)) < 1e-12) fail(ErrorKind::PointAtInfinity, "triangulated point is at infinity");
  return x.head<3>() / x(3);
}

struct ReprojectionError {
  std::vector<double> distances;
  double rms = 0.0;
};

inline ReprojectionError reprojection_error(const Mat34& p, const CorrespondenceSet& corr) {
  ReprojectionError out;
  out.distances.reserve(corr.size());
  double sum_sq = 0.0;
  for (const auto& c : corr) {
    const double d = (project(p, c.world).pixel - c.pixel).norm();
    out.distances.push_back(d);
    sum_sq += d * d;
  }
  if (!corr.empty()) out.rms = std::sqrt(sum_sq / static_cast<double>(corr.size()));
  return out;
}

inline ReprojectionError reprojection_error(const ProjectionMatrix& p, const CorrespondenceSet& corr) {
  return reprojection_error(p.p, corr);
}

}  // namespace mom
