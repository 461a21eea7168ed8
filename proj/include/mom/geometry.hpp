#pragma once

#include "mom/error.hpp"
#include "mom/linalg.hpp"

#include <cmath>
#include <string>

namespace mom {

/// World coordinates in meters, stored inhomogeneous.
using WorldPoint = Vec3;
/// Pixel coordinates, stored inhomogeneous.
using PixelPoint = Vec2;

inline Vec4 homogeneous(const WorldPoint& p) { return {p.x(), p.y(), p.z(), 1.0}; }
inline Vec3 homogeneous(const PixelPoint& p) { return {p.x(), p.y(), 1.0}; }

struct Intrinsics {
  Mat3 k = Mat3::Identity();

  static Intrinsics from_focal(double fx, double fy, double cx, double cy, double skew = 0.0) {
    Intrinsics in;
    in.k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return in;
  }
};

struct Extrinsics {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

enum class Provenance { Composed, Estimated, Learned };

struct ProjectionMatrix {
  Mat34 p = Mat34::Zero();
  Provenance provenance = Provenance::Composed;
};

inline void validate(const Intrinsics& in) {
  if (!in.k.allFinite()) fail(ErrorKind::InvalidIntrinsics, "non-finite K");
  if (in.k(2, 2) != 1.0 || in.k(2, 0) != 0.0 || in.k(2, 1) != 0.0)
    fail(ErrorKind::InvalidIntrinsics, "last row of K must be [0 0 1]");
  if (!(in.k(0, 0) > 0.0) || !(in.k(1, 1) > 0.0))
    fail(ErrorKind::InvalidIntrinsics, "focal lengths must be positive");
}

inline void validate(const Extrinsics& ex) {
  if (!ex.r.allFinite() || !ex.t.allFinite()) fail(ErrorKind::InvalidExtrinsics, "non-finite R or T");
  const double ortho = (ex.r.transpose() * ex.r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho >= 1e-9) fail(ErrorKind::InvalidExtrinsics, "R is not orthonormal");
  if (std::abs(ex.r.determinant() - 1.0) >= 1e-9) fail(ErrorKind::InvalidExtrinsics, "det(R) != 1");
}

/// P = K [R | T].
inline ProjectionMatrix compose_projection(const Intrinsics& in, const Extrinsics& ex) {
  validate(in);
  validate(ex);
  Mat34 rt;
  rt.leftCols<3>() = ex.r;
  rt.col(3) = ex.t;
  return {in.k * rt, Provenance::Composed};
}

struct Projection {
  PixelPoint pixel;
  double depth = 0.0;  // the scale factor s
  bool behind_camera = false;
};

inline Projection project(const Mat34& p, const WorldPoint& pw) {
  const Vec3 h = p * homogeneous(pw);
  const double s = h.z();
  if (!std::isfinite(s) || std::abs(s) < 1e-12)
    fail(ErrorKind::PointAtCameraPlane, "projected depth is zero");
  return {PixelPoint(h.x() / s, h.y() / s), s, s < 0.0};
}

inline Projection project(const ProjectionMatrix& p, const WorldPoint& pw) { return project(p.p, pw); }

/// [p]x, so that cross_matrix(p) * x == p.cross(x).
inline Mat3 cross_matrix(const Vec3& p) {
  Mat3 m;
  m << 0.0, -p.z(), p.y(),
       p.z(), 0.0, -p.x(),
       -p.y(), p.x(), 0.0;
  return m;
}

inline Mat3 cross_matrix(const PixelPoint& p) { return cross_matrix(homogeneous(p)); }

struct CameraModel {
  int id = 0;
  Intrinsics intrinsics;
  Extrinsics extrinsics;
  int image_width = 640;
  int image_height = 480;

  CameraModel() = default;
  CameraModel(int id_, Intrinsics in, Extrinsics ex, int width, int height)
      : id(id_), intrinsics(std::move(in)), extrinsics(std::move(ex)), image_width(width),
        image_height(height), projection_(compose_projection(intrinsics, extrinsics)) {
    if (width <= 0 || height <= 0) fail(ErrorKind::Precondition, "image dimensions must be positive");
  }

  const ProjectionMatrix& projection() const { return projection_; }
  Projection project(const WorldPoint& pw) const { return mom::project(projection_, pw); }

  /// Camera looking from `eye` toward `target` with world +z up.
  static CameraModel look_at(int id, const Intrinsics& in, const Vec3& eye, const Vec3& target,
                             int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(Vec3::UnitZ());
    if (right.norm() < 1e-12) fail(ErrorKind::Precondition, "look_at direction is vertical");
    right.normalize();
    const Vec3 down = forward.cross(right);
    Extrinsics ex;
    ex.r.row(0) = right.transpose();
    ex.r.row(1) = down.transpose();
    ex.r.row(2) = forward.transpose();
    ex.t = -ex.r * eye;
    return CameraModel(id, in, ex, width, height);
  }

 private:
  ProjectionMatrix projection_;
};

}  // namespace mom
