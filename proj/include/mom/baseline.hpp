#pragma once

#include "mom/classical.hpp"
#include "mom/error.hpp"
#include "mom/scene.hpp"

#include <string>
#include <vector>

namespace mom {

/// What the PnP + triangulation baseline triangulates per frame.
enum class BaselinePoints { Keypoints, BboxCenter };

inline BaselinePoints parse_baseline_points(const std::string& s) {
  if (s == "keypoints") return BaselinePoints::Keypoints;
  if (s == "bbox-center") return BaselinePoints::BboxCenter;
  fail(ErrorKind::Config, "unknown baseline point source '" + s + "'");
}

inline std::string to_string(BaselinePoints p) { return p == BaselinePoints::Keypoints ? "keypoints" : "bbox-center"; }

struct BaselineConfig {
  int pnp_points = 20;  // calibration correspondences used per camera
  BaselinePoints points = BaselinePoints::Keypoints;
};

struct BaselineModel {
  std::vector<int> camera_ids;
  std::vector<ProjectionMatrix> projections;
};

/// DLT per camera from the first `pnp_points` calibration pairs in the manifest.
inline BaselineModel calibrate_baseline(const Manifest& m, const BaselineConfig& cfg) {
  if (static_cast<int>(m.calibration.size()) != m.k)
    fail(ErrorKind::Precondition, "manifest carries no calibration correspondences for every camera");
  BaselineModel model;
  for (const auto& cs : m.calibration) {
    const auto n = std::min<std::size_t>(cs.world.size(), static_cast<std::size_t>(std::max(cfg.pnp_points, 0)));
    CorrespondenceSet corr;
    for (std::size_t i = 0; i < n; ++i) corr.push_back({cs.world[i], cs.pixel[i]});
    model.camera_ids.push_back(cs.camera_id);
    model.projections.push_back(dlt_pnp(corr));
  }
  return model;
}

/// Per frame: triangulate every corresponding keypoint (or the box centers)
/// and average the recovered points. Keypoints whose triangulation is
/// degenerate are skipped; a frame with none left raises.
inline std::vector<WorldPoint> baseline_predict(const BaselineModel& model, const std::vector<DatasetRecord>& records,
                                                const BaselineConfig& cfg) {
  std::vector<WorldPoint> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    if (rec.cams.size() != model.projections.size())
      fail(ErrorKind::MissingCamera, "frame " + std::to_string(rec.frame) + " camera count differs from calibration");
    std::size_t count = 1;
    if (cfg.points == BaselinePoints::Keypoints) {
      count = rec.cams.front().points.size();
      for (const auto& c : rec.cams) count = std::min(count, c.points.size());
    }
    WorldPoint sum = WorldPoint::Zero();
    std::size_t used = 0;
    for (std::size_t i = 0; i < count; ++i) {
      MultiViewObservation obs;
      for (std::size_t c = 0; c < rec.cams.size(); ++c) {
        const auto& cam = rec.cams[c];
        PixelPoint px;
        if (cfg.points == BaselinePoints::Keypoints) {
          px = cam.points[i];
        } else {
          const BoundingBox b = cam.bbox.value_or(BoundingBox::tight(cam.points));
          px = {0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1)};
        }
        obs.push_back({cam.camera_id, px, model.projections[c].p});
      }
      try {
        sum += triangulate(obs);
        ++used;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::RaysNearParallel && e.kind() != ErrorKind::PointAtInfinity) throw;
      }
    }
    if (used == 0) fail(ErrorKind::RaysNearParallel, "frame " + std::to_string(rec.frame) + ": nothing triangulated");
    out.push_back(sum / static_cast<double>(used));
  }
  return out;
}

}  // namespace mom
