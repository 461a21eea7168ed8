#pragma once

#include "mom/error.hpp"
#include "mom/geometry.hpp"
#include "mom/random.hpp"
#include "mom/sampling.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mom {

enum class TrajectoryPattern { Random, Cross, Square };

inline TrajectoryPattern parse_pattern(const std::string& s) {
  if (s == "random") return TrajectoryPattern::Random;
  if (s == "cross") return TrajectoryPattern::Cross;
  if (s == "square") return TrajectoryPattern::Square;
  fail(ErrorKind::UnknownPattern, "unknown trajectory pattern '" + s + "'");
}

inline std::string to_string(TrajectoryPattern p) {
  switch (p) {
    case TrajectoryPattern::Random: return "random";
    case TrajectoryPattern::Cross: return "cross";
    case TrajectoryPattern::Square: return "square";
  }
  return "random";
}

struct AreaBounds {
  double x_min = 0.0;
  double x_max = 10.0;
  double y_min = 0.0;
  double y_max = 10.0;

  bool contains(const WorldPoint& p, double eps = 1e-9) const {
    return p.x() >= x_min - eps && p.x() <= x_max + eps && p.y() >= y_min - eps && p.y() <= y_max + eps;
  }

  friend bool operator==(const AreaBounds&, const AreaBounds&) = default;
};

struct SceneSpec {
  std::string name = "walk-2cam";
  AreaBounds area;
  double body_height = 1.7;
  double body_radius = 0.25;
  std::vector<CameraModel> cameras;
  int points_per_body = 20;
  double keypoint_sigma = 1.0;
  int frames = 5000;
  TrajectoryPattern pattern = TrajectoryPattern::Random;
  double speed = 0.14;           // meters per frame (1.4 m/s at 10 Hz)
  double path_margin = 1.0;      // inset of cross/square paths from the area edge
  int calibration_points = 20;   // world/pixel pairs per camera for the classical baseline
  std::uint64_t seed = 42;

  double center_height() const { return 0.5 * body_height; }

  void validate() const {
    if (cameras.size() < 2) fail(ErrorKind::Precondition, "scene needs at least 2 cameras");
    if (!(area.x_max > area.x_min) || !(area.y_max > area.y_min))
      fail(ErrorKind::Precondition, "area extents must be positive");
    if (points_per_body < 1) fail(ErrorKind::Precondition, "points_per_body must be >= 1");
    if (frames < 1) fail(ErrorKind::Precondition, "frames must be >= 1");
    if (keypoint_sigma < 0.0) fail(ErrorKind::Precondition, "keypoint_sigma must be >= 0");
    if (body_height < 0.0 || body_radius < 0.0) fail(ErrorKind::Precondition, "body dims must be >= 0");
  }
};

/// 10 x 10 m room, two 640x480 cameras in opposite corners at 2.5 m,
/// aimed at the room center and pitched 20 degrees down.
inline SceneSpec walk_2cam_spec() {
  SceneSpec spec;
  const double f = 320.0;  // ~90 degree horizontal field of view
  const Intrinsics in = Intrinsics::from_focal(f, f, 320.0, 240.0);
  const double height = 2.5;
  const double pitch = 20.0 * std::numbers::pi / 180.0;
  const Vec3 corners[2] = {{0.0, 0.0, height}, {10.0, 10.0, height}};
  for (int i = 0; i < 2; ++i) {
    const Vec3 eye = corners[i];
    Vec3 dir = Vec3(5.0, 5.0, height) - eye;
    dir.z() = 0.0;
    dir.normalize();
    const Vec3 forward(dir.x() * std::cos(pitch), dir.y() * std::cos(pitch), -std::sin(pitch));
    spec.cameras.push_back(CameraModel::look_at(i, in, eye, eye + forward, 640, 480));
  }
  return spec;
}

inline SceneSpec scene_preset(const std::string& name) {
  if (name == "walk-2cam") return walk_2cam_spec();
  fail(ErrorKind::Config, "unknown scene preset '" + name + "'");
}

struct TrajectoryPoint {
  std::int64_t frame = 0;
  WorldPoint center;
};

struct Trajectory {
  TrajectoryPattern pattern = TrajectoryPattern::Random;
  std::vector<TrajectoryPoint> points;
};

namespace detail {

inline WorldPoint walk_polyline(const std::vector<Vec2>& loop, double distance, double z) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < loop.size(); ++i) total += (loop[i + 1] - loop[i]).norm();
  double s = std::fmod(distance, total);
  for (std::size_t i = 0; i + 1 < loop.size(); ++i) {
    const double len = (loop[i + 1] - loop[i]).norm();
    if (s <= len || i + 2 == loop.size()) {
      const double t = len > 0.0 ? std::min(s / len, 1.0) : 0.0;
      const Vec2 p = loop[i] + t * (loop[i + 1] - loop[i]);
      return {p.x(), p.y(), z};
    }
    s -= len;
  }
  return {loop.front().x(), loop.front().y(), z};
}

}  // namespace detail

/// The closed path walked by the square pattern.
inline std::vector<Vec2> square_path(const SceneSpec& spec) {
  const double m = spec.path_margin;
  const auto& a = spec.area;
  return {{a.x_min + m, a.y_min + m}, {a.x_max - m, a.y_min + m}, {a.x_max - m, a.y_max - m},
          {a.x_min + m, a.y_max - m}, {a.x_min + m, a.y_min + m}};
}

inline std::vector<Vec2> cross_path(const SceneSpec& spec) {
  const double m = spec.path_margin;
  const auto& a = spec.area;
  const Vec2 c(0.5 * (a.x_min + a.x_max), 0.5 * (a.y_min + a.y_max));
  return {c, {a.x_max - m, c.y()}, {a.x_min + m, c.y()}, c, {c.x(), a.y_max - m}, {c.x(), a.y_min + m}, c};
}

/// True when `center` projects inside the image of every camera in `spec`.
inline bool seen_by_all(const SceneSpec& spec, const WorldPoint& center) {
  for (const auto& cam : spec.cameras) {
    if (!((cam.projection().p * homogeneous(center)).z() > 0.0)) return false;
    const PixelPoint px = cam.project(center).pixel;
    if (px.x() < 0.0 || px.x() > cam.image_width || px.y() < 0.0 || px.y() > cam.image_height) return false;
  }
  return true;
}

/// Constant-speed walk. Random walks start at the area center, perturb the
/// heading each step, reflect at the bounds and pick a fresh heading when a
/// step would leave the view of any camera.
inline Trajectory gen_trajectory(TrajectoryPattern pattern, int steps, double speed, const SceneSpec& spec, Rng& rng) {
  if (steps < 1) fail(ErrorKind::Precondition, "steps must be >= 1");
  Trajectory traj;
  traj.pattern = pattern;
  traj.points.reserve(static_cast<std::size_t>(steps));
  const double z = spec.center_height();
  const auto& a = spec.area;

  if (pattern == TrajectoryPattern::Random) {
    Vec2 pos(0.5 * (a.x_min + a.x_max), 0.5 * (a.y_min + a.y_max));
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const auto step = [&](double& h) {
      Vec2 next = pos + speed * Vec2(std::cos(h), std::sin(h));
      if (next.x() < a.x_min || next.x() > a.x_max) {
        next.x() = next.x() < a.x_min ? 2.0 * a.x_min - next.x() : 2.0 * a.x_max - next.x();
        h = std::numbers::pi - h;
      }
      if (next.y() < a.y_min || next.y() > a.y_max) {
        next.y() = next.y() < a.y_min ? 2.0 * a.y_min - next.y() : 2.0 * a.y_max - next.y();
        h = -h;
      }
      next.x() = std::clamp(next.x(), a.x_min, a.x_max);
      next.y() = std::clamp(next.y(), a.y_min, a.y_max);
      return next;
    };
    for (int i = 0; i < steps; ++i) {
      traj.points.push_back({i, {pos.x(), pos.y(), z}});
      heading += rng.normal(0.0, 0.3);
      Vec2 next = step(heading);
      for (int attempt = 0; attempt < 64 && !seen_by_all(spec, {next.x(), next.y(), z}); ++attempt) {
        heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        next = step(heading);
      }
      pos = next;
    }
    return traj;
  }

  const auto loop = pattern == TrajectoryPattern::Square ? square_path(spec) : cross_path(spec);
  for (int i = 0; i < steps; ++i) traj.points.push_back({i, detail::walk_polyline(loop, i * speed, z)});
  return traj;
}

/// Uniform samples from the solid vertical ellipsoid with semi-axes
/// (radius, radius, height / 2) around `center`, drawn in pairs mirrored
/// through the center so the point centroid is the center itself. An odd
/// `n` adds the center as the last point.
inline std::vector<WorldPoint> gen_body_points(const WorldPoint& center, int n, double height, double radius, Rng& rng) {
  if (n < 1) fail(ErrorKind::Precondition, "n must be >= 1");
  std::vector<WorldPoint> pts;
  pts.reserve(static_cast<std::size_t>(n));
  const Vec3 semi(radius, radius, 0.5 * height);
  while (static_cast<int>(pts.size()) + 1 < n) {
    const Vec3 u(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    if (u.squaredNorm() > 1.0) continue;
    const Vec3 d = u.cwiseProduct(semi);
    pts.push_back(center + d);
    pts.push_back(center - d);
  }
  if (static_cast<int>(pts.size()) < n) pts.push_back(center);
  return pts;
}

struct DatasetRecord {
  std::int64_t frame = 0;
  WorldPoint gt = WorldPoint::Zero();
  std::vector<CameraObservation> cams;  // bbox always set
};

struct RenderResult {
  DatasetRecord record;
  std::vector<WorldPoint> kept_points;  // body points that survived in every view
  int dropped = 0;                      // points behind at least one camera
};

/// Projects body points into every camera, adds N(0, sigma^2) pixel noise per
/// axis and computes tight boxes. Points behind any camera are dropped from
/// all views so keypoint i corresponds across cameras.
inline RenderResult render_frame(const std::vector<CameraModel>& rig, const std::vector<WorldPoint>& body,
                                 double sigma_px, Rng& rng, std::int64_t frame = 0, const WorldPoint& gt = WorldPoint::Zero()) {
  RenderResult out;
  out.record.frame = frame;
  out.record.gt = gt;
  std::vector<std::vector<PixelPoint>> clean(rig.size());
  for (const auto& p : body) {
    bool visible = true;
    std::vector<PixelPoint> px;
    px.reserve(rig.size());
    for (const auto& cam : rig) {
      const Vec3 h = cam.projection().p * homogeneous(p);
      if (!(h.z() > 1e-12)) {
        visible = false;
        break;
      }
      px.push_back(cam.project(p).pixel);
    }
    if (!visible) {
      ++out.dropped;
      continue;
    }
    out.kept_points.push_back(p);
    for (std::size_t c = 0; c < rig.size(); ++c) clean[c].push_back(px[c]);
  }
  for (std::size_t c = 0; c < rig.size(); ++c) {
    if (clean[c].empty()) fail(ErrorKind::EmptyView, "camera " + std::to_string(rig[c].id) + " sees no body point");
    CameraObservation obs;
    obs.camera_id = rig[c].id;
    obs.points = std::move(clean[c]);
    if (sigma_px > 0.0)
      for (auto& q : obs.points) q += PixelPoint(rng.normal(0.0, sigma_px), rng.normal(0.0, sigma_px));
    obs.bbox = BoundingBox::tight(obs.points);
    out.record.cams.push_back(std::move(obs));
  }
  return out;
}

struct CalibrationSet {
  int camera_id = 0;
  std::vector<WorldPoint> world;
  std::vector<PixelPoint> pixel;

  friend bool operator==(const CalibrationSet&, const CalibrationSet&) = default;
};

struct Manifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::string scene = "walk-2cam";
  int k = 0;
  std::vector<int> camera_ids;
  std::vector<int> image_width;
  std::vector<int> image_height;
  AreaBounds area;
  double z_min = 0.0;
  double z_max = 1.7;
  bool planar = true;
  std::vector<Mat34> true_projections;  // synthetic only; empty when unknown
  std::vector<CalibrationSet> calibration;
  std::uint64_t seed = 0;
  double keypoint_sigma = 0.0;
  int points_per_body = 0;
  double body_height = 0.0;
  double body_radius = 0.0;
  int frames = 0;
  std::string pattern = "random";
  double speed = 0.0;
  double camera_offset = 0.0;   // perturbation already applied to the records
  double keypoint_noise = 0.0;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct Dataset {
  Manifest manifest;
  std::vector<DatasetRecord> records;
  std::vector<std::string> warnings;
};

/// Synthetic scene with the per-frame body points kept in memory.
struct GeneratedScene {
  Dataset dataset;
  std::vector<std::vector<WorldPoint>> body_points;
  Trajectory trajectory;
};

inline GeneratedScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  GeneratedScene out;
  Rng traj_rng(derive_seed(spec.seed, 1));
  out.trajectory = gen_trajectory(spec.pattern, spec.frames, spec.speed, spec, traj_rng);

  Manifest& m = out.dataset.manifest;
  m.scene = spec.name;
  m.k = static_cast<int>(spec.cameras.size());
  for (const auto& cam : spec.cameras) {
    m.camera_ids.push_back(cam.id);
    m.image_width.push_back(cam.image_width);
    m.image_height.push_back(cam.image_height);
    m.true_projections.push_back(cam.projection().p);
  }
  m.area = spec.area;
  m.z_min = 0.0;
  m.z_max = spec.body_height > 0.0 ? spec.body_height : 1.0;
  m.planar = true;
  m.seed = spec.seed;
  m.keypoint_sigma = spec.keypoint_sigma;
  m.points_per_body = spec.points_per_body;
  m.body_height = spec.body_height;
  m.body_radius = spec.body_radius;
  m.frames = spec.frames;
  m.pattern = to_string(spec.pattern);
  m.speed = spec.speed;

  const std::uint64_t frame_seed = derive_seed(spec.seed, 2);
  for (const auto& tp : out.trajectory.points) {
    Rng rng = frame_rng(frame_seed, tp.frame);
    auto body = gen_body_points(tp.center, spec.points_per_body, spec.body_height, spec.body_radius, rng);
    auto rendered = render_frame(spec.cameras, body, spec.keypoint_sigma, rng, tp.frame, tp.center);
    out.dataset.records.push_back(std::move(rendered.record));
    out.body_points.push_back(std::move(rendered.kept_points));
  }

  // Calibration targets scattered through the walkable volume, observed with
  // the same pixel noise as the keypoints.
  Rng calib_rng(derive_seed(spec.seed, 3));
  for (const auto& cam : spec.cameras) {
    CalibrationSet cs;
    cs.camera_id = cam.id;
    while (static_cast<int>(cs.world.size()) < spec.calibration_points) {
      const WorldPoint w(calib_rng.uniform(spec.area.x_min, spec.area.x_max),
                         calib_rng.uniform(spec.area.y_min, spec.area.y_max),
                         calib_rng.uniform(0.0, m.z_max));
      const Vec3 h = cam.projection().p * homogeneous(w);
      if (!(h.z() > 0.1)) continue;
      PixelPoint px = cam.project(w).pixel;
      if (spec.keypoint_sigma > 0.0)
        px += PixelPoint(calib_rng.normal(0.0, spec.keypoint_sigma), calib_rng.normal(0.0, spec.keypoint_sigma));
      cs.world.push_back(w);
      cs.pixel.push_back(px);
    }
    m.calibration.push_back(std::move(cs));
  }
  return out;
}

/// Adds one rigid offset, uniform in [-max_offset, max_offset]^2, to every
/// keypoint and the box of each camera in each frame.
inline std::vector<DatasetRecord> inject_camera_offset(std::vector<DatasetRecord> records, double max_offset,
                                                       std::uint64_t seed) {
  if (max_offset < 0.0) fail(ErrorKind::Precondition, "max_offset must be >= 0");
  if (max_offset == 0.0) return records;
  for (auto& rec : records) {
    Rng rng = frame_rng(seed, rec.frame);
    for (auto& cam : rec.cams) {
      const PixelPoint d(rng.uniform(-max_offset, max_offset), rng.uniform(-max_offset, max_offset));
      for (auto& p : cam.points) p += d;
      if (cam.bbox) *cam.bbox = {cam.bbox->x0 + d.x(), cam.bbox->y0 + d.y(), cam.bbox->x1 + d.x(), cam.bbox->y1 + d.y()};
    }
  }
  return records;
}

/// Shifts every keypoint independently by N(0, sigma^2) per axis and
/// recomputes the boxes.
inline std::vector<DatasetRecord> inject_keypoint_noise(std::vector<DatasetRecord> records, double sigma,
                                                        std::uint64_t seed) {
  if (sigma < 0.0) fail(ErrorKind::Precondition, "sigma must be >= 0");
  if (sigma == 0.0) return records;
  for (auto& rec : records) {
    Rng rng = frame_rng(seed, rec.frame);
    for (auto& cam : rec.cams) {
      for (auto& p : cam.points) p += PixelPoint(rng.normal(0.0, sigma), rng.normal(0.0, sigma));
      cam.bbox = BoundingBox::tight(cam.points);
    }
  }
  return records;
}

/// Raw observations for the sampler: keypoints as-is, or `bbox_points`
/// uniform samples from each camera's box (drawn from frame_rng(seed, frame)).
inline std::vector<ObservationSet> to_observations(const std::vector<DatasetRecord>& records, ObservationSource source,
                                                   int bbox_points, std::uint64_t seed) {
  std::vector<ObservationSet> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    ObservationSet obs;
    obs.frame = rec.frame;
    obs.center = rec.gt;
    Rng rng = frame_rng(seed, rec.frame);
    for (const auto& cam : rec.cams) {
      CameraObservation co;
      co.camera_id = cam.camera_id;
      co.bbox = cam.bbox;
      if (source == ObservationSource::Keypoint) {
        co.points = cam.points;
      } else {
        if (!cam.bbox) fail(ErrorKind::Precondition, "bbox source needs boxes");
        co.points = sample_bbox_points(*cam.bbox, bbox_points, rng);
      }
      obs.cameras.push_back(std::move(co));
    }
    out.push_back(std::move(obs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files: <dir>/manifest.json and <dir>/records.jsonl
// records line: {"frame":F,"gt":[x,y,z],"cams":[{"id":I,"bbox":[x0,y0,x1,y1],"kps":[[u,v],...]}]}

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kRecordsFile = "records.jsonl";

namespace detail {

inline nlohmann::json to_json(const Mat34& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({p(r, 0), p(r, 1), p(r, 2), p(r, 3)});
  return rows;
}

inline Mat34 mat34_from_json(const nlohmann::json& j) {
  Mat34 p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) p(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  return p;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const Manifest& m) {
  using nlohmann::json;
  json cams = json::array();
  for (int i = 0; i < m.k; ++i) {
    json c = {{"id", m.camera_ids[static_cast<std::size_t>(i)]},
              {"width", m.image_width[static_cast<std::size_t>(i)]},
              {"height", m.image_height[static_cast<std::size_t>(i)]}};
    if (!m.true_projections.empty()) c["P"] = detail::to_json(m.true_projections[static_cast<std::size_t>(i)]);
    cams.push_back(c);
  }
  json calib = json::array();
  for (const auto& cs : m.calibration) {
    json world = json::array();
    json pixel = json::array();
    for (const auto& w : cs.world) world.push_back({w.x(), w.y(), w.z()});
    for (const auto& p : cs.pixel) pixel.push_back({p.x(), p.y()});
    calib.push_back({{"camera", cs.camera_id}, {"world", world}, {"pixel", pixel}});
  }
  return {{"version", m.version},
          {"scene", m.scene},
          {"k", m.k},
          {"cameras", cams},
          {"area", {m.area.x_min, m.area.x_max, m.area.y_min, m.area.y_max}},
          {"z_range", {m.z_min, m.z_max}},
          {"planar", m.planar},
          {"calibration", calib},
          {"seed", m.seed},
          {"keypoint_sigma", m.keypoint_sigma},
          {"points_per_body", m.points_per_body},
          {"body_height", m.body_height},
          {"body_radius", m.body_radius},
          {"frames", m.frames},
          {"pattern", m.pattern},
          {"speed", m.speed},
          {"camera_offset", m.camera_offset},
          {"keypoint_noise", m.keypoint_noise}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != Manifest::kVersion)
      fail(ErrorKind::UnknownVersion, "manifest version " + std::to_string(m.version) + " is not supported");
    m.scene = j.at("scene").get<std::string>();
    m.k = j.at("k").get<int>();
    const auto& cams = j.at("cameras");
    if (static_cast<int>(cams.size()) != m.k) fail(ErrorKind::CameraCountMismatch, "manifest k does not match cameras");
    bool has_p = true;
    for (const auto& c : cams) {
      m.camera_ids.push_back(c.at("id").get<int>());
      m.image_width.push_back(c.at("width").get<int>());
      m.image_height.push_back(c.at("height").get<int>());
      if (m.image_width.back() <= 0 || m.image_height.back() <= 0)
        fail(ErrorKind::Parse, "image dimensions must be positive");
      has_p = has_p && c.contains("P");
    }
    if (has_p)
      for (const auto& c : cams) m.true_projections.push_back(detail::mat34_from_json(c.at("P")));
    const auto& a = j.at("area");
    m.area = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>(), a.at(3).get<double>()};
    m.z_min = j.at("z_range").at(0).get<double>();
    m.z_max = j.at("z_range").at(1).get<double>();
    m.planar = j.at("planar").get<bool>();
    for (const auto& cj : j.at("calibration")) {
      CalibrationSet cs;
      cs.camera_id = cj.at("camera").get<int>();
      for (const auto& w : cj.at("world")) cs.world.emplace_back(w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>());
      for (const auto& p : cj.at("pixel")) cs.pixel.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      m.calibration.push_back(std::move(cs));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.keypoint_sigma = j.at("keypoint_sigma").get<double>();
    m.points_per_body = j.at("points_per_body").get<int>();
    m.body_height = j.at("body_height").get<double>();
    m.body_radius = j.at("body_radius").get<double>();
    m.frames = j.at("frames").get<int>();
    m.pattern = j.at("pattern").get<std::string>();
    m.speed = j.at("speed").get<double>();
    m.camera_offset = j.at("camera_offset").get<double>();
    m.keypoint_noise = j.at("keypoint_noise").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("manifest: ") + e.what());
  }
  return m;
}

inline std::string record_to_line(const DatasetRecord& rec) {
  using nlohmann::json;
  json cams = json::array();
  for (const auto& c : rec.cams) {
    json kps = json::array();
    for (const auto& p : c.points) kps.push_back({p.x(), p.y()});
    const BoundingBox b = c.bbox.value_or(BoundingBox::tight(c.points));
    cams.push_back({{"id", c.camera_id}, {"bbox", {b.x0, b.y0, b.x1, b.y1}}, {"kps", kps}});
  }
  const json j = {{"frame", rec.frame}, {"gt", {rec.gt.x(), rec.gt.y(), rec.gt.z()}}, {"cams", cams}};
  return j.dump();
}

inline DatasetRecord record_from_line(const std::string& line, std::size_t line_no) {
  DatasetRecord rec;
  try {
    const auto j = nlohmann::json::parse(line);
    rec.frame = j.at("frame").get<std::int64_t>();
    const auto& gt = j.at("gt");
    rec.gt = {gt.at(0).get<double>(), gt.at(1).get<double>(), gt.at(2).get<double>()};
    for (const auto& cj : j.at("cams")) {
      CameraObservation c;
      c.camera_id = cj.at("id").get<int>();
      const auto& b = cj.at("bbox");
      c.bbox = BoundingBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      for (const auto& p : cj.at("kps")) c.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      rec.cams.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, "records line " + std::to_string(line_no) + ": " + e.what());
  }
  return rec;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kManifestFile);
    if (!out) fail(ErrorKind::Precondition, "cannot write " + (dir / kManifestFile).string());
    out << manifest_to_json(ds.manifest).dump(2) << '\n';
  }
  std::ofstream out(dir / kRecordsFile);
  if (!out) fail(ErrorKind::Precondition, "cannot write " + (dir / kRecordsFile).string());
  for (const auto& rec : ds.records) out << record_to_line(rec) << '\n';
}

/// Reads and validates a dataset. Structural problems throw; consistency
/// issues that do not prevent use are returned as warnings.
inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / kManifestFile);
    if (!in) fail(ErrorKind::Parse, "cannot open " + (dir / kManifestFile).string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, std::string("manifest: ") + e.what());
    }
    ds.manifest = manifest_from_json(j);
  }
  std::ifstream in(dir / kRecordsFile);
  if (!in) fail(ErrorKind::Parse, "cannot open " + (dir / kRecordsFile).string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto rec = record_from_line(line, line_no);
    if (static_cast<int>(rec.cams.size()) != ds.manifest.k)
      fail(ErrorKind::CameraCountMismatch, "records line " + std::to_string(line_no) + ": expected " +
                                               std::to_string(ds.manifest.k) + " cameras, found " +
                                               std::to_string(rec.cams.size()));
    if (!ds.records.empty() && rec.frame <= ds.records.back().frame)
      fail(ErrorKind::Parse, "records line " + std::to_string(line_no) + ": frame ids must increase");
    ds.records.push_back(std::move(rec));
  }
  if (ds.manifest.planar && !ds.records.empty()) {
    const double z0 = ds.records.front().gt.z();
    for (const auto& r : ds.records) {
      if (std::abs(r.gt.z() - z0) > 1e-9) {
        ds.warnings.push_back("manifest is planar but ground-truth z varies (frame " + std::to_string(r.frame) + ")");
        break;
      }
    }
  }
  return ds;
}

/// Contiguous split: the last `test_fraction` of frames form the test
/// segment, so train and test never share a stretch of trajectory.
struct Split {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
};

inline Split split_dataset(const std::vector<DatasetRecord>& records, double test_fraction) {
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0)) fail(ErrorKind::Config, "test_fraction must be in (0, 1)");
  const auto n = records.size();
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, n > 1 ? 1 : 0, n > 0 ? n - 1 : 0);
  Split s;
  s.train.assign(records.begin(), records.end() - static_cast<std::ptrdiff_t>(n_test));
  s.test.assign(records.end() - static_cast<std::ptrdiff_t>(n_test), records.end());
  return s;
}

}  // namespace mom
