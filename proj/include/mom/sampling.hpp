#pragma once

#include "mom/error.hpp"
#include "mom/geometry.hpp"
#include "mom/random.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mom {

struct BoundingBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool valid() const { return x0 < x1 && y0 < y1; }
  bool contains(const PixelPoint& p) const { return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1; }

  static BoundingBox tight(const std::vector<PixelPoint>& pts) {
    BoundingBox b{pts.at(0).x(), pts.at(0).y(), pts.at(0).x(), pts.at(0).y()};
    for (const auto& p : pts) {
      b.x0 = std::min(b.x0, p.x());
      b.y0 = std::min(b.y0, p.y());
      b.x1 = std::max(b.x1, p.x());
      b.y1 = std::max(b.y1, p.y());
    }
    return b;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct CameraObservation {
  int camera_id = 0;
  std::vector<PixelPoint> points;
  std::optional<BoundingBox> bbox;
};

/// Raw body observations of one frame across cameras.
struct ObservationSet {
  std::int64_t frame = 0;
  std::vector<CameraObservation> cameras;
  std::vector<WorldPoint> world_points;  // optional
  WorldPoint center = WorldPoint::Zero();
};

enum class ObservationSource { Keypoint, Bbox };

inline ObservationSource parse_source(const std::string& s) {
  if (s == "keypoint") return ObservationSource::Keypoint;
  if (s == "bbox") return ObservationSource::Bbox;
  fail(ErrorKind::Config, "unknown observation source '" + s + "'");
}

inline std::string to_string(ObservationSource s) { return s == ObservationSource::Keypoint ? "keypoint" : "bbox"; }

template <class Point>
struct MeanEstimator {
  int m = 0;
  Point mean = Point::Zero();
};

inline constexpr int kEstimatorsPerBatch = 12;
inline constexpr int kBatchFeatures = 2 * kEstimatorsPerBatch;

struct EstimatorBatch {
  int camera_id = 0;
  std::array<MeanEstimator<PixelPoint>, kEstimatorsPerBatch> estimators{};

  /// Mean of the 12 estimator means; the decoder's pixel target.
  PixelPoint grand_mean() const {
    PixelPoint g = PixelPoint::Zero();
    for (const auto& e : estimators) g += e.mean;
    return g / static_cast<double>(kEstimatorsPerBatch);
  }
};

struct TrainingPair {
  std::int64_t frame = 0;
  std::vector<EstimatorBatch> inputs;     // one per camera, camera order of the frame
  WorldPoint target = WorldPoint::Zero();
  std::vector<PixelPoint> pixel_means;    // grand mean per camera
};

inline std::vector<PixelPoint> sample_bbox_points(const BoundingBox& box, int n, Rng& rng) {
  if (!box.valid()) fail(ErrorKind::ZeroAreaBox, "bounding box has zero area");
  if (n < 1) fail(ErrorKind::Precondition, "n must be >= 1");
  std::vector<PixelPoint> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(box.x0, box.x1);
    const double v = rng.uniform(box.y0, box.y1);
    pts.emplace_back(u, v);
  }
  return pts;
}

template <class Point>
MeanEstimator<Point> mean_estimator(const std::vector<Point>& points, const std::vector<std::size_t>& subset) {
  if (subset.empty()) fail(ErrorKind::EmptySubset, "subset is empty");
  std::vector<bool> seen(points.size(), false);
  Point sum = Point::Zero();
  for (std::size_t i : subset) {
    if (i >= points.size()) fail(ErrorKind::Precondition, "subset index out of range");
    if (seen[i]) fail(ErrorKind::DuplicateIndex, "duplicate subset index");
    seen[i] = true;
    sum += points[i];
  }
  return {static_cast<int>(subset.size()), sum / static_cast<double>(subset.size())};
}

/// m uniform in [1, n], then a uniform m-subset without replacement
/// (partial Fisher-Yates).
template <class Point>
MeanEstimator<Point> random_mean_estimator(const std::vector<Point>& points, Rng& rng,
                                           std::vector<std::size_t>& scratch) {
  const auto n = static_cast<std::int64_t>(points.size());
  const auto m = static_cast<std::size_t>(rng.uniform_int(1, n));
  scratch.resize(points.size());
  for (std::size_t i = 0; i < scratch.size(); ++i) scratch[i] = i;
  Point sum = Point::Zero();
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), n - 1));
    std::swap(scratch[i], scratch[j]);
    sum += points[scratch[i]];
  }
  return {static_cast<int>(m), sum / static_cast<double>(m)};
}

inline EstimatorBatch build_estimator_batch(const std::vector<PixelPoint>& points, Rng& rng, int camera_id = 0) {
  if (points.empty()) fail(ErrorKind::Precondition, "estimator batch needs at least one point");
  EstimatorBatch batch;
  batch.camera_id = camera_id;
  std::vector<std::size_t> scratch;
  for (auto& e : batch.estimators) e = random_mean_estimator(points, rng, scratch);
  return batch;
}

/// (2^n - 1)^2, the number of ordered pairs of nonempty subsets.
inline std::uint64_t pair_count(int n) {
  if (n < 1) fail(ErrorKind::Precondition, "n must be >= 1");
  if (n > 32) fail(ErrorKind::Overflow, "(2^n - 1)^2 exceeds 64 bits for n > 32");
  const std::uint64_t subsets = (std::uint64_t{1} << n) - 1;
  return subsets * subsets;
}

/// Builds one training pair for a frame from its observations.
inline TrainingPair build_training_pair(const ObservationSet& obs, Rng& rng) {
  TrainingPair pair;
  pair.frame = obs.frame;
  pair.inputs.reserve(obs.cameras.size());
  pair.pixel_means.reserve(obs.cameras.size());
  for (const auto& cam : obs.cameras) {
    if (cam.points.empty()) fail(ErrorKind::MissingCamera, "camera has no observations");
    pair.inputs.push_back(build_estimator_batch(cam.points, rng, cam.camera_id));
    pair.pixel_means.push_back(pair.inputs.back().grand_mean());
  }
  if (obs.world_points.empty()) {
    pair.target = obs.center;
  } else {
    std::vector<std::size_t> scratch;
    pair.target = random_mean_estimator(obs.world_points, rng, scratch).mean;
  }
  return pair;
}

/// Checks that every frame carries the same camera ids as `expected` (in order).
inline void require_cameras(const ObservationSet& obs, const std::vector<int>& expected) {
  if (obs.cameras.size() != expected.size())
    fail(ErrorKind::MissingCamera, "frame " + std::to_string(obs.frame) + " has " +
                                       std::to_string(obs.cameras.size()) + " cameras, expected " +
                                       std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (obs.cameras[i].camera_id != expected[i] || obs.cameras[i].points.empty())
      fail(ErrorKind::MissingCamera, "frame " + std::to_string(obs.frame) + " is missing camera " +
                                         std::to_string(expected[i]));
}

/// `pairs_per_frame` pairs per frame; frame f draws from frame_rng(seed, f),
/// so the output does not depend on frame order or on other frames.
inline std::vector<TrainingPair> build_training_pairs(const std::vector<ObservationSet>& dataset,
                                                      int pairs_per_frame, std::uint64_t seed) {
  if (pairs_per_frame < 1) fail(ErrorKind::Precondition, "pairs_per_frame must be >= 1");
  std::vector<TrainingPair> out;
  if (dataset.empty()) return out;
  std::vector<int> ids;
  for (const auto& c : dataset.front().cameras) ids.push_back(c.camera_id);
  out.reserve(dataset.size() * static_cast<std::size_t>(pairs_per_frame));
  for (const auto& obs : dataset) {
    require_cameras(obs, ids);
    if (!obs.center.allFinite()) fail(ErrorKind::Precondition, "non-finite ground truth");
    Rng rng = frame_rng(seed, obs.frame);
    for (int i = 0; i < pairs_per_frame; ++i) out.push_back(build_training_pair(obs, rng));
  }
  return out;
}

template <int D>
struct NormalityStats {
  std::size_t count = 0;
  Eigen::Matrix<double, D, 1> mean;
  Eigen::Matrix<double, D, D> covariance;
  Eigen::Matrix<double, D, 1> skewness;
  Eigen::Matrix<double, D, 1> excess_kurtosis;
};

/// Moments of a sample of estimator means. Covariance and moments use the
/// population (divide-by-N) convention; a constant axis reports zero
/// skewness and kurtosis.
template <int D>
NormalityStats<D> normality_stats(const std::vector<Eigen::Matrix<double, D, 1>>& samples) {
  using V = Eigen::Matrix<double, D, 1>;
  if (samples.size() < 100) fail(ErrorKind::Precondition, "normality_stats needs at least 100 samples");
  const auto n = static_cast<double>(samples.size());
  NormalityStats<D> s;
  s.count = samples.size();
  s.mean = V::Zero();
  for (const auto& x : samples) s.mean += x;
  s.mean /= n;
  s.covariance.setZero();
  V m3 = V::Zero();
  V m4 = V::Zero();
  for (const auto& x : samples) {
    const V d = x - s.mean;
    s.covariance += d * d.transpose();
    m3 += d.cwiseProduct(d).cwiseProduct(d);
    m4 += d.cwiseProduct(d).cwiseProduct(d).cwiseProduct(d);
  }
  s.covariance /= n;
  m3 /= n;
  m4 /= n;
  for (int i = 0; i < D; ++i) {
    const double var = s.covariance(i, i);
    if (var > 0.0) {
      s.skewness(i) = m3(i) / std::pow(var, 1.5);
      s.excess_kurtosis(i) = m4(i) / (var * var) - 3.0;
    } else {
      s.skewness(i) = 0.0;
      s.excess_kurtosis(i) = 0.0;
    }
  }
  return s;
}

}  // namespace mom
