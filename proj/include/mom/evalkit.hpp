#pragma once

#include "mom/error.hpp"
#include "mom/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace mom {

enum class DistanceMode { Planar, Full3D };

inline DistanceMode parse_distance_mode(const std::string& s) {
  if (s == "planar") return DistanceMode::Planar;
  if (s == "3d") return DistanceMode::Full3D;
  fail(ErrorKind::Config, "unknown distance mode '" + s + "'");
}

inline std::string to_string(DistanceMode m) { return m == DistanceMode::Planar ? "planar" : "3d"; }

inline constexpr std::array<double, 4> kAccThresholds = {0.2, 0.3, 0.4, 0.5};

struct MetricsReport {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population
  std::array<double, 4> acc{};  // percent, for kAccThresholds
  double ate = 0.0;
  double rpe = 0.0;
  std::size_t count = 0;
  DistanceMode mode = DistanceMode::Full3D;
};

struct PositionErrors {
  std::vector<double> distances;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;
};

inline Vec3 error_vector(const WorldPoint& pred, const WorldPoint& gt, DistanceMode mode) {
  Vec3 d = pred - gt;
  if (mode == DistanceMode::Planar) d.z() = 0.0;
  return d;
}

inline PositionErrors position_errors(const std::vector<WorldPoint>& pred, const std::vector<WorldPoint>& gt,
                                      DistanceMode mode) {
  if (pred.size() != gt.size()) fail(ErrorKind::FrameMismatch, "prediction and ground-truth lengths differ");
  if (pred.empty()) fail(ErrorKind::EmptyInput, "no frames");
  PositionErrors out;
  out.distances.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.distances.push_back(error_vector(pred[i], gt[i], mode).norm());
  const auto n = static_cast<double>(out.distances.size());
  double sum = 0.0;
  for (double d : out.distances) sum += d;
  out.mean = sum / n;
  double var = 0.0;
  for (double d : out.distances) var += (d - out.mean) * (d - out.mean);
  out.std = std::sqrt(var / n);
  std::vector<double> sorted = out.distances;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  out.median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return out;
}

/// Percentage of distances strictly below tau.
inline double acc_at(const std::vector<double>& distances, double tau) {
  if (distances.empty()) fail(ErrorKind::EmptyInput, "no distances");
  if (!(tau > 0.0)) fail(ErrorKind::Precondition, "tau must be positive");
  std::size_t hits = 0;
  for (double d : distances) hits += d < tau ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(distances.size());
}

struct TrajectoryErrors {
  double ate = 0.0;
  double rpe = 0.0;
};

/// ATE: RMS of per-frame position errors, no alignment. RPE: RMS over t of
/// the error in the displacement from t to t + gap.
inline TrajectoryErrors trajectory_errors(const std::vector<WorldPoint>& pred, const std::vector<WorldPoint>& gt,
                                          DistanceMode mode, std::size_t gap = 1) {
  if (pred.size() != gt.size()) fail(ErrorKind::FrameMismatch, "prediction and ground-truth lengths differ");
  if (gap < 1) fail(ErrorKind::Precondition, "gap must be >= 1");
  if (pred.size() < gap + 1) fail(ErrorKind::EmptyInput, "too few frames for RPE");
  TrajectoryErrors out;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += error_vector(pred[i], gt[i], mode).squaredNorm();
  out.ate = std::sqrt(sum / static_cast<double>(pred.size()));
  double rsum = 0.0;
  const std::size_t terms = pred.size() - gap;
  for (std::size_t t = 0; t < terms; ++t) {
    const Vec3 d = error_vector(pred[t + gap], pred[t], mode) - error_vector(gt[t + gap], gt[t], mode);
    rsum += d.squaredNorm();
  }
  out.rpe = std::sqrt(rsum / static_cast<double>(terms));
  return out;
}

inline MetricsReport evaluate(const std::vector<WorldPoint>& pred, const std::vector<WorldPoint>& gt, DistanceMode mode,
                              std::size_t gap = 1) {
  const auto pe = position_errors(pred, gt, mode);
  MetricsReport r;
  r.mean = pe.mean;
  r.median = pe.median;
  r.std = pe.std;
  for (std::size_t i = 0; i < kAccThresholds.size(); ++i) r.acc[i] = acc_at(pe.distances, kAccThresholds[i]);
  if (pred.size() >= gap + 1) {
    const auto te = trajectory_errors(pred, gt, mode, gap);
    r.ate = te.ate;
    r.rpe = te.rpe;
  } else {
    // single frame: no displacement to compare
    r.ate = pe.distances.front();
  }
  r.count = pred.size();
  r.mode = mode;
  return r;
}

inline constexpr const char* kReportHeader = "method,mean,median,std,ate,rpe,acc02,acc03,acc04,acc05,best_flags";

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Table-shaped CSV. best_flags lists, separated by ';', the columns where
/// this row is best (lowest error or highest accuracy); ties mark every tied row.
inline std::string report(const std::vector<MetricsReport>& reports, const std::vector<std::string>& labels) {
  if (reports.size() != labels.size()) fail(ErrorKind::Precondition, "one label per report");
  static constexpr std::array<const char*, 9> kCols = {"mean", "median", "std", "ate", "rpe",
                                                       "acc02", "acc03", "acc04", "acc05"};
  auto values = [](const MetricsReport& r) {
    return std::array<double, 9>{r.mean, r.median, r.std, r.ate, r.rpe, r.acc[0], r.acc[1], r.acc[2], r.acc[3]};
  };
  std::array<double, 9> best{};
  for (std::size_t c = 0; c < 9; ++c) {
    const bool higher = c >= 5;
    best[c] = higher ? -INFINITY : INFINITY;
    for (const auto& r : reports) best[c] = higher ? std::max(best[c], values(r)[c]) : std::min(best[c], values(r)[c]);
  }
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto v = values(reports[i]);
    out << labels[i];
    std::string flags;
    for (std::size_t c = 0; c < 9; ++c) {
      out << ',' << format_number(v[c]);
      if (v[c] == best[c]) flags += (flags.empty() ? "" : ";") + std::string(kCols[c]);
    }
    out << ',' << flags << '\n';
  }
  return out.str();
}

}  // namespace mom
