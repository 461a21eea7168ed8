#include "mom/baseline.hpp"
#include "mom/checkpoint.hpp"
#include "mom/classical.hpp"
#include "mom/cli.hpp"
#include "mom/evalkit.hpp"
#include "mom/mom_net.hpp"
#include "mom/sampling.hpp"
#include "mom/scene.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace mom;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "mom");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) fail(ErrorKind::Config, "mom " + args[1] + " exited with " + std::to_string(code) + ": " + err.str());
  return code;
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string f;
    while (std::getline(h, f, ',')) header.push_back(f);
  }
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream r(line);
    std::string f;
    std::map<std::string, std::string> row;
    for (const auto& name : header) {
      if (!std::getline(r, f, ',')) f.clear();
      row[name] = f;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Least-squares non-increasing fit (pool adjacent violators).
std::vector<double> monotone_nonincreasing(const std::vector<double>& y) {
  std::vector<double> value;
  std::vector<std::size_t> weight;
  for (double v : y) {
    value.push_back(v);
    weight.push_back(1);
    while (value.size() > 1 && value[value.size() - 2] < value.back()) {
      const std::size_t w = weight[weight.size() - 2] + weight.back();
      const double merged = (value[value.size() - 2] * weight[weight.size() - 2] + value.back() * weight.back()) / w;
      value.pop_back();
      weight.pop_back();
      value.back() = merged;
      weight.back() = w;
    }
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < value.size(); ++i) out.insert(out.end(), weight[i], value[i]);
  return out;
}

// ---------------------------------------------------------------------------

Outcome geometry_oracle() {
  const auto t0 = Clock::now();
  SceneSpec spec = walk_2cam_spec();
  spec.keypoint_sigma = 0.0;
  spec.calibration_points = 20;
  const GeneratedScene scene = generate_scene(spec);
  const Manifest& m = scene.dataset.manifest;

  double max_reproj = 0.0;
  double max_scale_err = 0.0;
  std::vector<Mat34> estimated;
  for (int c = 0; c < m.k; ++c) {
    CorrespondenceSet corr;
    for (std::size_t i = 0; i < m.calibration[c].world.size(); ++i)
      corr.push_back({m.calibration[c].world[i], m.calibration[c].pixel[i]});
    if (corr.size() != 20) fail(ErrorKind::Precondition, "expected 20 calibration pairs");
    Mat34 p = dlt_pnp(corr).p;
    Mat34 truth = m.true_projections[c] / m.true_projections[c].norm();
    p /= p.norm();
    if ((p - truth).norm() > (p + truth).norm()) p = -p;
    max_scale_err = std::max(max_scale_err, (p - truth).norm());
    estimated.push_back(p);
    for (double d : reprojection_error(p, corr).distances) max_reproj = std::max(max_reproj, d);
  }

  double max_tri = 0.0;
  for (std::size_t f = 0; f < scene.dataset.records.size(); ++f) {
    const auto& rec = scene.dataset.records[f];
    const auto& body = scene.body_points[f];
    for (std::size_t i = 0; i < body.size(); ++i) {
      MultiViewObservation obs;
      for (int c = 0; c < m.k; ++c) {
        obs.push_back({rec.cams[c].camera_id, rec.cams[c].points[i], estimated[c]});
        max_reproj = std::max(max_reproj, (project(estimated[c], body[i]).pixel - rec.cams[c].points[i]).norm());
      }
      max_tri = std::max(max_tri, (triangulate(obs) - body[i]).norm());
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = max_reproj < 1e-6 && max_tri < 1e-5 && secs < 10.0 && scene.dataset.records.size() == 5000;
  std::ostringstream d;
  d << scene.dataset.records.size() << " frames, max reprojection " << max_reproj << " px (< 1e-6), max triangulation "
    << max_tri << " m (< 1e-5), |P/|P| - P_true/|P_true|| " << max_scale_err << ", " << fmt("%.2f", secs)
    << " s (< 10)";
  o.detail = d.str();
  return o;
}

Outcome combinatorics() {
  bool ok = true;
  for (int n = 1; n <= 4; ++n) {
    std::uint64_t count = 0;
    const unsigned full = (1u << n);
    for (unsigned a = 1; a < full; ++a)
      for (unsigned b = 1; b < full; ++b) ++count;
    ok = ok && count == pair_count(n);
  }
  const std::uint64_t p20 = pair_count(20);
  ok = ok && p20 == 1099509530625ULL;
  return {ok, "enumeration n<=4 " + std::string(ok ? "matches" : "differs") + ", pair_count(20) = " + std::to_string(p20)};
}

Outcome clt_suite() {
  const auto t0 = Clock::now();
  const BoundingBox box{100.0, 50.0, 300.0, 450.0};
  Rng rng(2024);
  const int m = 20;
  const std::size_t count = 100000;
  std::vector<Vec2> means;
  means.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto pts = sample_bbox_points(box, m, rng);
    Vec2 s = Vec2::Zero();
    for (const auto& p : pts) s += p;
    means.push_back(s / m);
  }
  const auto st = normality_stats<2>(means);
  const double secs = seconds_since(t0);
  const Vec2 center((box.x0 + box.x1) / 2, (box.y0 + box.y1) / 2);
  bool ok = secs < 5.0;
  double worst_se = 0.0;
  for (int a = 0; a < 2; ++a) {
    ok = ok && std::abs(st.skewness(a)) < 0.05 && std::abs(st.excess_kurtosis(a)) < 0.1;
    const double se = std::sqrt(st.covariance(a, a) / static_cast<double>(count));
    worst_se = std::max(worst_se, std::abs(st.mean(a) - center(a)) / se);
  }
  ok = ok && worst_se < 3.0;
  std::ostringstream d;
  d << "skew (" << st.skewness.transpose() << ") kurt (" << st.excess_kurtosis.transpose()
    << ") center offset " << fmt("%.2f", worst_se) << " SE, " << fmt("%.2f", secs) << " s";
  return {ok, d.str()};
}

Outcome gradient_check() {
  const std::string csv = cli::gradcheck_report({1, 2, 3}, 1e-5, 4);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  double worst = 0.0;
  int rows = 0;
  std::set<std::string> modes;
  std::set<std::string> lambdas;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream r(line);
    std::string s;
    while (std::getline(r, s, ',')) f.push_back(s);
    modes.insert(f[1]);
    lambdas.insert(f[2]);
    worst = std::max(worst, std::stod(f[4]));
    ++rows;
  }
  const bool ok = rows == 12 && modes.size() == 2 && lambdas.size() == 2 && worst < 1e-4;
  return {ok, std::to_string(rows) + " checks (3 seeds x 2 decoders x 2 lambdas), max relative error " +
                  fmt("%.3g", worst) + " (< 1e-4)"};
}

struct EndToEnd {
  fs::path root;
  fs::path data;
  Checkpoint lambda1;
  Checkpoint lambda0;
};

MetricsReport evaluate_csv(const Dataset& ds, const fs::path& csv, DistanceMode mode) {
  std::map<std::int64_t, WorldPoint> gt;
  for (const auto& r : ds.records) gt.emplace(r.frame, r.gt);
  const auto p = cli::read_predictions(csv);
  std::vector<WorldPoint> truth;
  for (auto f : p.frames) truth.push_back(gt.at(f));
  return evaluate(p.points, truth, mode);
}

Outcome end_to_end(EndToEnd& e) {
  const auto t0 = Clock::now();
  const fs::path floor_dir = e.root / "floor";
  cli_run({"gen", "--sigma", "0", "-o", floor_dir.string()});
  cli_run({"baseline", "--data", floor_dir.string(), "-o", (floor_dir / "baseline").string()});
  const Dataset floor_ds = read_dataset(floor_dir);
  const auto floor = evaluate_csv(floor_ds, floor_dir / "baseline" / "baseline_predictions.csv", DistanceMode::Full3D);

  cli_run({"gen", "--sigma", "5", "--seed", "42", "-o", e.data.string()});
  cli_run({"baseline", "--data", e.data.string(), "-o", (e.root / "baseline").string()});
  cli_run({"train", "--data", e.data.string(), "--lambda", "1", "--seed", "42", "-o", (e.root / "mom").string()});
  const auto train_secs = seconds_since(t0);
  e.lambda1 = read_checkpoint(e.root / "mom" / "model.ckpt");

  const Dataset ds = read_dataset(e.data);
  const auto mode = cli::resolve_mode("auto", ds.manifest);
  const auto base = evaluate_csv(ds, e.root / "baseline" / "baseline_predictions.csv", mode);
  const auto mom = evaluate_csv(ds, e.root / "mom" / "mom_predictions.csv", mode);
  const bool ok = mom.mean < base.mean && mom.acc[1] > base.acc[1] && floor.mean < 1e-4;
  std::ostringstream d;
  d << to_string(mode) << " test split " << mom.count << " frames: MoM mean " << fmt("%.4f", mom.mean) << " m, Acc@0.3 "
    << fmt("%.2f", mom.acc[1]) << "% vs baseline mean " << fmt("%.4f", base.mean) << " m, Acc@0.3 "
    << fmt("%.2f", base.acc[1]) << "%; sigma=0 baseline mean " << fmt("%.3g", floor.mean) << " m (< 1e-4); "
    << fmt("%.0f", train_secs) << " s";
  return {ok, d.str()};
}

Outcome decoder_ablation(EndToEnd& e) {
  cli_run({"train", "--data", e.data.string(), "--lambda", "0", "--seed", "42", "-o", (e.root / "mom_l0").string()});
  e.lambda0 = read_checkpoint(e.root / "mom_l0" / "model.ckpt");
  const auto& h1 = e.lambda1.history.test_loc;
  const auto& h0 = e.lambda0.history.test_loc;
  const auto argmin = [](const std::vector<double>& v) {
    return static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin()) + 1;
  };
  const int e1 = argmin(h1);
  const int e0 = argmin(h0);
  const bool ok = h1.back() <= h0.back() && e1 < e0;
  std::ostringstream d;
  d << "final test loss_loc lambda=1 " << fmt("%.6g", h1.back()) << " vs lambda=0 " << fmt("%.6g", h0.back())
    << "; minimum at epoch " << e1 << " vs " << e0;
  return {ok, d.str()};
}

std::vector<std::map<std::string, std::string>> sweep(const EndToEnd& e, const std::string& kind) {
  const fs::path out = e.root / ("sweep_" + kind);
  cli_run({"sweep", "--data", e.data.string(), "--ckpt", (e.root / "mom" / "model.ckpt").string(), "--kind", kind,
           "--grid", "0..19", "-o", out.string()});
  return read_csv(out / ("sweep_" + kind + ".csv"));
}

Outcome camera_offset_pattern(const EndToEnd& e) {
  const auto rows = sweep(e, "camera-offset");
  std::vector<double> acc;
  for (const auto& r : rows) acc.push_back(std::stod(r.at("acc03")));
  const auto s = monotone_nonincreasing(acc);
  const double ref = s.front();
  double worst_upto12 = 0.0;
  for (std::size_t i = 0; i <= 12 && i < s.size(); ++i) worst_upto12 = std::max(worst_upto12, (ref - s[i]) / ref);
  const double at_max = (ref - s.back()) / ref;
  const bool ok = rows.size() == 20 && worst_upto12 < 0.10 && at_max > worst_upto12;
  std::ostringstream d;
  d << "Acc@0.3 raw:";
  for (double a : acc) d << ' ' << fmt("%.1f", a);
  d << "; smoothed relative drop <=12 px " << fmt("%.1f", 100 * worst_upto12) << "% (< 10%), at 19 px "
    << fmt("%.1f", 100 * at_max) << "%";
  return {ok, d.str()};
}

Outcome keypoint_noise_pattern(const EndToEnd& e) {
  const auto rows = sweep(e, "keypoint-noise");
  std::vector<double> a4, a5;
  for (const auto& r : rows) {
    a4.push_back(std::stod(r.at("acc04")));
    a5.push_back(std::stod(r.at("acc05")));
  }
  const auto range = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  };
  const double r4 = range(a4);
  const double r5 = range(a5);
  const bool ok = rows.size() == 20 && r4 < 5.0 && r5 < 5.0;
  return {ok, "Acc@0.4 range " + fmt("%.2f", r4) + " pp, Acc@0.5 range " + fmt("%.2f", r5) + " pp (< 5) over 0..19 px"};
}

// Independent straight-line metrics used as the oracle.
struct Reference {
  double mean, median, std, ate, rpe;
  std::array<double, 4> acc;
};

Reference reference_metrics(const std::vector<WorldPoint>& pred, const std::vector<WorldPoint>& gt, bool planar) {
  const std::size_t n = pred.size();
  std::vector<double> d(n);
  long double sum = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred[i].x() - gt[i].x(), dy = pred[i].y() - gt[i].y();
    const double dz = planar ? 0.0 : pred[i].z() - gt[i].z();
    d[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
    sum += d[i];
    sq += d[i] * d[i];
  }
  Reference r{};
  r.mean = static_cast<double>(sum / n);
  long double var = 0;
  for (double v : d) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(static_cast<double>(var / n));
  std::vector<double> s = d;
  std::sort(s.begin(), s.end());
  r.median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  r.ate = std::sqrt(static_cast<double>(sq / n));
  long double rs = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double acc2 = 0;
    for (int a = 0; a < (planar ? 2 : 3); ++a) {
      const double v = (pred[i + 1](a) - pred[i](a)) - (gt[i + 1](a) - gt[i](a));
      acc2 += v * v;
    }
    rs += acc2;
  }
  r.rpe = std::sqrt(static_cast<double>(rs / (n - 1)));
  const double taus[4] = {0.2, 0.3, 0.4, 0.5};
  for (int t = 0; t < 4; ++t) {
    std::size_t c = 0;
    for (double v : d) c += v < taus[t];
    r.acc[t] = 100.0 * static_cast<double>(c) / static_cast<double>(n);
  }
  return r;
}

Outcome metric_oracle() {
  Rng rng(99);
  std::vector<WorldPoint> pred, gt;
  for (int i = 0; i < 1000; ++i) {
    const WorldPoint g(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 2));
    gt.push_back(g);
    pred.push_back(g + WorldPoint(rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3)));
  }
  double worst = 0.0;
  for (bool planar : {true, false}) {
    const auto got = evaluate(pred, gt, planar ? DistanceMode::Planar : DistanceMode::Full3D);
    const auto ref = reference_metrics(pred, gt, planar);
    for (auto [a, b] : {std::pair{got.mean, ref.mean}, {got.median, ref.median}, {got.std, ref.std},
                        {got.ate, ref.ate}, {got.rpe, ref.rpe}})
      worst = std::max(worst, std::abs(a - b));
    for (int t = 0; t < 4; ++t) worst = std::max(worst, std::abs(got.acc[t] - ref.acc[t]));
  }
  const std::vector<WorldPoint> g3 = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const std::vector<WorldPoint> p3 = {{1, 0, 0}, {1, 1, 0}, {2, 0, 1}};
  const auto hand = evaluate(p3, g3, DistanceMode::Full3D);
  const bool hand_ok = hand.ate == 1.0 && hand.rpe == std::sqrt(2.0);
  const bool ok = worst <= 1e-12 && hand_ok;
  return {ok, "1000-frame max deviation " + fmt("%.3g", worst) + " (<= 1e-12); 3-frame ATE " + fmt("%.17g", hand.ate) +
                  " RPE " + fmt("%.17g", hand.rpe) + (hand_ok ? " exact" : " WRONG")};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "mom_acceptance_det";
  fs::remove_all(root);
  const auto a = root / "a";
  const auto b = root / "b";
  const std::string data = (a / "gen").string();
  cli_run({"gen", "--frames", "200", "--sigma", "3", "-o", data});
  cli_run({"train", "--data", data, "--epochs", "4", "--batch", "32", "-o", (a / "train").string()});
  cli_run({"baseline", "--data", data, "-o", (a / "baseline").string()});
  cli_run({"eval", "--data", data, "--pred", "mom=" + (a / "train" / "mom_predictions.csv").string(), "--pred",
           "baseline=" + (a / "baseline" / "baseline_predictions.csv").string(), "-o", (a / "eval").string()});
  cli_run({"sweep", "--data", data, "--ckpt", (a / "train" / "model.ckpt").string(), "--kind", "keypoint-noise",
           "--grid", "0,4,8", "-o", (a / "sweep").string()});
  cli_run({"gradcheck", "--seeds", "5", "-o", (a / "gradcheck").string()});

  int compared = 0;
  std::vector<std::string> differing;
  for (const std::string sub : {"gen", "train", "baseline", "eval", "sweep", "gradcheck"}) {
    auto snap = nlohmann::json::parse(slurp(a / sub / (sub + "_config.json")));
    snap["out"] = (b / sub).string();
    const auto cfg = b / (sub + ".json");
    fs::create_directories(b);
    std::ofstream(cfg) << snap.dump(2);
    cli_run({sub, "--config", cfg.string()});
    for (const auto& entry : fs::directory_iterator(a / sub)) {
      if (!entry.is_regular_file() || entry.path().filename() == sub + "_config.json") continue;
      ++compared;
      if (slurp(entry.path()) != slurp(b / sub / entry.path().filename()))
        differing.push_back(sub + "/" + entry.path().filename().string());
    }
  }
  fs::remove_all(root);
  std::string d = std::to_string(compared) + " artifacts re-run from snapshots";
  if (differing.empty()) d += ", all bit-identical";
  for (const auto& f : differing) d += ", differs: " + f;
  return {differing.empty() && compared == 9, d};
}

}  // namespace

int main() {
  EndToEnd e;
  e.root = fs::temp_directory_path() / "mom_acceptance";
  fs::remove_all(e.root);
  e.data = e.root / "walk2cam_sigma5";
  bool trained = false;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"geometry and classical oracle", geometry_oracle},
      {"pair combinatorics", combinatorics},
      {"mean-estimator normality", clt_suite},
      {"gradient check", gradient_check},
      {"MoM beats PnP+triangulation", [&] {
         auto o = end_to_end(e);
         trained = true;
         return o;
       }},
      {"decoder loss ablation", [&] {
         if (!trained) return Outcome{false, "needs the end-to-end checkpoint"};
         return decoder_ablation(e);
       }},
      {"camera offset robustness", [&] {
         if (!trained) return Outcome{false, "needs the end-to-end checkpoint"};
         return camera_offset_pattern(e);
       }},
      {"keypoint noise robustness", [&] {
         if (!trained) return Outcome{false, "needs the end-to-end checkpoint"};
         return keypoint_noise_pattern(e);
       }},
      {"metric oracle", metric_oracle},
      {"snapshot determinism", determinism},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  fs::remove_all(e.root);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
