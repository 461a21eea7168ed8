#pragma once

#include "mom/baseline.hpp"
#include "mom/checkpoint.hpp"
#include "mom/error.hpp"
#include "mom/evalkit.hpp"
#include "mom/mom_net.hpp"
#include "mom/scene.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mom::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kOutDirEnv = "MOM_OUT_DIR";

/// One configurable value of a subcommand.
struct OptionSpec {
  std::string key;   // config-file key and snapshot key
  std::string flag;  // long flag, e.g. "--lambda"
  json default_value;
  std::string help;
};

inline std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? std::string(env) : std::string("out");
}

inline std::vector<OptionSpec> options_for(const std::string& sub) {
  const TrainConfig tc;
  std::vector<OptionSpec> o = {{"out", "--out", default_out_dir(), "output directory (default $MOM_OUT_DIR or ./out)"}};
  if (sub == "gen") {
    const SceneSpec s = walk_2cam_spec();
    o.insert(o.end(), {{"scene", "--scene", s.name, "scene preset"},
                       {"frames", "--frames", s.frames, "number of frames"},
                       {"seed", "--seed", s.seed, "generation seed"},
                       {"sigma", "--sigma", s.keypoint_sigma, "keypoint pixel noise (std, px)"},
                       {"points", "--points", s.points_per_body, "body points per frame"},
                       {"pattern", "--pattern", to_string(s.pattern), "random | cross | square"},
                       {"speed", "--speed", s.speed, "walking speed (m/frame)"},
                       {"calib_points", "--calib-points", s.calibration_points, "calibration pairs per camera"}});
  } else if (sub == "train") {
    o.insert(o.end(), {{"data", "--data", "", "dataset directory"},
                       {"lambda", "--lambda", tc.lambda, "decoder loss weight"},
                       {"lr", "--lr", tc.learning_rate, "Adam learning rate"},
                       {"epochs", "--epochs", tc.epochs, "training epochs"},
                       {"batch", "--batch", tc.batch_size, "mini-batch size"},
                       {"seed", "--seed", tc.seed, "training seed"},
                       {"decoder", "--decoder", to_string(tc.decoder_mode), "linear | perspective"},
                       {"pairs_per_frame", "--pairs-per-frame", tc.pairs_per_frame, "training pairs per frame per epoch"},
                       {"source", "--source", to_string(tc.source), "keypoint | bbox"},
                       {"bbox_points", "--bbox-points", tc.bbox_points, "samples per box in bbox mode"},
                       {"test_fraction", "--test-fraction", tc.test_fraction, "held-out trailing fraction"},
                       {"predict_seed", "--predict-seed", PredictOptions{}.seed, "estimator seed for predictions"}});
  } else if (sub == "baseline") {
    const BaselineConfig bc;
    o.insert(o.end(), {{"data", "--data", "", "dataset directory"},
                       {"pnp_points", "--pnp-points", bc.pnp_points, "calibration pairs used by DLT"},
                       {"points", "--points", to_string(bc.points), "keypoints | bbox-center"},
                       {"split", "--split", "test", "test | all"},
                       {"test_fraction", "--test-fraction", tc.test_fraction, "held-out trailing fraction"}});
  } else if (sub == "eval") {
    o.insert(o.end(), {{"data", "--data", "", "dataset directory"},
                       {"pred", "--pred", json::array(), "LABEL=predictions.csv (repeatable)"},
                       {"mode", "--mode", "auto", "planar | 3d | auto (planar when the manifest says so)"},
                       {"gap", "--gap", 1, "RPE frame gap"}});
  } else if (sub == "sweep") {
    o.insert(o.end(), {{"data", "--data", "", "dataset directory"},
                       {"ckpt", "--ckpt", "", "checkpoint to evaluate"},
                       {"kind", "--kind", "camera-offset", "camera-offset | keypoint-noise"},
                       {"grid", "--grid", "0..19", "levels: A..B or comma list"},
                       {"seed", "--seed", 42, "perturbation seed"},
                       {"predict_seed", "--predict-seed", PredictOptions{}.seed, "estimator seed for predictions"},
                       {"mode", "--mode", "auto", "planar | 3d | auto"}});
  } else if (sub == "gradcheck") {
    o.insert(o.end(), {{"seeds", "--seeds", "1,2,3", "comma-separated seeds"},
                       {"eps", "--eps", 1e-5, "central-difference step"},
                       {"batch", "--batch", 4, "samples per check"}});
  } else {
    fail(ErrorKind::Config, "unknown subcommand '" + sub + "'");
  }
  return o;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> subs = {"gen", "train", "baseline", "eval", "sweep", "gradcheck"};
  return subs;
}

namespace detail {

inline json coerce(const OptionSpec& spec, const json& raw) {
  const auto& d = spec.default_value;
  try {
    if (raw.is_string() && !d.is_string() && !d.is_array()) {
      const std::string s = raw.get<std::string>();
      std::size_t used = 0;
      json v;
      if (d.is_number_unsigned()) v = std::stoull(s, &used);
      else if (d.is_number_integer()) v = std::stoll(s, &used);
      else if (d.is_number_float()) v = std::stod(s, &used);
      else if (d.is_boolean()) {
        if (s != "true" && s != "false") throw std::invalid_argument(s);
        v = s == "true";
        used = s.size();
      }
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    }
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "invalid value '" + raw.get<std::string>() + "' for " + spec.key);
  }
  if (d.is_array() && raw.is_string()) return json::array({raw});
  const bool ok = (d.is_number() && raw.is_number()) || (d.is_string() && raw.is_string()) ||
                  (d.is_boolean() && raw.is_boolean()) || (d.is_array() && raw.is_array());
  if (!ok) fail(ErrorKind::Config, "wrong type for " + spec.key);
  if (d.is_number_integer() && !raw.is_number_integer()) fail(ErrorKind::Config, spec.key + " must be an integer");
  return raw;
}

}  // namespace detail

/// Resolved settings for one subcommand: flags > config file > defaults.
/// Unknown config-file keys are rejected by name. The result, with the
/// subcommand under "subcommand", is what gets snapshotted.
inline json resolve_config(const std::string& sub, const json& flags, const std::optional<json>& file = std::nullopt) {
  const auto specs = options_for(sub);
  json out = json::object();
  for (const auto& s : specs) out[s.key] = s.default_value;
  auto apply = [&](const json& src, const char* origin) {
    for (auto it = src.begin(); it != src.end(); ++it) {
      if (it.key() == "subcommand") {
        if (it.value() != sub)
          fail(ErrorKind::Config, std::string(origin) + " is for subcommand " + it.value().dump() + ", not " + sub);
        continue;
      }
      const auto spec = std::find_if(specs.begin(), specs.end(), [&](const OptionSpec& s) { return s.key == it.key(); });
      if (spec == specs.end()) fail(ErrorKind::Config, std::string("unknown ") + origin + " key '" + it.key() + "'");
      out[it.key()] = detail::coerce(*spec, it.value());
    }
  };
  if (file) {
    if (!file->is_object()) fail(ErrorKind::Config, "config file must hold a JSON object");
    apply(*file, "config");
  }
  apply(flags, "flag");
  out["subcommand"] = sub;
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Precondition, "cannot write " + path.string());
  out << text;
}

inline void write_snapshot(const fs::path& out_dir, const json& cfg) {
  write_text(out_dir / (cfg.at("subcommand").get<std::string>() + "_config.json"), cfg.dump(2) + "\n");
}

inline std::string predictions_csv(const std::vector<std::int64_t>& frames, const std::vector<WorldPoint>& pts) {
  std::ostringstream out;
  out << "frame,x,y,z\n";
  for (std::size_t i = 0; i < pts.size(); ++i)
    out << frames[i] << ',' << format_number(pts[i].x()) << ',' << format_number(pts[i].y()) << ','
        << format_number(pts[i].z()) << '\n';
  return out.str();
}

struct Predictions {
  std::vector<std::int64_t> frames;
  std::vector<WorldPoint> points;
};

inline Predictions read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Parse, "cannot open " + path.string());
  Predictions p;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "frame,x,y,z") fail(ErrorKind::Parse, path.string() + ": bad header");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f, x, y, z;
    if (!std::getline(ls, f, ',') || !std::getline(ls, x, ',') || !std::getline(ls, y, ',') || !std::getline(ls, z))
      fail(ErrorKind::Parse, path.string() + " line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      p.frames.push_back(std::stoll(f));
      p.points.emplace_back(std::stod(x), std::stod(y), std::stod(z));
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, path.string() + " line " + std::to_string(line_no) + ": bad number");
    }
  }
  return p;
}

inline std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  if (const auto pos = s.find(".."); pos != std::string::npos) {
    const int a = std::stoi(s.substr(0, pos));
    const int b = std::stoi(s.substr(pos + 2));
    if (b < a) fail(ErrorKind::Config, "grid upper bound below lower bound");
    for (int i = a; i <= b; ++i) out.push_back(i);
    return out;
  }
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "bad grid value '" + item + "'");
    }
  }
  if (out.empty()) fail(ErrorKind::Config, "empty grid");
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoull(item));
  if (out.empty()) fail(ErrorKind::Config, "no seeds");
  return out;
}

inline DistanceMode resolve_mode(const std::string& mode, const Manifest& m) {
  if (mode == "auto") return m.planar ? DistanceMode::Planar : DistanceMode::Full3D;
  return parse_distance_mode(mode);
}

inline Normalizer normalizer_for(const Manifest& m) {
  Normalizer n;
  for (int i = 0; i < m.k; ++i)
    n.image_size.emplace_back(m.image_width[static_cast<std::size_t>(i)], m.image_height[static_cast<std::size_t>(i)]);
  n.world_min = {m.area.x_min, m.area.y_min, m.z_min};
  n.world_max = {m.area.x_max, m.area.y_max, m.z_max};
  return n;
}

inline TrainConfig train_config_from(const json& c) {
  TrainConfig tc;
  tc.lambda = c.at("lambda").get<double>();
  tc.learning_rate = c.at("lr").get<double>();
  tc.epochs = c.at("epochs").get<int>();
  tc.batch_size = c.at("batch").get<int>();
  tc.seed = c.at("seed").get<std::uint64_t>();
  tc.decoder_mode = parse_decoder_mode(c.at("decoder").get<std::string>());
  tc.pairs_per_frame = c.at("pairs_per_frame").get<int>();
  tc.source = parse_source(c.at("source").get<std::string>());
  tc.bbox_points = c.at("bbox_points").get<int>();
  tc.test_fraction = c.at("test_fraction").get<double>();
  tc.validate();
  return tc;
}

/// Observations of the train and test segments as the trainer sees them.
inline TrainingData training_data_for(const Dataset& ds, const TrainConfig& tc) {
  const auto split = split_dataset(ds.records, tc.test_fraction);
  TrainingData data;
  const std::uint64_t bbox_seed = derive_seed(tc.seed, 0xb0c5);
  data.train = to_observations(split.train, tc.source, tc.bbox_points, bbox_seed);
  data.test = to_observations(split.test, tc.source, tc.bbox_points, bbox_seed);
  data.camera_ids = ds.manifest.camera_ids;
  data.normalizer = normalizer_for(ds.manifest);
  return data;
}

inline Dataset load_dataset(const json& c, std::ostream& err) {
  const auto dir = c.at("data").get<std::string>();
  if (dir.empty()) fail(ErrorKind::Config, "--data is required");
  Dataset ds = read_dataset(dir);
  for (const auto& w : ds.warnings) err << "warning: " << w << '\n';
  return ds;
}

inline std::vector<std::int64_t> frame_ids(const std::vector<DatasetRecord>& recs) {
  std::vector<std::int64_t> ids;
  for (const auto& r : recs) ids.push_back(r.frame);
  return ids;
}

inline std::vector<WorldPoint> ground_truth(const std::vector<DatasetRecord>& recs) {
  std::vector<WorldPoint> gt;
  for (const auto& r : recs) gt.push_back(r.gt);
  return gt;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int run_gen(const json& c, std::ostream& out) {
  SceneSpec spec = scene_preset(c.at("scene").get<std::string>());
  spec.frames = c.at("frames").get<int>();
  spec.seed = c.at("seed").get<std::uint64_t>();
  spec.keypoint_sigma = c.at("sigma").get<double>();
  spec.points_per_body = c.at("points").get<int>();
  spec.pattern = parse_pattern(c.at("pattern").get<std::string>());
  spec.speed = c.at("speed").get<double>();
  spec.calibration_points = c.at("calib_points").get<int>();
  const fs::path dir = c.at("out").get<std::string>();
  const auto scene = generate_scene(spec);
  write_dataset(dir, scene.dataset);
  write_snapshot(dir, c);
  out << "wrote " << scene.dataset.records.size() << " frames to " << dir.string() << '\n';
  return 0;
}

inline int run_train(const json& c, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(c, err);
  const TrainConfig tc = train_config_from(c);
  const auto data = training_data_for(ds, tc);
  const fs::path dir = c.at("out").get<std::string>();
  const Checkpoint ck = train(data, tc);
  write_checkpoint(dir / "model.ckpt", ck);
  write_text(dir / "losses.csv", loss_history_csv(ck.history));
  PredictOptions po;
  po.seed = c.at("predict_seed").get<std::uint64_t>();
  const auto split = split_dataset(ds.records, tc.test_fraction);
  write_text(dir / "mom_predictions.csv", predictions_csv(frame_ids(split.test), predict(ck.model, data.test, po)));
  write_snapshot(dir, c);
  out << "trained " << ck.epoch << " epochs; final test loss " << format_number(ck.history.test_total.back())
      << "; wrote " << (dir / "model.ckpt").string() << '\n';
  return 0;
}

inline int run_baseline(const json& c, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(c, err);
  BaselineConfig bc;
  bc.pnp_points = c.at("pnp_points").get<int>();
  bc.points = parse_baseline_points(c.at("points").get<std::string>());
  const std::string which = c.at("split").get<std::string>();
  if (which != "test" && which != "all") fail(ErrorKind::Config, "split must be test or all");
  const auto records = which == "all" ? ds.records : split_dataset(ds.records, c.at("test_fraction").get<double>()).test;
  const BaselineModel model = calibrate_baseline(ds.manifest, bc);
  const fs::path dir = c.at("out").get<std::string>();
  write_text(dir / "baseline_predictions.csv", predictions_csv(frame_ids(records), baseline_predict(model, records, bc)));
  write_snapshot(dir, c);
  out << "baseline predictions for " << records.size() << " frames written to " << dir.string() << '\n';
  return 0;
}

inline int run_eval(const json& c, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(c, err);
  const auto mode = resolve_mode(c.at("mode").get<std::string>(), ds.manifest);
  const auto gap = c.at("gap").get<std::size_t>();
  std::map<std::int64_t, WorldPoint> gt;
  for (const auto& r : ds.records) gt.emplace(r.frame, r.gt);
  std::vector<MetricsReport> reports;
  std::vector<std::string> labels;
  for (const auto& item : c.at("pred")) {
    const auto s = item.get<std::string>();
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::Config, "--pred expects LABEL=FILE, got '" + s + "'");
    const auto p = read_predictions(s.substr(eq + 1));
    std::vector<WorldPoint> truth;
    for (auto f : p.frames) {
      const auto it = gt.find(f);
      if (it == gt.end()) fail(ErrorKind::FrameMismatch, "frame " + std::to_string(f) + " is not in the dataset");
      truth.push_back(it->second);
    }
    reports.push_back(evaluate(p.points, truth, mode, gap));
    labels.push_back(s.substr(0, eq));
  }
  if (reports.empty()) fail(ErrorKind::Config, "eval needs at least one --pred");
  const fs::path dir = c.at("out").get<std::string>();
  const std::string table = report(reports, labels);
  write_text(dir / "report.csv", table);
  write_snapshot(dir, c);
  out << table;
  return 0;
}

inline constexpr const char* kSweepHeader = "kind,level,mean,median,std,ate,rpe,acc02,acc03,acc04,acc05";

inline int run_sweep(const json& c, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(c, err);
  const auto ckpt_path = c.at("ckpt").get<std::string>();
  if (ckpt_path.empty()) fail(ErrorKind::Config, "--ckpt is required");
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const std::string kind = c.at("kind").get<std::string>();
  if (kind != "camera-offset" && kind != "keypoint-noise") fail(ErrorKind::Config, "unknown sweep kind '" + kind + "'");
  const auto grid = parse_grid(c.at("grid").get<std::string>());
  const auto mode = resolve_mode(c.at("mode").get<std::string>(), ds.manifest);
  const auto seed = c.at("seed").get<std::uint64_t>();
  PredictOptions po;
  po.seed = c.at("predict_seed").get<std::uint64_t>();

  const auto test = split_dataset(ds.records, ck.config.test_fraction).test;
  const auto gt = ground_truth(test);
  std::ostringstream csv;
  csv << kSweepHeader << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double level = grid[i];
    const std::uint64_t level_seed = derive_seed(seed, static_cast<std::uint64_t>(i) + 1);
    const auto perturbed = kind == "camera-offset" ? inject_camera_offset(test, level, level_seed)
                                                   : inject_keypoint_noise(test, level, level_seed);
    const auto obs = to_observations(perturbed, ck.config.source, ck.config.bbox_points, derive_seed(ck.config.seed, 0xb0c5));
    const auto r = evaluate(predict(ck.model, obs, po), gt, mode);
    csv << kind << ',' << format_number(level) << ',' << format_number(r.mean) << ',' << format_number(r.median) << ','
        << format_number(r.std) << ',' << format_number(r.ate) << ',' << format_number(r.rpe);
    for (double a : r.acc) csv << ',' << format_number(a);
    csv << '\n';
  }
  const fs::path dir = c.at("out").get<std::string>();
  write_text(dir / ("sweep_" + kind + ".csv"), csv.str());
  write_snapshot(dir, c);
  out << csv.str();
  return 0;
}

/// Gradient check on a small random model and batch for each seed, both
/// decoder modes, lambda 0 and 1.
inline std::string gradcheck_report(const std::vector<std::uint64_t>& seeds, double eps, int batch) {
  std::ostringstream csv;
  csv << "seed,decoder,lambda,parameters,max_rel_error,worst_parameter\n";
  for (auto seed : seeds) {
    TrainConfig tc;
    tc.seed = seed;
    tc.local_hidden = {6, 5};
    tc.global_hidden = {7, 4};
    Normalizer norm;
    norm.image_size = {Vec2(640, 480), Vec2(640, 480)};
    norm.world_min = Vec3(0, 0, 0);
    norm.world_max = Vec3(10, 10, 2);
    Rng rng(derive_seed(seed, 0x9c));
    std::vector<TrainingPair> pairs;
    for (int b = 0; b < batch; ++b) {
      ObservationSet obs;
      obs.frame = b;
      obs.center = WorldPoint(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 2));
      for (int c = 0; c < 2; ++c) {
        CameraObservation co;
        co.camera_id = c;
        for (int i = 0; i < 8; ++i) co.points.emplace_back(rng.uniform(0, 640), rng.uniform(0, 480));
        obs.cameras.push_back(co);
      }
      pairs.push_back(build_training_pair(obs, rng));
    }
    for (auto mode : {DecoderMode::Linear, DecoderMode::Perspective}) {
      for (double lambda : {0.0, 1.0}) {
        MomModel model = init_model({0, 1}, norm, tc);
        // random decoder so both rows and the depth row carry signal
        for (auto& p : model.decoder.projections)
          for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 4; ++k) p(r, k) += rng.uniform(-0.3, 0.3);
        const auto res = gradcheck(model, pack(model, pairs), lambda, mode, eps);
        csv << seed << ',' << to_string(mode) << ',' << lambda << ',' << res.checked << ','
            << format_number(res.max_rel_error) << ',' << res.worst_name << '\n';
      }
    }
  }
  return csv.str();
}

inline int run_gradcheck(const json& c, std::ostream& out) {
  const std::string csv =
      gradcheck_report(parse_seeds(c.at("seeds").get<std::string>()), c.at("eps").get<double>(), c.at("batch").get<int>());
  const fs::path dir = c.at("out").get<std::string>();
  write_text(dir / "gradcheck.csv", csv);
  write_snapshot(dir, c);
  out << csv;
  return 0;
}

inline int run(const json& c, std::ostream& out, std::ostream& err) {
  const auto sub = c.at("subcommand").get<std::string>();
  if (sub == "gen") return run_gen(c, out);
  if (sub == "train") return run_train(c, out, err);
  if (sub == "baseline") return run_baseline(c, out, err);
  if (sub == "eval") return run_eval(c, out, err);
  if (sub == "sweep") return run_sweep(c, out, err);
  if (sub == "gradcheck") return run_gradcheck(c, out);
  fail(ErrorKind::Config, "unknown subcommand '" + sub + "'");
}

inline std::string describe(const std::string& sub) {
  static const std::map<std::string, std::string> text = {
      {"gen", "generate a synthetic multi-camera dataset"},
      {"train", "train a MoM model and predict the held-out split"},
      {"baseline", "PnP + triangulation predictions"},
      {"eval", "metric report for one or more prediction files"},
      {"sweep", "camera-offset or keypoint-noise robustness grid"},
      {"gradcheck", "finite-difference gradient check report"}};
  return text.at(sub);
}

/// Entry point. Exit codes: 0 success, 1 failed validation or run, 2 usage error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Mean-of-Means human localization experiments", "mom"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::vector<std::string>>> raw;
  std::map<std::string, std::string> config_paths;
  std::map<std::string, CLI::App*> apps;
  for (const auto& sub : subcommands()) {
    CLI::App* sc = app.add_subcommand(sub, describe(sub));
    apps[sub] = sc;
    sc->add_option("--config", config_paths[sub], "JSON config file (flags take precedence)");
    for (const auto& spec : options_for(sub)) {
      std::string names = spec.flag;
      if (spec.key == "out") names = "-o," + names;
      auto* opt = sc->add_option(names, raw[sub][spec.key], spec.help);
      if (!spec.default_value.is_array()) opt->expected(1);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return 2;
  }

  try {
    for (const auto& [sub, sc] : apps) {
      if (!sc->parsed()) continue;
      json flags = json::object();
      for (const auto& spec : options_for(sub)) {
        if (sc->get_option(spec.flag)->count() == 0) continue;
        const auto& values = raw[sub][spec.key];
        flags[spec.key] = spec.default_value.is_array() ? json(values) : json(values.back());
      }
      std::optional<json> file;
      if (!config_paths[sub].empty()) {
        std::ifstream in(config_paths[sub]);
        if (!in) fail(ErrorKind::Config, "cannot open config " + config_paths[sub]);
        try {
          file = json::parse(in);
        } catch (const json::exception& e) {
          fail(ErrorKind::Config, std::string("config file: ") + e.what());
        }
      }
      return run(resolve_config(sub, flags, file), out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace mom::cli
