#pragma once

#include "mom/error.hpp"
#include "mom/mom_net.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace mom {

// Checkpoints are JSON documents. Doubles are written with round-trip
// precision, so write -> read reproduces every parameter bit for bit.

inline constexpr const char* kCheckpointFormat = "mom-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"lambda", c.lambda},
          {"seed", c.seed},                   {"decoder_mode", to_string(c.decoder_mode)},
          {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},           {"pairs_per_frame", c.pairs_per_frame},
          {"local_hidden", c.local_hidden},   {"global_hidden", c.global_hidden},
          {"divergence_factor", c.divergence_factor}, {"cosine_decay", c.cosine_decay},
          {"source", to_string(c.source)},     {"bbox_points", c.bbox_points},
          {"test_fraction", c.test_fraction}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.decoder_mode = parse_decoder_mode(j.at("decoder_mode").get<std::string>());
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.pairs_per_frame = j.at("pairs_per_frame").get<int>();
  c.local_hidden = j.at("local_hidden").get<std::vector<int>>();
  c.global_hidden = j.at("global_hidden").get<std::vector<int>>();
  c.divergence_factor = j.at("divergence_factor").get<double>();
  c.cosine_decay = j.at("cosine_decay").get<bool>();
  c.source = parse_source(j.at("source").get<std::string>());
  c.bbox_points = j.at("bbox_points").get<int>();
  c.test_fraction = j.at("test_fraction").get<double>();
  return c;
}

namespace detail {

inline nlohmann::json matrix_to_json(const MatX& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return flat;
}

inline MatX matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  const auto flat = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) fail(ErrorKind::Parse, "parameter array has wrong size");
  MatX m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers)
    layers.push_back({{"in", l.in()},
                      {"out", l.out()},
                      {"activation", to_string(l.activation)},
                      {"weight", matrix_to_json(l.weight)},
                      {"bias", matrix_to_json(l.bias)}});
  return layers;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp mlp;
  for (const auto& lj : j) {
    DenseLayer l;
    const auto in = lj.at("in").get<Eigen::Index>();
    const auto out = lj.at("out").get<Eigen::Index>();
    const auto act = lj.at("activation").get<std::string>();
    if (act != "relu" && act != "linear") fail(ErrorKind::Parse, "unknown activation '" + act + "'");
    l.activation = act == "relu" ? Activation::Relu : Activation::Linear;
    l.weight = matrix_from_json(lj.at("weight"), out, in);
    l.bias = matrix_from_json(lj.at("bias"), out, 1);
    if (!mlp.layers.empty() && mlp.layers.back().out() != in) fail(ErrorKind::Parse, "inconsistent layer shapes");
    mlp.layers.push_back(std::move(l));
  }
  if (mlp.layers.empty()) fail(ErrorKind::Parse, "empty layer stack");
  return mlp;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  using nlohmann::json;
  const auto& m = ck.model;
  json local = json::array();
  for (const auto& l : m.encoder.local) local.push_back(detail::mlp_to_json(l));
  json decoder = json::array();
  for (const auto& p : m.decoder.projections) decoder.push_back(detail::matrix_to_json(p));
  json sizes = json::array();
  for (const auto& s : m.normalizer.image_size) sizes.push_back({s.x(), s.y()});
  const auto& n = m.normalizer;
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", config_to_json(ck.config)},
          {"camera_ids", m.camera_ids},
          {"normalizer",
           {{"image_size", sizes},
            {"world_min", {n.world_min.x(), n.world_min.y(), n.world_min.z()}},
            {"world_max", {n.world_max.x(), n.world_max.y(), n.world_max.z()}}}},
          {"encoder", {{"local", local}, {"global", detail::mlp_to_json(m.encoder.global)}}},
          {"decoder", decoder},
          {"epoch", ck.epoch},
          {"history",
           {{"train_loss", ck.history.train_total},
            {"train_loc", ck.history.train_loc},
            {"test_loss", ck.history.test_total},
            {"test_loc", ck.history.test_loc}}}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) fail(ErrorKind::Parse, "not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) fail(ErrorKind::UnknownVersion, "checkpoint version");
    ck.config = config_from_json(j.at("config"));
    auto& m = ck.model;
    m.camera_ids = j.at("camera_ids").get<std::vector<int>>();
    const auto& nj = j.at("normalizer");
    for (const auto& s : nj.at("image_size")) m.normalizer.image_size.emplace_back(s.at(0).get<double>(), s.at(1).get<double>());
    const auto lo = nj.at("world_min").get<std::vector<double>>();
    const auto hi = nj.at("world_max").get<std::vector<double>>();
    m.normalizer.world_min = {lo.at(0), lo.at(1), lo.at(2)};
    m.normalizer.world_max = {hi.at(0), hi.at(1), hi.at(2)};
    for (const auto& l : j.at("encoder").at("local")) m.encoder.local.push_back(detail::mlp_from_json(l));
    m.encoder.global = detail::mlp_from_json(j.at("encoder").at("global"));
    for (const auto& p : j.at("decoder")) m.decoder.projections.push_back(detail::matrix_from_json(p, 3, 4));
    if (m.encoder.local.size() != m.camera_ids.size() || m.decoder.projections.size() != m.camera_ids.size() ||
        m.normalizer.image_size.size() != m.camera_ids.size())
      fail(ErrorKind::Parse, "camera count differs between encoder, decoder and normalizer");
    Eigen::Index concat = 0;
    for (const auto& l : m.encoder.local) {
      if (l.in() != kBatchFeatures) fail(ErrorKind::Parse, "local stack input must be 24");
      concat += l.out();
    }
    if (m.encoder.global.in() != concat || m.encoder.global.out() != 3)
      fail(ErrorKind::Parse, "global stack shape does not match local features");
    ck.epoch = j.at("epoch").get<int>();
    const auto& h = j.at("history");
    ck.history.train_total = h.at("train_loss").get<std::vector<double>>();
    ck.history.train_loc = h.at("train_loc").get<std::vector<double>>();
    ck.history.test_total = h.at("test_loss").get<std::vector<double>>();
    ck.history.test_loc = h.at("test_loc").get<std::vector<double>>();
    if (static_cast<int>(ck.history.size()) != ck.epoch) fail(ErrorKind::Parse, "loss history length != epoch");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("checkpoint: ") + e.what());
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Precondition, "cannot write " + path.string());
  out << checkpoint_to_json(ck).dump() << '\n';
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Parse, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

/// `epoch,train_loss,test_loss`, using the localization term of each loss.
inline std::string loss_history_csv(const LossHistory& h) {
  std::ostringstream out;
  out << "epoch,train_loss,test_loss\n";
  char buf[96];
  for (std::size_t i = 0; i < h.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i + 1, h.train_loc[i], h.test_loc[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace mom
