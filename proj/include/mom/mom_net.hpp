#pragma once

#include "mom/error.hpp"
#include "mom/geometry.hpp"
#include "mom/linalg.hpp"
#include "mom/random.hpp"
#include "mom/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace mom {

enum class Activation { Relu, Linear };
enum class DecoderMode { Linear, Perspective };

inline DecoderMode parse_decoder_mode(const std::string& s) {
  if (s == "linear") return DecoderMode::Linear;
  if (s == "perspective") return DecoderMode::Perspective;
  fail(ErrorKind::Config, "unknown decoder mode '" + s + "'");
}

inline std::string to_string(DecoderMode m) { return m == DecoderMode::Linear ? "linear" : "perspective"; }
inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "linear"; }

struct DenseLayer {
  MatX weight;  // out x in
  VecX bias;    // out
  Activation activation = Activation::Relu;

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }
};

struct Mlp {
  std::vector<DenseLayer> layers;

  Eigen::Index in() const { return layers.front().in(); }
  Eigen::Index out() const { return layers.back().out(); }
};

/// k local stacks (one per camera) feeding one global stack.
struct EncoderParams {
  std::vector<Mlp> local;
  Mlp global;
};

/// One learned 3x4 matrix per camera, acting on normalized coordinates.
struct DecoderParams {
  std::vector<Mat34> projections;
};

/// Pixels are mapped from the image rectangle and world coordinates from the
/// scene bounds, both affinely onto [-1, 1].
struct Normalizer {
  std::vector<Vec2> image_size;
  Vec3 world_min = Vec3::Zero();
  Vec3 world_max = Vec3::Ones();

  Vec2 pixel(std::size_t camera, const PixelPoint& p) const { return 2.0 * p.cwiseQuotient(image_size.at(camera)) - Vec2::Ones(); }

  Vec3 world(const WorldPoint& w) const {
    return (2.0 * (w - world_min)).cwiseQuotient(world_max - world_min) - Vec3::Ones();
  }

  WorldPoint denormalize_world(const Vec3& n) const {
    return world_min + (0.5 * (n + Vec3::Ones())).cwiseProduct(world_max - world_min);
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 400;
  int batch_size = 256;
  double lambda = 1.0;
  std::uint64_t seed = 42;
  DecoderMode decoder_mode = DecoderMode::Perspective;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int pairs_per_frame = 4;
  std::vector<int> local_hidden = {64, 64};
  std::vector<int> global_hidden = {128, 64};
  double divergence_factor = 1e3;
  bool cosine_decay = true;   // anneal the learning rate to 0 over `epochs`
  ObservationSource source = ObservationSource::Keypoint;
  int bbox_points = 20;      // samples per box in bbox mode
  double test_fraction = 0.2;

  void validate() const {
    if (!(learning_rate >= 0.0)) fail(ErrorKind::Config, "learning rate must be >= 0");
    if (!(lambda >= 0.0)) fail(ErrorKind::Config, "lambda must be >= 0");
    if (batch_size < 1) fail(ErrorKind::Config, "batch size must be >= 1");
    if (epochs < 0) fail(ErrorKind::Config, "epochs must be >= 0");
    if (pairs_per_frame < 1) fail(ErrorKind::Config, "pairs_per_frame must be >= 1");
    if (bbox_points < 1) fail(ErrorKind::Config, "bbox_points must be >= 1");
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0)) fail(ErrorKind::Config, "test_fraction must be in (0, 1)");
    if (local_hidden.empty() || global_hidden.empty()) fail(ErrorKind::Config, "hidden layer lists must be nonempty");
  }
};

struct MomModel {
  std::vector<int> camera_ids;
  EncoderParams encoder;
  DecoderParams decoder;
  Normalizer normalizer;

  std::size_t cameras() const { return encoder.local.size(); }
};

namespace detail {

inline DenseLayer he_uniform_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
  DenseLayer l;
  l.activation = act;
  l.weight.resize(out, in);
  l.bias = VecX::Zero(out);
  // He-uniform for ReLU layers, Glorot-uniform for the linear head
  const double limit = act == Activation::Relu ? std::sqrt(6.0 / static_cast<double>(in))
                                               : std::sqrt(6.0 / static_cast<double>(in + out));
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = rng.uniform(-limit, limit);
  return l;
}

inline Mlp make_mlp(Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out, bool linear_head, Rng& rng) {
  Mlp m;
  Eigen::Index prev = in;
  for (int h : hidden) {
    m.layers.push_back(he_uniform_layer(prev, h, Activation::Relu, rng));
    prev = h;
  }
  if (linear_head) m.layers.push_back(he_uniform_layer(prev, out, Activation::Linear, rng));
  return m;
}

}  // namespace detail

/// Fresh model. Local stacks are 24 -> hidden... with ReLU (the last hidden
/// width is the per-camera feature size); the global stack ends in a linear
/// 3-output layer. Decoder matrices start near [I | 0] plus a unit depth
/// offset so h[2] stays away from zero on the normalized cube.
inline MomModel init_model(const std::vector<int>& camera_ids, const Normalizer& norm, const TrainConfig& cfg) {
  cfg.validate();
  if (camera_ids.size() < 2) fail(ErrorKind::Precondition, "encoder needs k >= 2 cameras");
  if (norm.image_size.size() != camera_ids.size()) fail(ErrorKind::ShapeMismatch, "normalizer camera count");
  Rng rng(derive_seed(cfg.seed, 0x1417));
  MomModel m;
  m.camera_ids = camera_ids;
  m.normalizer = norm;
  Eigen::Index concat = 0;
  for (std::size_t k = 0; k < camera_ids.size(); ++k) {
    m.encoder.local.push_back(detail::make_mlp(kBatchFeatures, cfg.local_hidden, 0, false, rng));
    concat += m.encoder.local.back().out();
  }
  m.encoder.global = detail::make_mlp(concat, cfg.global_hidden, 3, true, rng);
  for (std::size_t k = 0; k < camera_ids.size(); ++k) {
    Mat34 p = Mat34::Zero();
    p.leftCols<3>() = Mat3::Identity();
    p(2, 3) = 2.0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) p(r, c) += rng.uniform(-0.01, 0.01);
    m.decoder.projections.push_back(p);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Flat parameter vector: local stacks, global stack, decoder matrices, each
// layer as row-major weight then bias, each P_k row-major.

inline std::size_t parameter_count(const MomModel& m) {
  std::size_t n = 0;
  auto add = [&](const Mlp& mlp) {
    for (const auto& l : mlp.layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  };
  for (const auto& l : m.encoder.local) add(l);
  add(m.encoder.global);
  n += 12 * m.decoder.projections.size();
  return n;
}

namespace detail {

template <class Model, class F>
void visit_tensors(Model& m, F&& f) {
  auto mlp = [&](auto& stack) {
    for (auto& l : stack.layers) {
      f(l.weight);
      f(l.bias);
    }
  };
  for (auto& l : m.encoder.local) mlp(l);
  mlp(m.encoder.global);
  for (auto& p : m.decoder.projections) f(p);
}

}  // namespace detail

inline VecX flatten(const MomModel& m) {
  VecX out(static_cast<Eigen::Index>(parameter_count(m)));
  Eigen::Index pos = 0;
  detail::visit_tensors(m, [&](const auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) out(pos++) = t(r, c);
  });
  return out;
}

inline void unflatten(const VecX& flat, MomModel& m) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count(m)) fail(ErrorKind::ShapeMismatch, "flat size");
  Eigen::Index pos = 0;
  detail::visit_tensors(m, [&](auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = flat(pos++);
  });
}

/// Human-readable name of the tensor holding flat index `i`.
inline std::string parameter_name(const MomModel& m, std::size_t i) {
  std::size_t pos = 0;
  std::string name;
  auto check = [&](const std::string& label, std::size_t size) {
    if (name.empty() && i < pos + size) name = label + "[" + std::to_string(i - pos) + "]";
    pos += size;
  };
  for (std::size_t k = 0; k < m.encoder.local.size(); ++k)
    for (std::size_t l = 0; l < m.encoder.local[k].layers.size(); ++l) {
      const auto& layer = m.encoder.local[k].layers[l];
      const std::string base = "local" + std::to_string(k) + ".layer" + std::to_string(l);
      check(base + ".weight", static_cast<std::size_t>(layer.weight.size()));
      check(base + ".bias", static_cast<std::size_t>(layer.bias.size()));
    }
  for (std::size_t l = 0; l < m.encoder.global.layers.size(); ++l) {
    const auto& layer = m.encoder.global.layers[l];
    const std::string base = "global.layer" + std::to_string(l);
    check(base + ".weight", static_cast<std::size_t>(layer.weight.size()));
    check(base + ".bias", static_cast<std::size_t>(layer.bias.size()));
  }
  for (std::size_t k = 0; k < m.decoder.projections.size(); ++k) check("decoder.P" + std::to_string(k), 12);
  return name.empty() ? "out-of-range" : name;
}

// ---------------------------------------------------------------------------
// Batched forward / backward. Samples are columns.

/// Normalized network inputs and targets for a set of training pairs.
struct PackedBatch {
  std::vector<MatX> inputs;       // per camera: 24 x B
  MatX targets;                   // 3 x B, normalized world
  std::vector<MatX> pixel_means;  // per camera: 2 x B, normalized pixels

  Eigen::Index size() const { return targets.cols(); }
};

inline void pack_features(const EstimatorBatch& batch, const Normalizer& norm, std::size_t camera, MatX& dst,
                          Eigen::Index col) {
  for (int e = 0; e < kEstimatorsPerBatch; ++e) {
    const Vec2 p = norm.pixel(camera, batch.estimators[static_cast<std::size_t>(e)].mean);
    dst(2 * e, col) = p.x();
    dst(2 * e + 1, col) = p.y();
  }
}

inline PackedBatch pack(const MomModel& model, const std::vector<const TrainingPair*>& pairs) {
  const std::size_t k = model.cameras();
  const auto b = static_cast<Eigen::Index>(pairs.size());
  PackedBatch out;
  out.inputs.assign(k, MatX(kBatchFeatures, b));
  out.pixel_means.assign(k, MatX(2, b));
  out.targets.resize(3, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const TrainingPair& tp = *pairs[static_cast<std::size_t>(j)];
    if (tp.inputs.size() != k || tp.pixel_means.size() != k)
      fail(ErrorKind::ShapeMismatch, "training pair has " + std::to_string(tp.inputs.size()) + " cameras, model has " +
                                         std::to_string(k));
    for (std::size_t c = 0; c < k; ++c) {
      if (tp.inputs[c].camera_id != model.camera_ids[c]) fail(ErrorKind::ShapeMismatch, "camera order mismatch");
      pack_features(tp.inputs[c], model.normalizer, c, out.inputs[c], j);
      out.pixel_means[c].col(j) = model.normalizer.pixel(c, tp.pixel_means[c]);
    }
    out.targets.col(j) = model.normalizer.world(tp.target);
  }
  return out;
}

inline PackedBatch pack(const MomModel& model, const std::vector<TrainingPair>& pairs) {
  std::vector<const TrainingPair*> ptrs;
  ptrs.reserve(pairs.size());
  for (const auto& p : pairs) ptrs.push_back(&p);
  return pack(model, ptrs);
}

namespace detail {

struct MlpTrace {
  std::vector<MatX> activations;  // activations[0] is the input; activations[l + 1] is layer l's output
};

inline MatX forward(const Mlp& mlp, const MatX& x, MlpTrace* trace) {
  MatX a = x;
  if (trace) trace->activations = {x};
  for (const auto& l : mlp.layers) {
    if (a.rows() != l.in()) fail(ErrorKind::ShapeMismatch, "layer input size");
    MatX z = l.weight * a;
    z.colwise() += l.bias;
    if (l.activation == Activation::Relu) z = z.cwiseMax(0.0);
    a = std::move(z);
    if (trace) trace->activations.push_back(a);
  }
  return a;
}

/// Accumulates parameter gradients into `grad` and returns dL/dinput.
inline MatX backward(const Mlp& mlp, const MlpTrace& trace, MatX upstream, Mlp& grad) {
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    const auto& l = mlp.layers[li];
    const MatX& out = trace.activations[li + 1];
    if (l.activation == Activation::Relu) upstream = upstream.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
    grad.layers[li].weight.noalias() += upstream * trace.activations[li].transpose();
    grad.layers[li].bias += upstream.rowwise().sum();
    upstream = l.weight.transpose() * upstream;
  }
  return upstream;
}

}  // namespace detail

struct ForwardTrace {
  std::vector<detail::MlpTrace> local;
  detail::MlpTrace global;
  MatX features;  // concatenated local outputs
  MatX output;    // 3 x B, normalized world
};

/// Encoder on packed normalized inputs. Local features are concatenated in
/// camera order.
inline MatX encode_normalized(const MomModel& model, const std::vector<MatX>& inputs, ForwardTrace* trace = nullptr) {
  if (inputs.size() != model.cameras()) fail(ErrorKind::ShapeMismatch, "one input block per camera required");
  const Eigen::Index b = inputs.front().cols();
  std::vector<MatX> feats;
  Eigen::Index rows = 0;
  if (trace) trace->local.resize(model.cameras());
  for (std::size_t c = 0; c < model.cameras(); ++c) {
    if (inputs[c].rows() != kBatchFeatures || inputs[c].cols() != b) fail(ErrorKind::ShapeMismatch, "input block shape");
    feats.push_back(detail::forward(model.encoder.local[c], inputs[c], trace ? &trace->local[c] : nullptr));
    rows += feats.back().rows();
  }
  MatX concat(rows, b);
  Eigen::Index pos = 0;
  for (const auto& f : feats) {
    concat.middleRows(pos, f.rows()) = f;
    pos += f.rows();
  }
  MatX out = detail::forward(model.encoder.global, concat, trace ? &trace->global : nullptr);
  if (trace) {
    trace->features = std::move(concat);
    trace->output = out;
  }
  return out;
}

/// Encoder on raw estimator batches (pixels); returns meters.
inline WorldPoint encode(const MomModel& model, const std::vector<EstimatorBatch>& batches) {
  if (batches.size() != model.cameras())
    fail(ErrorKind::ShapeMismatch, "expected " + std::to_string(model.cameras()) + " estimator batches, got " +
                                       std::to_string(batches.size()));
  std::vector<MatX> inputs(model.cameras(), MatX(kBatchFeatures, 1));
  for (std::size_t c = 0; c < batches.size(); ++c) pack_features(batches[c], model.normalizer, c, inputs[c], 0);
  const MatX out = encode_normalized(model, inputs);
  return model.normalizer.denormalize_world(out.col(0));
}

/// Decoder on a normalized world point: h = P_k [y; 1]; linear mode returns
/// (h0, h1), perspective mode (h0 / h2, h1 / h2).
inline Vec2 decode(const Mat34& pk, const Vec3& y, DecoderMode mode) {
  if (!y.allFinite()) fail(ErrorKind::Precondition, "non-finite decoder input");
  const Vec3 h = pk * homogeneous(WorldPoint(y));
  if (mode == DecoderMode::Linear) return h.head<2>();
  if (std::abs(h.z()) < 1e-9) fail(ErrorKind::DivisionGuard, "decoder depth is zero");
  return h.head<2>() / h.z();
}

inline Vec2 decode(const DecoderParams& params, const Vec3& y, std::size_t camera, DecoderMode mode) {
  return decode(params.projections.at(camera), y, mode);
}

struct LossBreakdown {
  double loc = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

/// loss_loc: mean squared distance in normalized world units.
inline double loss_loc(const MatX& predicted, const MatX& targets) {
  return (predicted - targets).colwise().squaredNorm().mean();
}

/// loss_rec: mean over samples of the per-camera squared reprojection
/// distances, summed over cameras, in normalized pixel units.
inline double loss_rec(const DecoderParams& dec, const MatX& predicted, const std::vector<MatX>& pixel_means,
                       DecoderMode mode) {
  const Eigen::Index b = predicted.cols();
  double sum = 0.0;
  for (std::size_t c = 0; c < pixel_means.size(); ++c)
    for (Eigen::Index j = 0; j < b; ++j)
      sum += (decode(dec, predicted.col(j), c, mode) - pixel_means[c].col(j)).squaredNorm();
  return sum / static_cast<double>(b);
}

inline double total_loss(double loc, double rec, double lambda) { return loc + lambda * rec; }

inline LossBreakdown evaluate_losses(const MomModel& model, const PackedBatch& batch, double lambda, DecoderMode mode) {
  if (batch.size() == 0) fail(ErrorKind::EmptyInput, "empty batch");
  const MatX pred = encode_normalized(model, batch.inputs);
  LossBreakdown l;
  l.loc = loss_loc(pred, batch.targets);
  l.rec = loss_rec(model.decoder, pred, batch.pixel_means, mode);
  l.total = total_loss(l.loc, l.rec, lambda);
  return l;
}

/// Gradients, same layout as the model.
struct Gradients {
  MomModel grad;
  LossBreakdown loss;
};

inline MomModel zeros_like(const MomModel& m) {
  MomModel z = m;
  detail::visit_tensors(z, [](auto& t) { t.setZero(); });
  return z;
}

/// Exact reverse-mode gradients of loss_loc + lambda * loss_rec over the batch.
/// ReLU'(0) is taken as 0.
inline Gradients backward(const MomModel& model, const PackedBatch& batch, double lambda, DecoderMode mode) {
  const Eigen::Index b = batch.size();
  if (b == 0) fail(ErrorKind::EmptyInput, "empty batch");
  ForwardTrace trace;
  const MatX pred = encode_normalized(model, batch.inputs, &trace);

  Gradients g{zeros_like(model), {}};
  g.loss.loc = loss_loc(pred, batch.targets);
  const double inv_b = 1.0 / static_cast<double>(b);
  MatX d_pred = 2.0 * inv_b * (pred - batch.targets);

  double rec_sum = 0.0;
  for (std::size_t c = 0; c < model.cameras(); ++c) {
    const Mat34& pk = model.decoder.projections[c];
    Mat34& dpk = g.grad.decoder.projections[c];
    for (Eigen::Index j = 0; j < b; ++j) {
      const Vec4 yh = homogeneous(WorldPoint(pred.col(j)));
      const Vec3 h = pk * yh;
      Vec3 dh = Vec3::Zero();
      if (mode == DecoderMode::Linear) {
        const Vec2 r = h.head<2>() - batch.pixel_means[c].col(j);
        rec_sum += r.squaredNorm();
        dh.head<2>() = 2.0 * lambda * inv_b * r;
      } else {
        if (std::abs(h.z()) < 1e-9) fail(ErrorKind::DivisionGuard, "decoder depth is zero");
        const Vec2 uv = h.head<2>() / h.z();
        const Vec2 r = uv - batch.pixel_means[c].col(j);
        rec_sum += r.squaredNorm();
        const Vec2 dr = 2.0 * lambda * inv_b * r;
        dh.x() = dr.x() / h.z();
        dh.y() = dr.y() / h.z();
        dh.z() = -(dr.x() * h.x() + dr.y() * h.y()) / (h.z() * h.z());
      }
      dpk.noalias() += dh * yh.transpose();
      d_pred.col(j).noalias() += pk.leftCols<3>().transpose() * dh;
    }
  }
  g.loss.rec = rec_sum * inv_b;
  g.loss.total = total_loss(g.loss.loc, g.loss.rec, lambda);

  const MatX d_features = detail::backward(model.encoder.global, trace.global, d_pred, g.grad.encoder.global);
  Eigen::Index pos = 0;
  for (std::size_t c = 0; c < model.cameras(); ++c) {
    const Eigen::Index rows = model.encoder.local[c].out();
    detail::backward(model.encoder.local[c], trace.local[c], d_features.middleRows(pos, rows), g.grad.encoder.local[c]);
    pos += rows;
  }

  const VecX flat = flatten(g.grad);
  for (Eigen::Index i = 0; i < flat.size(); ++i)
    if (!std::isfinite(flat(i)))
      fail(ErrorKind::NonFiniteGradient, "non-finite gradient in " + parameter_name(model, static_cast<std::size_t>(i)));
  return g;
}

// ---------------------------------------------------------------------------
// Finite-difference check

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_name;
  std::size_t checked = 0;
};

/// Central differences on every parameter; relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradcheck(const MomModel& model, const PackedBatch& batch, double lambda, DecoderMode mode,
                                 double eps = 1e-5, double floor = 1e-7) {
  const VecX analytic = flatten(backward(model, batch, lambda, mode).grad);
  VecX theta = flatten(model);
  MomModel probe = model;
  GradCheckResult res;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta(i);
    theta(i) = saved + eps;
    unflatten(theta, probe);
    const double up = evaluate_losses(probe, batch, lambda, mode).total;
    theta(i) = saved - eps;
    unflatten(theta, probe);
    const double down = evaluate_losses(probe, batch, lambda, mode).total;
    theta(i) = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic(i);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = static_cast<std::size_t>(i);
    }
    ++res.checked;
  }
  res.worst_name = parameter_name(model, res.worst_index);
  return res;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  VecX m;
  VecX v;
  std::int64_t step = 0;
};

inline void adam_step(VecX& theta, const VecX& grad, AdamState& s, const TrainConfig& cfg, double lr) {
  if (s.m.size() == 0) {
    s.m = VecX::Zero(theta.size());
    s.v = VecX::Zero(theta.size());
  }
  ++s.step;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double mhat = s.m(i) / c1;
    const double vhat = s.v(i) / c2;
    theta(i) -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Training

struct LossHistory {
  std::vector<double> train_total;
  std::vector<double> train_loc;
  std::vector<double> test_total;
  std::vector<double> test_loc;

  std::size_t size() const { return train_total.size(); }
};

struct Checkpoint {
  MomModel model;
  TrainConfig config;
  int epoch = 0;
  LossHistory history;
};

/// Train/test observations; estimator batches are redrawn from these each epoch.
struct TrainingData {
  std::vector<ObservationSet> train;
  std::vector<ObservationSet> test;
  std::vector<int> camera_ids;
  Normalizer normalizer;
};

inline std::vector<int> camera_ids_of(const std::vector<ObservationSet>& obs) {
  std::vector<int> ids;
  if (!obs.empty())
    for (const auto& c : obs.front().cameras) ids.push_back(c.camera_id);
  return ids;
}

inline PackedBatch pack_range(const MomModel& model, const std::vector<TrainingPair>& pairs,
                              const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  std::vector<const TrainingPair*> ptrs;
  ptrs.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&pairs[order[i]]);
  return pack(model, ptrs);
}

namespace detail {

inline LossBreakdown evaluate_in_chunks(const MomModel& model, const std::vector<TrainingPair>& pairs, double lambda,
                                        DecoderMode mode, std::size_t chunk = 1024) {
  LossBreakdown acc;
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t b = 0; b < pairs.size(); b += chunk) {
    const std::size_t e = std::min(pairs.size(), b + chunk);
    const auto l = evaluate_losses(model, pack_range(model, pairs, order, b, e), lambda, mode);
    const double w = static_cast<double>(e - b);
    acc.loc += w * l.loc;
    acc.rec += w * l.rec;
  }
  acc.loc /= static_cast<double>(pairs.size());
  acc.rec /= static_cast<double>(pairs.size());
  acc.total = total_loss(acc.loc, acc.rec, lambda);
  return acc;
}

}  // namespace detail

/// Per-epoch observer; return false to stop early.
using EpochCallback = std::function<bool(int epoch, const LossHistory&)>;

/// Adam over shuffled mini-batches. Every epoch draws fresh estimator
/// batches from the cached raw observations; the test pairs are drawn once
/// so the test curve is comparable across epochs. Fully determined by
/// `cfg.seed`.
inline Checkpoint train(const TrainingData& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty() || data.test.empty()) fail(ErrorKind::Precondition, "training needs a train/test split");
  for (const auto& o : data.train) require_cameras(o, data.camera_ids);
  for (const auto& o : data.test) require_cameras(o, data.camera_ids);

  Checkpoint ck;
  ck.config = cfg;
  ck.model = init_model(data.camera_ids, data.normalizer, cfg);

  const auto test_pairs = build_training_pairs(data.test, 1, derive_seed(cfg.seed, 0x7e57));
  const auto initial = detail::evaluate_in_chunks(
      ck.model, build_training_pairs(data.train, 1, derive_seed(cfg.seed, 0x1a17)), cfg.lambda, cfg.decoder_mode);
  const double guard = cfg.divergence_factor * std::max(initial.total, 1e-12);

  AdamState adam;
  VecX theta = flatten(ck.model);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto pairs = build_training_pairs(data.train, cfg.pairs_per_frame, derive_seed(cfg.seed, 0x100000 + e));
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(cfg.seed, 0x200000 + e));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    const double lr = cfg.cosine_decay
                          ? 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs))
                          : cfg.learning_rate;
    double sum_total = 0.0;
    double sum_loc = 0.0;
    for (std::size_t b = 0; b < pairs.size(); b += batch) {
      const std::size_t end = std::min(pairs.size(), b + batch);
      const auto packed = pack_range(ck.model, pairs, order, b, end);
      const auto g = backward(ck.model, packed, cfg.lambda, cfg.decoder_mode);
      const double w = static_cast<double>(end - b);
      sum_total += w * g.loss.total;
      sum_loc += w * g.loss.loc;
      if (cfg.learning_rate > 0.0) {
        adam_step(theta, flatten(g.grad), adam, cfg, lr);
        unflatten(theta, ck.model);
      }
    }
    const double train_total = sum_total / static_cast<double>(pairs.size());
    if (!std::isfinite(train_total) || train_total > guard)
      fail(ErrorKind::Divergence, "epoch " + std::to_string(epoch) + " loss " + std::to_string(train_total) +
                                      " exceeds " + std::to_string(cfg.divergence_factor) + "x the initial loss");
    const auto test = detail::evaluate_in_chunks(ck.model, test_pairs, cfg.lambda, cfg.decoder_mode);
    ck.history.train_total.push_back(train_total);
    ck.history.train_loc.push_back(sum_loc / static_cast<double>(pairs.size()));
    ck.history.test_total.push_back(test.total);
    ck.history.test_loc.push_back(test.loc);
    ck.epoch = epoch + 1;
    if (on_epoch && !on_epoch(ck.epoch, ck.history)) break;
  }
  return ck;
}

struct PredictOptions {
  std::uint64_t seed = 7;
  int draws = 1;  // predictions averaged over this many independent estimator batches
};

/// One prediction per frame. Frame f uses frame_rng(seed, f), so results do
/// not depend on which other frames are predicted alongside.
inline std::vector<WorldPoint> predict(const MomModel& model, const std::vector<ObservationSet>& frames,
                                       const PredictOptions& opt = {}) {
  if (opt.draws < 1) fail(ErrorKind::Precondition, "draws must be >= 1");
  std::vector<WorldPoint> out;
  out.reserve(frames.size());
  const std::size_t k = model.cameras();
  constexpr std::size_t kChunk = 512;
  for (std::size_t b = 0; b < frames.size(); b += kChunk) {
    const std::size_t e = std::min(frames.size(), b + kChunk);
    const auto cols = static_cast<Eigen::Index>((e - b) * static_cast<std::size_t>(opt.draws));
    std::vector<MatX> inputs(k, MatX(kBatchFeatures, cols));
    Eigen::Index col = 0;
    for (std::size_t f = b; f < e; ++f) {
      const auto& obs = frames[f];
      require_cameras(obs, model.camera_ids);
      Rng rng = frame_rng(opt.seed, obs.frame);
      for (int d = 0; d < opt.draws; ++d, ++col)
        for (std::size_t c = 0; c < k; ++c)
          pack_features(build_estimator_batch(obs.cameras[c].points, rng, obs.cameras[c].camera_id), model.normalizer, c,
                        inputs[c], col);
    }
    const MatX pred = encode_normalized(model, inputs);
    for (std::size_t f = 0; f < e - b; ++f) {
      Vec3 acc = Vec3::Zero();
      for (int d = 0; d < opt.draws; ++d) acc += pred.col(static_cast<Eigen::Index>(f) * opt.draws + d);
      out.push_back(model.normalizer.denormalize_world(acc / static_cast<double>(opt.draws)));
    }
  }
  return out;
}

}  // namespace mom
