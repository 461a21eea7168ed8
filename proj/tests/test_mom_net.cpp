#include "mom/cli.hpp"
#include "mom/mom_net.hpp"
#include "mom/scene.hpp"

#include <gtest/gtest.h>

using namespace mom;

namespace {

Normalizer test_normalizer(std::size_t k = 2) {
  Normalizer n;
  n.image_size.assign(k, Vec2(640, 480));
  n.world_min = Vec3(0, 0, 0);
  n.world_max = Vec3(10, 10, 1.7);
  return n;
}

TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.seed = seed;
  c.local_hidden = {6, 5};
  c.global_hidden = {7, 4};
  return c;
}

std::vector<TrainingPair> random_pairs(int count, std::uint64_t seed, std::size_t k = 2) {
  Rng rng(seed);
  std::vector<TrainingPair> out;
  for (int b = 0; b < count; ++b) {
    ObservationSet obs;
    obs.frame = b;
    obs.center = WorldPoint(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 1.7));
    for (std::size_t c = 0; c < k; ++c) {
      CameraObservation co;
      co.camera_id = static_cast<int>(c);
      for (int i = 0; i < 10; ++i) co.points.emplace_back(rng.uniform(0, 640), rng.uniform(0, 480));
      obs.cameras.push_back(co);
    }
    out.push_back(build_training_pair(obs, rng));
  }
  return out;
}

void perturb_decoder(MomModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : m.decoder.projections)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) p(r, c) += rng.uniform(-0.3, 0.3);
}

TrainingData scene_data(int frames, double sigma, std::uint64_t seed = 42) {
  SceneSpec spec = walk_2cam_spec();
  spec.frames = frames;
  spec.keypoint_sigma = sigma;
  spec.seed = seed;
  const auto ds = generate_scene(spec).dataset;
  const auto split = split_dataset(ds.records, 0.2);
  TrainingData d;
  d.train = to_observations(split.train, ObservationSource::Keypoint, 20, 1);
  d.test = to_observations(split.test, ObservationSource::Keypoint, 20, 1);
  d.camera_ids = ds.manifest.camera_ids;
  d.normalizer = cli::normalizer_for(ds.manifest);
  return d;
}

}  // namespace

TEST(Normalizer, RoundTripAndRange) {
  const auto n = test_normalizer();
  EXPECT_EQ(n.world(WorldPoint(0, 0, 0)), Vec3(-1, -1, -1));
  EXPECT_EQ(n.world(WorldPoint(10, 10, 1.7)), Vec3(1, 1, 1));
  const WorldPoint w(3.3, 7.1, 0.4);
  EXPECT_LT((n.denormalize_world(n.world(w)) - w).norm(), 1e-14);
  EXPECT_EQ(n.pixel(0, PixelPoint(320, 240)), Vec2(0, 0));
  EXPECT_EQ(n.pixel(1, PixelPoint(640, 0)), Vec2(1, -1));
}

TEST(InitModel, ShapesForDefaultArchitecture) {
  const auto m = init_model({0, 1}, test_normalizer(), TrainConfig{});
  ASSERT_EQ(m.encoder.local.size(), 2u);
  for (const auto& l : m.encoder.local) {
    EXPECT_EQ(l.in(), 24);
    EXPECT_EQ(l.out(), 64);
    for (const auto& layer : l.layers) EXPECT_EQ(layer.activation, Activation::Relu);
  }
  EXPECT_EQ(m.encoder.global.in(), 128);
  EXPECT_EQ(m.encoder.global.out(), 3);
  ASSERT_EQ(m.encoder.global.layers.size(), 3u);
  EXPECT_EQ(m.encoder.global.layers[0].out(), 128);
  EXPECT_EQ(m.encoder.global.layers[1].out(), 64);
  EXPECT_EQ(m.encoder.global.layers.back().activation, Activation::Linear);
  EXPECT_EQ(m.decoder.projections.size(), 2u);
  // 2 * (24*64 + 64 + 64*64 + 64) + (128*128 + 128) + (128*64 + 64) + (64*3 + 3) + 2 * 12
  EXPECT_EQ(parameter_count(m), 2u * (24 * 64 + 64 + 64 * 64 + 64) + (128 * 128 + 128) + (128 * 64 + 64) + (64 * 3 + 3) + 24u);
}

TEST(InitModel, RejectsSingleCamera) {
  auto cfg = small_config();
  EXPECT_THROW(init_model({0}, test_normalizer(1), cfg), Error);
}

TEST(InitModel, Deterministic) {
  const auto a = init_model({0, 1}, test_normalizer(), small_config(3));
  const auto b = init_model({0, 1}, test_normalizer(), small_config(3));
  const auto c = init_model({0, 1}, test_normalizer(), small_config(4));
  EXPECT_EQ(flatten(a), flatten(b));
  EXPECT_NE(flatten(a), flatten(c));
}

TEST(Flatten, RoundTripAndNames) {
  auto m = init_model({0, 1}, test_normalizer(), small_config());
  const VecX flat = flatten(m);
  auto copy = zeros_like(m);
  unflatten(flat, copy);
  EXPECT_EQ(flatten(copy), flat);
  EXPECT_EQ(parameter_name(m, 0), "local0.layer0.weight[0]");
  EXPECT_EQ(parameter_name(m, parameter_count(m) - 1), "decoder.P1[11]");
  EXPECT_THROW(unflatten(VecX::Zero(3), copy), Error);
}

TEST(Encode, ZeroModelGivesWorldCenter) {
  auto m = zeros_like(init_model({0, 1}, test_normalizer(), TrainConfig{}));
  Rng rng(1);
  const auto pairs = random_pairs(1, 2);
  const WorldPoint y = encode(m, pairs[0].inputs);
  EXPECT_EQ(y, WorldPoint(5, 5, 0.85));
}

TEST(Encode, OutputShapeAndOrderSensitivity) {
  const auto m = init_model({0, 1}, test_normalizer(), TrainConfig{});
  const auto pairs = random_pairs(1, 3);
  ForwardTrace trace;
  const auto packed = pack(m, pairs);
  const MatX out = encode_normalized(m, packed.inputs, &trace);
  EXPECT_EQ(trace.features.rows(), 128);
  EXPECT_EQ(out.rows(), 3);
  EXPECT_EQ(out.cols(), 1);
  const std::vector<MatX> swapped = {packed.inputs[1], packed.inputs[0]};
  EXPECT_NE(encode_normalized(m, swapped), out);
}

TEST(Encode, ShapeMismatch) {
  const auto m = init_model({0, 1}, test_normalizer(), small_config());
  const auto pairs = random_pairs(1, 4);
  EXPECT_THROW(encode(m, {pairs[0].inputs[0]}), Error);
  EXPECT_THROW(encode_normalized(m, {MatX::Zero(24, 1), MatX::Zero(23, 1)}), Error);
}

TEST(Decode, Examples) {
  Mat34 p = Mat34::Zero();
  p.leftCols<3>() = Mat3::Identity();
  const Vec3 y(3, 4, 1);
  EXPECT_EQ(decode(p, y, DecoderMode::Linear), Vec2(3, 4));
  EXPECT_EQ(decode(p, y, DecoderMode::Perspective), Vec2(3, 4));
  EXPECT_EQ(decode(Mat34(2 * p), y, DecoderMode::Linear), Vec2(6, 8));
  EXPECT_EQ(decode(Mat34(2 * p), y, DecoderMode::Perspective), Vec2(3, 4));
}

TEST(Decode, DivisionGuard) {
  Mat34 p = Mat34::Zero();
  p.leftCols<3>() = Mat3::Identity();
  try {
    decode(p, Vec3(1, 1, 0), DecoderMode::Perspective);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivisionGuard);
  }
  EXPECT_EQ(decode(p, Vec3(1, 1, 0), DecoderMode::Linear), Vec2(1, 1));
}

TEST(Losses, Examples) {
  MatX pred(3, 1), target(3, 1);
  pred << 0.3, 0.4, 0;
  target << 0, 0, 0;
  EXPECT_DOUBLE_EQ(loss_loc(pred, target), 0.25);
  EXPECT_EQ(loss_loc(pred, pred), 0.0);

  MatX many(3, 4), many_t(3, 4), perm(3, 4), perm_t(3, 4);
  many << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  many_t.setZero();
  perm << many.col(2), many.col(0), many.col(3), many.col(1);
  perm_t.setZero();
  EXPECT_DOUBLE_EQ(loss_loc(many, many_t), loss_loc(perm, perm_t));

  DecoderParams dec;
  Mat34 p = Mat34::Zero();
  p.leftCols<3>() = Mat3::Identity();
  dec.projections = {p, p};
  MatX y(3, 1);
  y << 0.5, 0.5, 1.0;
  MatX m0(2, 1), m1(2, 1);
  m0 << 0.5 + 0.1, 0.5;
  m1 << 0.5, 0.5 + std::sqrt(0.03);
  EXPECT_NEAR(loss_rec(dec, y, {m0, m1}, DecoderMode::Linear), 0.04, 1e-15);
  m0 << 0.5, 0.5;
  m1 << 0.5, 0.5;
  EXPECT_EQ(loss_rec(dec, y, {m0, m1}, DecoderMode::Perspective), 0.0);

  EXPECT_EQ(total_loss(0.2, 0.3, 0.0), 0.2);
  EXPECT_DOUBLE_EQ(total_loss(0.2, 0.3, 1.0), 0.5);
}

TEST(Backward, ZeroModelZeroInputHasZeroGradient) {
  auto m = zeros_like(init_model({0, 1}, test_normalizer(), small_config()));
  PackedBatch b;
  b.inputs = {MatX::Zero(24, 3), MatX::Zero(24, 3)};
  b.targets = MatX::Zero(3, 3);
  b.pixel_means = {MatX::Zero(2, 3), MatX::Zero(2, 3)};
  const auto g = backward(m, b, 1.0, DecoderMode::Linear);
  EXPECT_EQ(flatten(g.grad), VecX::Zero(static_cast<Eigen::Index>(parameter_count(m))));
  EXPECT_EQ(g.loss.total, 0.0);
}

TEST(Backward, LossMatchesForward) {
  auto m = init_model({0, 1}, test_normalizer(), small_config());
  const auto batch = pack(m, random_pairs(8, 5));
  for (auto mode : {DecoderMode::Linear, DecoderMode::Perspective}) {
    const auto g = backward(m, batch, 0.7, mode);
    const auto l = evaluate_losses(m, batch, 0.7, mode);
    EXPECT_NEAR(g.loss.loc, l.loc, 1e-15);
    EXPECT_NEAR(g.loss.rec, l.rec, 1e-15);
    EXPECT_NEAR(g.loss.total, l.total, 1e-15);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (auto mode : {DecoderMode::Linear, DecoderMode::Perspective}) {
      for (double lambda : {0.0, 1.0, 0.3}) {
        auto m = init_model({0, 1}, test_normalizer(), small_config(seed));
        perturb_decoder(m, seed + 100);
        const auto res = gradcheck(m, pack(m, random_pairs(4, seed + 200)), lambda, mode);
        EXPECT_EQ(res.checked, parameter_count(m));
        EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " mode " << to_string(mode) << " lambda " << lambda
                                           << " worst " << res.worst_name;
      }
    }
  }
}

TEST(Backward, ThreeCameraModel) {
  auto m = init_model({0, 1, 2}, test_normalizer(3), small_config(9));
  perturb_decoder(m, 9);
  const auto res = gradcheck(m, pack(m, random_pairs(3, 10, 3)), 1.0, DecoderMode::Perspective);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_name;
}

TEST(Backward, DecoderRegulatesEncoder) {
  auto m = init_model({0, 1}, test_normalizer(), small_config(6));
  const auto batch = pack(m, random_pairs(6, 7));
  const auto g0 = backward(m, batch, 0.0, DecoderMode::Perspective);
  const auto g1 = backward(m, batch, 1.0, DecoderMode::Perspective);
  const VecX f0 = flatten(g0.grad);
  const VecX f1 = flatten(g1.grad);
  const auto decoder_start = static_cast<Eigen::Index>(parameter_count(m) - 24);
  EXPECT_GT((f1.head(decoder_start) - f0.head(decoder_start)).norm(), 0.0);
  EXPECT_EQ(f0.tail(24), VecX::Zero(24));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  VecX theta(3), grad(3);
  theta << 1, 2, 3;
  grad << 0.5, -2, 0;
  AdamState s;
  TrainConfig cfg;
  cfg.adam_eps = 0.0;
  adam_step(theta, grad, s, cfg, 0.1);
  EXPECT_NEAR(theta(0), 0.9, 1e-15);
  EXPECT_NEAR(theta(1), 2.1, 1e-15);
  EXPECT_TRUE(std::isnan(theta(2)));  // 0/0 without epsilon
  cfg.adam_eps = 1e-8;
  theta << 1, 2, 3;
  AdamState s2;
  adam_step(theta, grad, s2, cfg, 0.1);
  EXPECT_EQ(theta(2), 3.0);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  const auto data = scene_data(60, 1.0);
  auto cfg = small_config(5);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  const auto ck = train(data, cfg);
  EXPECT_EQ(flatten(ck.model), flatten(init_model(data.camera_ids, data.normalizer, cfg)));
  EXPECT_EQ(ck.epoch, 1);
  EXPECT_EQ(ck.history.size(), 1u);
}

TEST(Train, DeterministicAndLearns) {
  const auto data = scene_data(300, 1.0);
  auto cfg = small_config(8);
  cfg.local_hidden = {16, 16};
  cfg.global_hidden = {32, 16};
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  EXPECT_EQ(flatten(a.model), flatten(b.model));
  EXPECT_EQ(a.history.test_total, b.history.test_total);
  EXPECT_LT(a.history.train_total.back(), 0.25 * a.history.train_total.front());
  EXPECT_EQ(a.history.size(), 30u);
}

TEST(Train, CallbackStopsEarly) {
  const auto data = scene_data(60, 1.0);
  auto cfg = small_config(5);
  cfg.epochs = 10;
  const auto ck = train(data, cfg, [](int epoch, const LossHistory&) { return epoch < 3; });
  EXPECT_EQ(ck.epoch, 3);
  EXPECT_EQ(ck.history.size(), 3u);
}

TEST(Train, DivergenceGuard) {
  const auto data = scene_data(60, 1.0);
  auto cfg = small_config(5);
  cfg.epochs = 3;
  cfg.divergence_factor = 1e-9;
  try {
    train(data, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Divergence);
  }
}

TEST(Train, MissingCameraRejected) {
  auto data = scene_data(60, 1.0);
  data.test[2].cameras.pop_back();
  EXPECT_THROW(train(data, small_config()), Error);
}

TEST(Predict, DeterministicAndDrawsReduceVariance) {
  const auto data = scene_data(200, 2.0);
  auto cfg = small_config(11);
  cfg.local_hidden = {16, 16};
  cfg.global_hidden = {32, 16};
  cfg.epochs = 15;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  const auto ck = train(data, cfg);
  const auto p1 = predict(ck.model, data.test);
  EXPECT_EQ(p1, predict(ck.model, data.test));

  // spread of repeated predictions for one frame, single draw vs 32-draw average
  const std::vector<ObservationSet> one = {data.test.front()};
  auto spread = [&](int draws) {
    std::vector<WorldPoint> preds;
    for (std::uint64_t s = 0; s < 200; ++s) preds.push_back(predict(ck.model, one, {s, draws})[0]);
    WorldPoint mean = WorldPoint::Zero();
    for (const auto& p : preds) mean += p;
    mean /= static_cast<double>(preds.size());
    double var = 0.0;
    for (const auto& p : preds) var += (p - mean).squaredNorm();
    return var / static_cast<double>(preds.size());
  };
  EXPECT_LE(spread(32), spread(1));
}

TEST(Predict, FramesIndependent) {
  const auto data = scene_data(100, 1.0);
  const auto m = init_model(data.camera_ids, data.normalizer, small_config());
  const auto all = predict(m, data.train);
  const std::vector<ObservationSet> subset = {data.train[7], data.train[3]};
  const auto part = predict(m, subset);
  EXPECT_EQ(part[0], all[7]);
  EXPECT_EQ(part[1], all[3]);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda = -1;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.learning_rate = -1e-3;
  EXPECT_THROW(c.validate(), Error);
}

TEST(DecoderMode, Parse) {
  EXPECT_EQ(parse_decoder_mode("linear"), DecoderMode::Linear);
  EXPECT_EQ(parse_decoder_mode(to_string(DecoderMode::Perspective)), DecoderMode::Perspective);
  EXPECT_THROW(parse_decoder_mode("affine"), Error);
}
