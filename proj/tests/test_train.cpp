#include "oracles.hpp"

#include <gtest/gtest.h>

namespace gsc {
namespace {

using testing::ista_model;
using testing::scenes;

bool bit_equal(const Vector<double>& a, const Vector<double>& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

Sample<double> sample_of(const Image<double>& clean, const Image<double>& y) {
  Sample<double> s;
  s.clean = clean;
  s.obs.y = y;
  return s;
}

TrainingData tiny_data(std::uint64_t seed, int count, int size, int crop) {
  Rng rng(seed);
  return TrainingData{Dataset(scenes(count, size, size, 1, rng), testing::names(std::size_t(count)), crop), {}};
}

TrainConfig tiny_config(int epochs) {
  TrainConfig config;
  config.epochs = epochs;
  config.batch = 2;
  config.crop = 12;
  config.monitor_crops = 2;
  config.monitor_every = 5;
  config.inference.window = 5;
  config.inference.update_period = 1;
  config.seed = 7;
  return config;
}

ModelParams<double> tiny_model(Variant variant, std::uint64_t seed) {
  Rng rng(seed);
  return random_model(variant, 3, 1, 12, 2, variant == Variant::kSC ? 0 : 2, rng, 0.05);
}

TEST(Loss, PerfectRestorationIsZero) {
  Rng rng(1);
  const ModelParams<double> identity = ista_model(Matrix<double>::Identity(9, 9), 3, 1, 1, 1.0, 0.0);
  const Image<double> clean = random_image(8, 8, 1, rng);
  EXPECT_LT(sample_loss(identity, sample_of(clean, clean), InferenceConfig{}), 1e-28);
}

TEST(Loss, ConstantOffsetGivesSquaredOffset) {
  Rng rng(2);
  const ModelParams<double> identity = ista_model(Matrix<double>::Identity(9, 9), 3, 1, 1, 1.0, 0.0);
  const Image<double> clean = random_image(8, 8, 1, rng);
  Image<double> shifted = clean;
  shifted.data.array() += 0.1;
  EXPECT_NEAR(sample_loss(identity, sample_of(clean, shifted), InferenceConfig{}), 0.01, 1e-15);
}

TEST(Loss, BatchLossIsMeanOfPerEntryErrors) {
  Rng rng(3);
  const ModelParams<double> params = random_model(Variant::kSC, 3, 1, 10, 3, 0, rng);
  std::vector<Sample<double>> batch;
  double expected = 0;
  for (int i = 0; i < 3; ++i) {
    const Image<double> clean = synthetic_image(7, 9, 1, rng);
    batch.push_back(sample_of(clean, add_awgn(clean, 25, rng)));
    const Image<double> x = infer(params, batch.back().obs, InferenceConfig{});
    double s = 0;
    for (Index e = 0; e < x.size(); ++e) s += (x.data[e] - clean.data[e]) * (x.data[e] - clean.data[e]);
    expected += s / double(x.size()) / 3.0;
  }
  EXPECT_NEAR(loss(batch, params, InferenceConfig{}), expected, 1e-15);
}

TEST(Loss, GradientLossMatchesPlainLoss) {
  Rng rng(4);
  for (Variant v : {Variant::kSC, Variant::kGroupSC, Variant::kCSR}) {
    const ModelParams<double> params = tiny_model(v, 5);
    const Image<double> clean = synthetic_image(9, 9, 1, rng);
    const Sample<double> s = sample_of(clean, add_awgn(clean, 25, rng));
    InferenceConfig config;
    config.window = 5;
    Vector<double> g;
    EXPECT_NEAR(loss_and_gradient(params, s, config, g), sample_loss(params, s, config), 1e-14);
    EXPECT_EQ(g.size(), params.size());
  }
}

TEST(Schedule, LearningRateIsExact) {
  TrainConfig config;
  for (int epoch : {0, 79, 80, 159, 160, 299})
    for (int b : {0, 1, 3}) {
      const int j = epoch / 80;
      EXPECT_EQ(learning_rate(config, epoch, 12345, b), 6e-4 * std::pow(0.35, j) * std::pow(0.8, b));
    }
  EXPECT_EQ(learning_rate(config, 80, 0, 0), 6e-4 * 0.35);
  config.decay_unit = DecayUnit::kStep;
  config.decay_every = 100;
  EXPECT_EQ(learning_rate(config, 1000, 99, 0), 6e-4);
  EXPECT_EQ(learning_rate(config, 0, 250, 2), 6e-4 * std::pow(0.35, 2.0) * std::pow(0.8, 2.0));
}

TEST(Train, LoggedRatesFollowSchedule) {
  const TrainingData data = tiny_data(6, 2, 16, 12);
  TrainConfig config = tiny_config(5);
  config.decay_every = 2;
  config.lr = 1e-3;
  TrainState<double> state = start_training(tiny_model(Variant::kSC, 6), config);
  const auto log = train(state, data, config);
  ASSERT_EQ(log.size(), 5u);
  for (const auto& e : log) EXPECT_EQ(e.lr, learning_rate(config, e.epoch, 0, state.backtracks)) << e.epoch;
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const TrainingData data = tiny_data(7, 3, 16, 12);
  TrainConfig config = tiny_config(1);
  config.lr = 0;
  const ModelParams<double> params = tiny_model(Variant::kGroupSC, 7);
  TrainState<double> state = start_training(params, config);
  const auto log = train(state, data, config);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_TRUE(std::isfinite(log[0].loss));
  EXPECT_TRUE(bit_equal(state.params.flatten(), params.flatten()));
  EXPECT_EQ(state.adam.step, 2u);
}

TEST(Train, LossDecreasesOnTinyRun) {
  Rng rng(8);
  const std::vector<Image<double>> images = scenes(4, 24, 24, 1, rng);
  const TrainingData data{Dataset(images, testing::names(4), 16), {}};
  TrainConfig config = tiny_config(50);
  config.crop = 16;
  config.batch = 4;
  config.lr = 3e-3;
  ModelInit init;
  init.variant = Variant::kSC;
  init.patch_side = 5;
  init.unroll = 2;
  Rng drng(9);
  const Matrix<double> dict = init_dictionary(sample_patches(data.clean, 5, 400, drng), 16, 20, 0.05, drng);
  TrainState<double> state = start_training(init_model<double>(init, dict), config);

  std::vector<Sample<double>> held;
  Rng hrng(10);
  for (const auto& img : images) held.push_back(sample_of(img, add_awgn(img, 25, hrng)));
  const double before = loss(held, state.params, config.inference);
  const auto log = train(state, data, config);
  const double after = loss(held, state.params, config.inference);
  EXPECT_LT(after, before);
  EXPECT_LT(log.back().loss, log.front().loss);
}

TEST(Train, DivergenceBacktracksAndShrinksRate) {
  const TrainingData data = tiny_data(11, 2, 16, 12);
  TrainConfig config = tiny_config(60);
  config.lr = 10;
  config.monitor_every = 1;
  TrainState<double> state = start_training(tiny_model(Variant::kSC, 11), config);
  const auto log = train(state, data, config);
  EXPECT_GT(state.backtracks, 0);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_LE(log[i].lr, log[i - 1].lr);
  EXPECT_LT(log.back().lr, log.front().lr);
  EXPECT_TRUE(state.params.flatten().allFinite());
}

TEST(Train, NonFiniteStartRaisesNumericError) {
  const TrainingData data = tiny_data(12, 2, 16, 12);
  TrainConfig config = tiny_config(2);
  ModelParams<double> params = tiny_model(Variant::kSC, 12);
  params.D(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainState<double> state = start_training(params, config);
  EXPECT_THROW(train(state, data, config), NumericError);
}

TEST(Train, SameSeedGivesIdenticalRuns) {
  const TrainingData data = tiny_data(13, 3, 16, 12);
  const TrainConfig config = tiny_config(4);
  TrainState<double> a = start_training(tiny_model(Variant::kGroupSC, 13), config);
  TrainState<double> b = start_training(tiny_model(Variant::kGroupSC, 13), config);
  TrainConfig threaded = config;
  threaded.threads = 3;
  const auto la = train(a, data, config), lb = train(b, data, threaded);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    EXPECT_EQ(la[i].loss, lb[i].loss);
    EXPECT_EQ(la[i].lr, lb[i].lr);
  }
  EXPECT_TRUE(bit_equal(a.params.flatten(), b.params.flatten()));
}

TEST(Train, ResumeFromCheckpointIsBitExact) {
  const TrainingData data = tiny_data(14, 3, 16, 12);
  const TrainConfig config = tiny_config(6);
  TrainState<double> whole = start_training(tiny_model(Variant::kCSR, 14), config);
  const auto full_log = train(whole, data, config);

  TrainState<double> first = start_training(tiny_model(Variant::kCSR, 14), config);
  std::string bytes;
  auto log = train<double>(first, data, config, [&](const TrainState<double>& s, const LogEntry&) {
    bytes = encode_checkpoint(Checkpoint::from_state(s, "seed=7"));
    return s.epoch < 3;
  });
  ASSERT_EQ(log.size(), 3u);
  TrainState<double> resumed = decode_checkpoint(bytes).state<double>();
  EXPECT_EQ(resumed.epoch, 3);
  const auto rest = train(resumed, data, config);
  log.insert(log.end(), rest.begin(), rest.end());
  ASSERT_EQ(log.size(), full_log.size());
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].loss, full_log[i].loss) << i;
  EXPECT_TRUE(bit_equal(resumed.params.flatten(), whole.params.flatten()));
  EXPECT_TRUE(bit_equal(resumed.adam.first, whole.adam.first));
  EXPECT_EQ(resumed.rng_state, whole.rng_state);
}

TEST(Train, ShorterRunThenResumeIsBitExact) {
  const TrainingData data = tiny_data(31, 3, 16, 12);
  for (int monitor : {1, 3, 4}) {
    TrainConfig config = tiny_config(7);
    config.monitor_every = monitor;
    config.lr = 0.05;
    TrainState<double> whole = start_training(tiny_model(Variant::kSC, 31), config);
    train(whole, data, config);
    TrainConfig shorter = config;
    shorter.epochs = 3;
    TrainState<double> part = start_training(tiny_model(Variant::kSC, 31), config);
    train(part, data, shorter);
    TrainState<double> resumed =
        decode_checkpoint(encode_checkpoint(Checkpoint::from_state(part, ""))).state<double>();
    train(resumed, data, config);
    EXPECT_TRUE(bit_equal(resumed.params.flatten(), whole.params.flatten())) << monitor;
    EXPECT_EQ(resumed.best_loss, whole.best_loss) << monitor;
    EXPECT_EQ(resumed.backtracks, whole.backtracks) << monitor;
    EXPECT_EQ(encode_checkpoint(Checkpoint::from_state(resumed, "")),
              encode_checkpoint(Checkpoint::from_state(whole, "")));
  }
}

TEST(Checkpoint, DoubleRoundTripIsExact) {
  Rng rng(15);
  ModelParams<double> params = tiny_model(Variant::kGroupSC, 15);
  TrainState<double> state = start_training(params, tiny_config(1));
  state.adam.first = gaussian<double>(rng, params.size(), 1.0);
  state.adam.second = gaussian<double>(rng, params.size(), 1.0).cwiseAbs();
  state.adam.step = 17;
  state.epoch = 5;
  state.backtracks = 2;
  state.best_loss = 0.0123;
  state.best = Snapshot<double>{params.flatten(), state.adam.first, state.adam.second, 9};
  const Checkpoint back = decode_checkpoint(encode_checkpoint(Checkpoint::from_state(state, "a=1\nb=2\n")));
  const TrainState<double> s = back.state<double>();
  EXPECT_TRUE(bit_equal(s.params.flatten(), params.flatten()));
  EXPECT_EQ(s.params.variant, params.variant);
  EXPECT_EQ(s.params.patch_side, params.patch_side);
  EXPECT_TRUE(bit_equal(s.adam.first, state.adam.first));
  EXPECT_TRUE(bit_equal(s.adam.second, state.adam.second));
  EXPECT_EQ(s.adam.step, 17u);
  EXPECT_EQ(s.epoch, 5);
  EXPECT_EQ(s.backtracks, 2);
  EXPECT_EQ(s.best_loss, 0.0123);
  ASSERT_TRUE(s.best.has_value());
  EXPECT_EQ(s.best->step, 9u);
  EXPECT_EQ(s.rng_state, state.rng_state);
  EXPECT_EQ(back.config_text, "a=1\nb=2\n");
}

TEST(Checkpoint, SinglePrecisionStoresFloats) {
  const ModelParams<double> params = tiny_model(Variant::kCSR, 16);
  Checkpoint ckpt = Checkpoint::from_state(start_training(params, tiny_config(1)), "");
  ckpt.single_precision = true;
  const std::string bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(bytes.substr(0, 4), "GSCK");
  EXPECT_EQ(std::uint8_t(bytes[4]) | (std::uint8_t(bytes[5]) << 8), 1);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_TRUE(back.single_precision);
  const Vector<double> expected = params.flatten().cast<float>().cast<double>();
  EXPECT_TRUE(bit_equal(back.params.flatten(), expected));
  const std::string doubles = encode_checkpoint(Checkpoint::from_state(start_training(params, tiny_config(1)), ""));
  EXPECT_EQ(std::uint8_t(doubles[4]), 2);
  EXPECT_GT(doubles.size(), bytes.size());
}

TEST(Checkpoint, RejectsCorruptData) {
  const std::string bytes = encode_checkpoint(Checkpoint::from_state(start_training(tiny_model(Variant::kSC, 17), tiny_config(1)), ""));
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), FormatError);
  EXPECT_THROW(decode_checkpoint(""), FormatError);
  EXPECT_THROW(load_checkpoint(testing::scratch("ckpt") / "missing.gsck"), DataError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = testing::scratch("ckpt_file") / "model.gsck";
  const Checkpoint ckpt = Checkpoint::from_state(start_training(tiny_model(Variant::kGroupSC, 18), tiny_config(1)), "x=1\n");
  save_checkpoint(ckpt, path);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), encode_checkpoint(ckpt));
}

TEST(Blind, GradientReachesOnlyTheSampleLevel) {
  Rng rng(19);
  ModelInit init;
  init.variant = Variant::kSC;
  init.patch_side = 3;
  init.unroll = 2;
  init.sigma_levels = {5, 25};
  const ModelParams<double> params = init_model<double>(init, testing::unit_atoms(9, 12, rng) / 2.0);
  ASSERT_TRUE(params.blind());
  const Image<double> clean = synthetic_image(8, 8, 1, rng);
  Sample<double> s0 = sample_of(clean, add_awgn(clean, 5, rng)), s1 = sample_of(clean, add_awgn(clean, 25, rng));
  s0.level = 0;
  s1.level = 1;
  Vector<double> g0, g1;
  loss_and_gradient(params, s0, InferenceConfig{}, g0);
  loss_and_gradient(params, s1, InferenceConfig{}, g1);
  ModelParams<double> a = params, b = params;
  a.unflatten(g0);
  b.unflatten(g1);
  EXPECT_GT(a.blind_lambda[0].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a.blind_lambda[1].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(b.blind_lambda[0].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(b.blind_lambda[1].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a.lambda.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(a.D.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(b.D.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Blind, MakeSampleDrawsLevels) {
  const TrainingData data = tiny_data(20, 2, 16, 12);
  TrainConfig config = tiny_config(1);
  config.task = Task::kBlind;
  config.sigmas = {5, 15, 25, 50};
  Rng rng(21);
  std::vector<int> seen(4, 0);
  for (int i = 0; i < 200; ++i) {
    const Sample<double> s = make_sample<double>(data, data.clean.draw(rng, true), config, true, rng);
    ASSERT_GE(s.level, 0);
    ASSERT_LT(s.level, 4);
    ++seen[std::size_t(s.level)];
    const double sd = std::sqrt((s.obs.y.data - s.clean.data).squaredNorm() / double(s.clean.size())) * 255;
    EXPECT_NEAR(sd, config.sigmas[std::size_t(s.level)], 0.35 * config.sigmas[std::size_t(s.level)]);
  }
  for (int n : seen) EXPECT_GT(n, 20);
}

TEST(Samples, DemosaickAndPairedObservations) {
  Rng rng(22);
  std::vector<Image<double>> clean = scenes(2, 16, 16, 3, rng), degraded;
  for (const auto& img : clean) degraded.push_back(add_awgn(img, 10, rng));
  const TrainingData data{Dataset(clean, testing::names(2), 12), degraded};
  TrainConfig config = tiny_config(1);
  config.crop = 12;

  config.task = Task::kDemosaick;
  config.sigmas = {0};
  const Dataset::Draw d = data.clean.draw(rng, true);
  const Sample<double> mos = make_sample<double>(data, d, config, false, rng);
  ASSERT_TRUE(mos.obs.mask.has_value());
  const Mosaic<double> expected = mosaic(data.clean.apply(d), BayerPattern::kRGGB);
  EXPECT_EQ(mos.obs.y.data, expected.observed.data);
  EXPECT_EQ(mos.obs.mask->data, expected.mask.data);

  config.task = Task::kPaired;
  const Sample<double> paired = make_sample<double>(data, d, config, false, rng);
  EXPECT_EQ(paired.obs.y.data, data.clean.apply(d, degraded[d.image]).data);
  EXPECT_EQ(paired.clean.data, data.clean.apply(d).data);

  const TrainingData unpaired{Dataset(clean, testing::names(2), 12), {}};
  EXPECT_THROW(make_sample<double>(unpaired, d, config, false, rng), DataError);
}

TEST(Dictionary, RankOnePatchesGiveTheDirection) {
  Rng rng(23);
  const Vector<double> v = gaussian<double>(rng, 9, 1.0).normalized();
  Matrix<double> patches(9, 40);
  for (Index n = 0; n < 40; ++n) patches.col(n) = (0.5 + rng.uniform()) * (rng.uniform() < 0.5 ? -1 : 1) * v;
  const Matrix<double> d = init_dictionary(patches, 1, 30, 0.01, rng);
  EXPECT_GT(std::abs(d.col(0).normalized().dot(v)), 1 - 1e-9);
}

TEST(Dictionary, UnitSpectralNormAndMonotoneObjective) {
  Rng rng(24);
  const std::vector<Image<double>> images = scenes(3, 32, 32, 1, rng);
  const Dataset data(images, testing::names(3), 16);
  const Matrix<double> patches = sample_patches(data, 5, 600, rng);
  EXPECT_LT(patches.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  DictionaryLog log;
  const Matrix<double> d = init_dictionary(patches, 32, 40, 0.02, rng, &log);
  EXPECT_NEAR(Eigen::JacobiSVD<Matrix<double>>(d).singularValues()(0), 1.0, 1e-5);
  ASSERT_EQ(log.objective.size(), 80u);
  for (std::size_t i = 1; i < log.objective.size(); ++i)
    EXPECT_LE(log.objective[i], log.objective[i - 1] * (1 + 1e-12)) << i;
}

TEST(Dictionary, NeedsTenPatchesPerAtom) {
  Rng rng(25);
  const Matrix<double> patches = gaussian<double>(rng, 9 * 79, 1.0).reshaped(9, 79);
  EXPECT_THROW(init_dictionary(patches, 8, 5, 0.1, rng), DataError);
  EXPECT_NO_THROW(init_dictionary(patches.leftCols(40), 4, 5, 0.1, rng));
}

TEST(InitModel, ThresholdsAndShapes) {
  Rng rng(26);
  ModelInit init;
  init.variant = Variant::kGroupSC;
  init.patch_side = 3;
  init.unroll = 12;
  init.update_period = 6;
  init.sigma = 25;
  const Matrix<double> dict = testing::unit_atoms(9, 16, rng);
  const ModelParams<double> p = init_model<double>(init, dict);
  EXPECT_EQ(p.C, dict);
  EXPECT_EQ(p.D, dict);
  EXPECT_EQ(p.W, dict);
  EXPECT_EQ(p.lambda.rows(), 16);
  EXPECT_EQ(p.lambda.cols(), 12);
  EXPECT_EQ(p.lambda(3, 7), 0.5 * 25 / 255.0);
  EXPECT_EQ(p.nu_raw.size(), 2);
  init.tie_nu = true;
  EXPECT_EQ(init_model<double>(init, dict).nu_raw.size(), 1);
}

GradCheckReport check_variant(Variant v, std::uint64_t seed, std::optional<OpKind> fault = std::nullopt,
                              double epsilon = 1e-7) {
  Rng rng(seed);
  const ModelParams<double> params = random_model(v, 3, 1, 8, 2, v == Variant::kSC ? 0 : 2, rng, 0.05);
  const Image<double> clean = synthetic_image(8, 8, 1, rng);
  InferenceConfig config;
  config.window = 5;
  config.update_period = 1;
  return grad_check(params, sample_of(clean, add_awgn(clean, 25, rng)), config, epsilon, fault);
}

TEST(GradCheck, EveryVariantPasses) {
  for (Variant v : {Variant::kSC, Variant::kGroupSC, Variant::kCSR}) {
    const GradCheckReport r = check_variant(v, 27);
    EXPECT_TRUE(r.pass()) << variant_name(v);
    for (const auto& g : r.groups) EXPECT_LT(g.max_rel_error, 1e-4) << variant_name(v) << " " << g.name;
  }
}

TEST(GradCheck, GroupScSmallExampleWithCoarseStep) {
  const GradCheckReport r = check_variant(Variant::kGroupSC, 28, std::nullopt, 1e-4);
  for (const auto& g : r.groups) EXPECT_LT(g.max_rel_error, 1e-4) << g.name;
}

TEST(GradCheck, InjectedFaultsAreCaught) {
  for (OpKind op : {OpKind::kSoftThreshold, OpKind::kMatmul}) {
    const GradCheckReport r = check_variant(Variant::kSC, 29, op);
    EXPECT_FALSE(r.pass());
    double worst = 0;
    for (const auto& g : r.groups) worst = std::max(worst, g.max_rel_error);
    EXPECT_GT(worst, 1e-2);
  }
  const GradCheckReport r = check_variant(Variant::kGroupSC, 30, OpKind::kGroupShrink);
  EXPECT_FALSE(r.pass());
}

}  // namespace
}  // namespace gsc
