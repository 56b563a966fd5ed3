#include "gsc/train.hpp"

#include <algorithm>
#include <cmath>

namespace gsc {

Task parse_task(const std::string& name) {
  if (name == "denoise") return Task::kDenoise;
  if (name == "blind") return Task::kBlind;
  if (name == "demosaick") return Task::kDemosaick;
  if (name == "paired") return Task::kPaired;
  throw std::invalid_argument("unknown task '" + name + "' (expected denoise, blind, demosaick or paired)");
}

const char* task_name(Task t) {
  switch (t) {
    case Task::kDenoise: return "denoise";
    case Task::kBlind: return "blind";
    case Task::kDemosaick: return "demosaick";
    case Task::kPaired: return "paired";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train: ") + what);
  };
  positive(epochs >= 0, "epochs must be >= 0");
  positive(batch >= 1, "batch must be >= 1");
  positive(crop >= 1, "crop must be >= 1");
  positive(crops_per_image >= 1, "crops_per_image must be >= 1");
  positive(lr >= 0 && std::isfinite(lr), "lr must be finite and >= 0");
  positive(lr_decay > 0 && lr_decay <= 1, "lr_decay must be in (0, 1]");
  positive(decay_every >= 1, "decay_every must be >= 1");
  positive(backtrack > 0 && backtrack < 1, "backtrack must be in (0, 1)");
  positive(monitor_every >= 1, "monitor_every must be >= 1");
  positive(divergence_ratio >= 1, "divergence_ratio must be >= 1");
  positive(monitor_crops >= 1, "monitor_crops must be >= 1");
  positive(!sigmas.empty(), "at least one noise level is required");
  for (double s : sigmas) positive(s >= 0 && std::isfinite(s), "noise levels must be >= 0");
  positive(threads >= 1, "threads must be >= 1");
}

template <typename Scalar>
Sample<Scalar> make_sample(const TrainingData& data, const Dataset::Draw& draw, const TrainConfig& config,
                           bool blind_model, Rng& rng) {
  const Image<double> clean = data.clean.apply(draw);
  Sample<Scalar> s;
  s.clean = clean.cast<Scalar>();
  double sigma = config.sigmas.front();
  if (blind_model) {
    s.level = int(rng.below(config.sigmas.size()));
    sigma = config.sigmas[std::size_t(s.level)];
  }
  switch (config.task) {
    case Task::kDenoise:
    case Task::kBlind:
      s.obs.y = add_awgn(clean, sigma, rng).cast<Scalar>();
      break;
    case Task::kDemosaick: {
      Mosaic<double> mos = mosaic(clean, config.pattern);
      if (sigma > 0) {
        const Image<double> noisy = add_awgn(mos.observed, sigma, rng);
        mos.observed.data = noisy.data.cwiseProduct(mos.mask.data);
      }
      s.obs = demosaick_observation<Scalar>(mos.observed.cast<Scalar>(), mos.mask.cast<Scalar>(),
                                            config.inference.demosaick_init);
      break;
    }
    case Task::kPaired:
      if (data.degraded.size() != data.clean.size()) throw DataError("paired training needs degraded images");
      s.obs.y = data.clean.apply(draw, data.degraded[draw.image]).cast<Scalar>();
      break;
  }
  return s;
}

template <typename Scalar>
Scalar sample_loss(const ModelParams<Scalar>& params, const Sample<Scalar>& sample, const InferenceConfig& config) {
  const Image<Scalar> x = infer(params, sample.obs, config, sample.level);
  require_shape(x.same_shape(sample.clean), "loss: restored crop does not match its target");
  return (x.data - sample.clean.data).squaredNorm() / Scalar(x.size());
}

template <typename Scalar>
double loss(const std::vector<Sample<Scalar>>& batch, const ModelParams<Scalar>& params,
            const InferenceConfig& config) {
  require_shape(!batch.empty(), "loss: empty batch");
  double sum = 0;
  for (const auto& s : batch) sum += double(sample_loss(params, s, config));
  return sum / double(batch.size());
}

template <typename Scalar>
Scalar loss_and_gradient(const ModelParams<Scalar>& params, const Sample<Scalar>& sample,
                         const InferenceConfig& config, Vector<Scalar>& gradient, std::optional<OpKind> fault) {
  Tape<Scalar> tape;
  const ParamVars<Scalar> vars = bind(params, tape, sample.level);
  const Var<Scalar> x = unrolled_forward<Scalar>(vars, params.variant, Scalar(params.csr_gamma), params.patch_side,
                                                 sample.obs, config);
  const Var<Scalar> l = mse(x, Matrix<Scalar>(sample.clean.data));
  tape.close();
  if (fault) tape.inject_fault(*fault);
  tape.backward(l);
  gradient = flatten_gradients(params, tape);
  return l.value()(0, 0);
}

double learning_rate(const TrainConfig& config, int epoch, std::uint64_t step, int backtracks) {
  const std::uint64_t ticks = config.decay_unit == DecayUnit::kEpoch ? std::uint64_t(epoch) : step;
  const double decays = double(ticks / std::uint64_t(config.decay_every));
  return config.lr * std::pow(config.lr_decay, decays) * std::pow(config.backtrack, double(backtracks));
}

template <typename Scalar>
TrainState<Scalar> start_training(ModelParams<Scalar> params, const TrainConfig& config) {
  params.validate();
  TrainState<Scalar> state;
  state.adam = AdamState<Scalar>(params.size());
  state.params = std::move(params);
  state.rng_state = Rng(config.seed).fork(0x747261696eULL).state();
  return state;
}

namespace {

template <typename Scalar>
Snapshot<Scalar> take_snapshot(const TrainState<Scalar>& state) {
  return Snapshot<Scalar>{state.params.flatten(), state.adam.first, state.adam.second, state.adam.step};
}

template <typename Scalar>
void restore_snapshot(TrainState<Scalar>& state, const Snapshot<Scalar>& snap) {
  state.params.unflatten(snap.params);
  state.adam.first = snap.first;
  state.adam.second = snap.second;
  state.adam.step = snap.step;
}

}  // namespace

constexpr int kMaxBacktracks = 100;

template <typename Scalar>
std::vector<LogEntry> train(TrainState<Scalar>& state, const TrainingData& data, const TrainConfig& config,
                            const EpochCallback<Scalar>& on_epoch) {
  config.validate();
  state.params.validate();
  if (data.clean.size() == 0) throw DataError("training set is empty");
  if (config.task == Task::kBlind && !state.params.blind()) throw std::invalid_argument("blind task needs a blind model");
  if (state.params.blind() && state.params.sigma_levels != config.sigmas)
    throw std::invalid_argument("blind model levels differ from the configured noise levels");
  if (state.adam.first.size() != state.params.size()) state.adam = AdamState<Scalar>(state.params.size());

  const bool blind = state.params.blind();
  // The monitoring set depends on the seed only, so a resumed run sees the
  // same crops.
  std::vector<Sample<Scalar>> monitor_set;
  {
    Rng mrng = Rng(config.seed).fork(0x6d6f6e69746f72ULL);
    for (int i = 0; i < config.monitor_crops; ++i) {
      const Dataset::Draw d = data.clean.draw(std::size_t(i) % data.clean.size(), mrng, false);
      monitor_set.push_back(make_sample<Scalar>(data, d, config, blind, mrng));
    }
  }
  auto count_backtrack = [&] {
    if (++state.backtracks > kMaxBacktracks) throw NumericError("training keeps diverging after repeated backtracking");
  };
  auto check_divergence = [&] {
    const double m = loss(monitor_set, state.params, config.inference);
    if (!state.best) {
      if (!std::isfinite(m)) throw NumericError("monitor loss is not finite at the start of training");
      state.best_loss = m;
      state.best = take_snapshot(state);
    } else if (!(m <= config.divergence_ratio * state.best_loss)) {
      restore_snapshot(state, *state.best);
      count_backtrack();
    } else if (m < state.best_loss) {
      state.best_loss = m;
      state.best = take_snapshot(state);
    }
  };

  std::vector<LogEntry> log;
  Rng rng(state.rng_state);
  for (int epoch = state.epoch; epoch < config.epochs; ++epoch) {
    if (epoch % config.monitor_every == 0 || !state.best) check_divergence();
    std::vector<Dataset::Draw> draws;
    for (std::size_t i = 0; i < data.clean.size(); ++i)
      for (int c = 0; c < config.crops_per_image; ++c) draws.push_back(data.clean.draw(i, rng, config.augment));
    for (std::size_t i = draws.size(); i > 1; --i) std::swap(draws[i - 1], draws[std::size_t(rng.below(i))]);

    double loss_sum = 0;
    std::size_t loss_count = 0;
    double lr = learning_rate(config, epoch, state.adam.step, state.backtracks);
    for (std::size_t start = 0; start < draws.size(); start += std::size_t(config.batch)) {
      const std::size_t end = std::min(draws.size(), start + std::size_t(config.batch));
      std::vector<Sample<Scalar>> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(make_sample<Scalar>(data, draws[i], config, blind, rng));
      std::vector<Scalar> losses(batch.size());
      std::vector<Vector<Scalar>> grads(batch.size());
      parallel_for(Index(batch.size()), config.threads, [&](Index i) {
        losses[std::size_t(i)] = loss_and_gradient(state.params, batch[std::size_t(i)], config.inference,
                                                   grads[std::size_t(i)]);
      });
      double batch_loss = 0;
      Vector<Scalar> grad = Vector<Scalar>::Zero(state.params.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        batch_loss += double(losses[i]);
        grad += grads[i];
      }
      batch_loss /= double(batch.size());
      grad /= Scalar(batch.size());
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        restore_snapshot(state, *state.best);
        count_backtrack();
        continue;
      }
      lr = learning_rate(config, epoch, state.adam.step, state.backtracks);
      Vector<Scalar> flat = state.params.flatten();
      adam_step<Scalar>(state.adam, flat, grad, lr);
      if (!flat.allFinite()) {
        restore_snapshot(state, *state.best);
        count_backtrack();
        continue;
      }
      state.params.unflatten(flat);
      loss_sum += batch_loss * double(batch.size());
      loss_count += batch.size();
    }
    state.epoch = epoch + 1;
    state.rng_state = rng.state();
    const LogEntry entry{epoch, loss_count ? loss_sum / double(loss_count) : std::nan(""), lr};
    log.push_back(entry);
    if (on_epoch && !on_epoch(state, entry)) return log;
  }
  // Same schedule as the check opening an epoch.
  if (state.epoch >= config.epochs && state.epoch % config.monitor_every == 0) check_divergence();
  return log;
}

Matrix<double> sample_patches(const Dataset& data, int side, Index count, Rng& rng) {
  if (data.size() == 0) throw DataError("no images to sample patches from");
  const int c = data.channels();
  Matrix<double> out(Index(c) * side * side, count);
  for (Index n = 0; n < count; ++n) {
    const Image<double>& img = data.image(std::size_t(rng.below(data.size())));
    if (img.height < side || img.width < side) throw DataError("image smaller than the patch size");
    const int r0 = int(rng.below(std::uint64_t(img.height - side + 1)));
    const int c0 = int(rng.below(std::uint64_t(img.width - side + 1)));
    Index e = 0;
    for (int dr = 0; dr < side; ++dr)
      for (int dc = 0; dc < side; ++dc)
        for (int ch = 0; ch < c; ++ch) out(e++, n) = img.at(r0 + dr, c0 + dc, ch);
    out.col(n).array() -= out.col(n).mean();
  }
  return out;
}

namespace {

double dictionary_objective(const Matrix<double>& y, const Matrix<double>& d, const Matrix<double>& a, double lambda) {
  return 0.5 * (y - matmul<double>(d, a)).squaredNorm() + lambda * a.cwiseAbs().sum();
}

}  // namespace

Matrix<double> init_dictionary(const Matrix<double>& patches, Index p, int iterations, double lambda, Rng& rng,
                               DictionaryLog* log) {
  const Index m = patches.rows(), n = patches.cols();
  if (p < 1) throw std::invalid_argument("dictionary size must be >= 1");
  if (n < 10 * p) throw DataError("dictionary learning needs at least 10 patches per atom");
  if (iterations < 0 || lambda < 0) throw std::invalid_argument("bad dictionary learning settings");
  Matrix<double> d(m, p);
  for (Index j = 0; j < p; ++j) {
    Vector<double> atom = patches.col(Index(rng.below(std::uint64_t(n))));
    if (atom.norm() == 0) atom = gaussian<double>(rng, m, 1.0);
    d.col(j) = atom / atom.norm();
  }
  Matrix<double> a = Matrix<double>::Zero(p, n);
  constexpr int kCodeSteps = 10;
  for (int it = 0; it < iterations; ++it) {
    // Power iteration slightly underestimates the Lipschitz constants; the
    // margin keeps every step a descent step.
    const double ld = std::pow(spectral_norm<double>(d, 1e-8), 2) * 1.01 + 1e-12;
    const Vector<double> eta = Vector<double>::Constant(p, lambda / ld);
    for (int t = 0; t < kCodeSteps; ++t)
      a = soft_threshold<double>(a - matmul_tn<double>(d, matmul<double>(d, a) - patches) / ld, eta);
    if (log) log->objective.push_back(dictionary_objective(patches, d, a, lambda));
    const double la = std::pow(spectral_norm<double>(a, 1e-8), 2) * 1.01;
    if (la > 0) {
      d -= matmul_nt<double>(matmul<double>(d, a) - patches, a) / la;
      for (Index j = 0; j < p; ++j) {
        const double norm = d.col(j).norm();
        if (norm > 1) d.col(j) /= norm;
      }
    }
    if (log) log->objective.push_back(dictionary_objective(patches, d, a, lambda));
  }
  const double s = spectral_norm<double>(d, 1e-6);
  if (!(s > 0)) throw NumericError("dictionary learning produced a zero dictionary");
  return d / s;
}

template <typename Scalar>
ModelParams<Scalar> init_model(const ModelInit& init, const Matrix<double>& dictionary) {
  ModelParams<Scalar> p;
  p.variant = init.variant;
  p.patch_side = init.patch_side;
  p.channels = init.channels;
  p.C = p.D = p.W = dictionary.cast<Scalar>();
  const Index atoms = dictionary.cols();
  if (init.unroll < 1) throw std::invalid_argument("unroll must be >= 1");
  p.lambda = Matrix<Scalar>::Constant(atoms, init.unroll, Scalar(init.lambda_scale * init.sigma / 255.0));
  p.kappa = Vector<Scalar>::Constant(dictionary.rows(), Scalar(init.kappa_init));
  const int refreshes = refresh_count(init.variant, init.unroll, init.update_period);
  p.nu_raw = Vector<Scalar>::Constant(init.tie_nu ? std::min(refreshes, 1) : refreshes, Scalar(init.nu_init));
  p.csr_gamma = init.csr_gamma;
  p.sigma_levels = init.sigma_levels;
  for (double s : init.sigma_levels)
    p.blind_lambda.push_back(Matrix<Scalar>::Constant(atoms, init.unroll, Scalar(init.lambda_scale * s / 255.0)));
  p.validate();
  return p;
}

bool GradCheckReport::pass() const {
  for (const auto& g : groups)
    if (!(g.max_rel_error < tolerance)) return false;
  return true;
}

GradCheckReport grad_check(const ModelParams<double>& params, const Sample<double>& sample,
                           const InferenceConfig& config, double epsilon, std::optional<OpKind> fault) {
  Vector<double> analytic;
  loss_and_gradient(params, sample, config, analytic, fault);
  std::vector<std::pair<std::string, Index>> groups = {
      {"C", params.C.size()},          {"D", params.D.size()},         {"W", params.W.size()},
      {"lambda", params.lambda.size()}, {"kappa", params.kappa.size()}, {"nu_raw", params.nu_raw.size()}};
  for (std::size_t l = 0; l < params.blind_lambda.size(); ++l)
    groups.emplace_back(blind_lambda_name(params.sigma_levels[l]), params.blind_lambda[l].size());
  const Vector<double> base = params.flatten();
  ModelParams<double> probe = params;
  GradCheckReport report;
  Index offset = 0;
  for (const auto& [name, size] : groups) {
    GradCheckGroup g{name, size, 0, 0};
    double max_fd = 0, max_diff = 0;
    for (Index i = offset; i < offset + size; ++i) {
      Vector<double> v = base;
      v[i] = base[i] + epsilon;
      probe.unflatten(v);
      const double up = sample_loss(probe, sample, config);
      v[i] = base[i] - epsilon;
      probe.unflatten(v);
      const double down = sample_loss(probe, sample, config);
      const double fd = (up - down) / (2 * epsilon);
      max_fd = std::max(max_fd, std::abs(fd));
      g.max_abs_gradient = std::max(g.max_abs_gradient, std::abs(analytic[i]));
      max_diff = std::max(max_diff, std::abs(fd - analytic[i]));
    }
    const double scale = std::max(max_fd, g.max_abs_gradient);
    g.max_rel_error = scale > 0 ? max_diff / scale : 0.0;
    report.groups.push_back(g);
    offset += size;
  }
  return report;
}

#define GSC_INSTANTIATE(S)                                                                                       \
  template Sample<S> make_sample<S>(const TrainingData&, const Dataset::Draw&, const TrainConfig&, bool, Rng&); \
  template S sample_loss<S>(const ModelParams<S>&, const Sample<S>&, const InferenceConfig&);                  \
  template double loss<S>(const std::vector<Sample<S>>&, const ModelParams<S>&, const InferenceConfig&);       \
  template S loss_and_gradient<S>(const ModelParams<S>&, const Sample<S>&, const InferenceConfig&, Vector<S>&, \
                                  std::optional<OpKind>);                                                     \
  template TrainState<S> start_training<S>(ModelParams<S>, const TrainConfig&);                                \
  template std::vector<LogEntry> train<S>(TrainState<S>&, const TrainingData&, const TrainConfig&,             \
                                          const EpochCallback<S>&);                                             \
  template ModelParams<S> init_model<S>(const ModelInit&, const Matrix<double>&);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
