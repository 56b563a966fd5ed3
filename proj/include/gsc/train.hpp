#pragma once

#include "gsc/model.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace gsc {

enum class Task { kDenoise, kBlind, kDemosaick, kPaired };
Task parse_task(const std::string& name);
const char* task_name(Task t);

enum class DecayUnit { kEpoch, kStep };

struct TrainConfig {
  int epochs = 300;
  int batch = 32;
  int crop = 56;
  int crops_per_image = 1;
  double lr = 6e-4;
  double lr_decay = 0.35;
  int decay_every = 80;
  DecayUnit decay_unit = DecayUnit::kEpoch;
  double backtrack = 0.8;
  int monitor_every = 20;
  double divergence_ratio = 1.5;
  int monitor_crops = 16;
  /// Noise level(s) on the 0-255 scale; several levels for blind training.
  std::vector<double> sigmas{25.0};
  Task task = Task::kDenoise;
  BayerPattern pattern = BayerPattern::kRGGB;
  bool augment = true;
  std::uint64_t seed = 0;
  int threads = 1;
  InferenceConfig inference;

  void validate() const;
};

/// Training images, with degraded counterparts for paired training.
struct TrainingData {
  Dataset clean;
  std::vector<Image<double>> degraded;
};

/// One training crop: the clean target and what the model sees.
template <typename Scalar>
struct Sample {
  Image<Scalar> clean;
  Observation<Scalar> obs;
  int level = -1;
};

/// Builds the observation for a drawn crop according to the task. Noise and
/// blind levels are drawn from `rng`.
template <typename Scalar>
Sample<Scalar> make_sample(const TrainingData& data, const Dataset::Draw& draw, const TrainConfig& config,
                           bool blind_model, Rng& rng);

/// Mean squared error per entry of the restored crop.
template <typename Scalar>
Scalar sample_loss(const ModelParams<Scalar>& params, const Sample<Scalar>& sample, const InferenceConfig& config);

/// Mean of sample_loss over a batch.
template <typename Scalar>
double loss(const std::vector<Sample<Scalar>>& batch, const ModelParams<Scalar>& params,
            const InferenceConfig& config);

/// Loss of one crop and its gradient in the flatten() layout.
template <typename Scalar>
Scalar loss_and_gradient(const ModelParams<Scalar>& params, const Sample<Scalar>& sample,
                         const InferenceConfig& config, Vector<Scalar>& gradient,
                         std::optional<OpKind> fault = std::nullopt);

struct LogEntry {
  int epoch = 0;
  double loss = 0;
  double lr = 0;
};

/// Parameter and optimizer values restored on divergence.
template <typename Scalar>
struct Snapshot {
  Vector<Scalar> params;
  Vector<Scalar> first;
  Vector<Scalar> second;
  std::uint64_t step = 0;
};

/// Everything needed to continue a run exactly where it stopped.
template <typename Scalar>
struct TrainState {
  ModelParams<Scalar> params;
  AdamState<Scalar> adam;
  std::uint64_t rng_state = 0;
  int epoch = 0;  // epochs completed
  int backtracks = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::optional<Snapshot<Scalar>> best;
};

/// Learning rate after the scheduled decays and `backtracks` reductions.
double learning_rate(const TrainConfig& config, int epoch, std::uint64_t step, int backtracks);

/// Fresh state for a run: zero optimizer moments, generator seeded from the
/// config.
template <typename Scalar>
TrainState<Scalar> start_training(ModelParams<Scalar> params, const TrainConfig& config);

/// Called after every epoch; returning false stops the run early.
template <typename Scalar>
using EpochCallback = std::function<bool(const TrainState<Scalar>&, const LogEntry&)>;

/// Runs epochs state.epoch .. config.epochs-1.
template <typename Scalar>
std::vector<LogEntry> train(TrainState<Scalar>& state, const TrainingData& data, const TrainConfig& config,
                            const EpochCallback<Scalar>& on_epoch = nullptr);

/// Centered patches drawn at random positions of random images.
Matrix<double> sample_patches(const Dataset& data, int side, Index count, Rng& rng);

struct DictionaryLog {
  /// Objective sum_i 1/2 ||y_i - D a_i||^2 + lambda ||a_i||_1 after every
  /// half step (codes, then dictionary).
  std::vector<double> objective;
};

/// Alternating minimization: ISTA on the codes, projected gradient on the
/// atoms (each kept inside the unit ball). The result is divided by its
/// largest singular value.
Matrix<double> init_dictionary(const Matrix<double>& patches, Index p, int iterations, double lambda, Rng& rng,
                               DictionaryLog* log = nullptr);

struct ModelInit {
  Variant variant = Variant::kGroupSC;
  int patch_side = 7;
  int channels = 1;
  int unroll = 24;
  int update_period = 6;
  bool tie_nu = false;
  double csr_gamma = 1.0;
  /// Noise level for the thresholds (non-blind) or the blind level set.
  double sigma = 25;
  std::vector<double> sigma_levels;
  /// Initial threshold = lambda_scale * sigma / 255.
  double lambda_scale = 0.5;
  double kappa_init = 1.0;
  double nu_init = 0.0;
};

/// C = D = W = dictionary, constant thresholds, constant kappa and nu_raw.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelInit& init, const Matrix<double>& dictionary);

struct GradCheckGroup {
  std::string name;
  Index entries = 0;
  double max_abs_gradient = 0;
  double max_rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 1e-4;
  bool pass() const;
};

/// Central finite differences on every parameter entry against the tape.
/// Per group, the error is max|fd - g| / max(max|fd|, max|g|).
GradCheckReport grad_check(const ModelParams<double>& params, const Sample<double>& sample,
                           const InferenceConfig& config, double epsilon = 1e-7,
                           std::optional<OpKind> fault = std::nullopt);

}  // namespace gsc
