#pragma once

#include "gsc/train.hpp"

#include <filesystem>
#include <string>

namespace gsc {

/// Binary checkpoint: "GSCK", u16 version, u32 m, p, K, refresh count,
/// level count, variant, patch side, channels, then the arrays D, C, W,
/// thresholds, kappa, nu_raw, blind thresholds, ADAM first and second
/// moments, then u64 generator state and u32 epoch. Version 1 stores arrays
/// as float32, version 2 as float64. A trailer follows with the fields
/// needed to resume a run exactly.
struct Checkpoint {
  ModelParams<double> params;
  AdamState<double> adam;
  std::uint64_t rng_state = 0;
  std::uint32_t epoch = 0;
  std::uint32_t backtracks = 0;
  double best_loss = 0;
  std::optional<Snapshot<double>> best;
  bool single_precision = false;
  /// Settings the checkpoint was trained with, as key=value text.
  std::string config_text;

  template <typename Scalar>
  static Checkpoint from_state(const TrainState<Scalar>& state, const std::string& config_text);
  template <typename Scalar>
  TrainState<Scalar> state() const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gsc
