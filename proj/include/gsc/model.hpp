#pragma once

#include "gsc/imageio.hpp"
#include "gsc/patch.hpp"
#include "gsc/prox.hpp"
#include "gsc/similarity.hpp"
#include "gsc/tape.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gsc {

enum class Variant { kSC, kGroupSC, kCSR };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

/// Learnable parameters. Thresholds are stored column-wise: column k of
/// `lambda` is the p-vector used at unrolled step k. Blind models keep one
/// such p x K matrix per noise level and share everything else.
template <typename Scalar>
struct ModelParams {
  Variant variant = Variant::kSC;
  int patch_side = 7;
  int channels = 1;
  Matrix<Scalar> C, D, W;  // m x p
  Matrix<Scalar> lambda;   // p x K
  Vector<Scalar> kappa;    // m
  Vector<Scalar> nu_raw;   // one entry per refresh event (or one if tied)
  double csr_gamma = 0;
  std::vector<double> sigma_levels;          // blind models only, ascending
  std::vector<Matrix<Scalar>> blind_lambda;  // p x K per level; `lambda` is then unused

  Index m() const { return D.rows(); }
  Index p() const { return D.cols(); }
  int unroll() const { return int(lambda.cols()); }
  bool blind() const { return !sigma_levels.empty(); }

  /// Total number of scalars, in the order C, D, W, lambda, kappa, nu_raw,
  /// blind lambdas.
  Index size() const;
  Vector<Scalar> flatten() const;
  void unflatten(const Vector<Scalar>& v);
  /// Throws ShapeError if the parts disagree.
  void validate() const;

  template <typename Other>
  ModelParams<Other> cast() const;
};

/// Parameter names used on the tape.
std::string blind_lambda_name(double sigma);

template <typename Scalar>
struct ParamVars {
  Var<Scalar> C, D, W, lambda, kappa, nu_raw;
};

/// Registers every parameter on `tape` (all blind levels included) and
/// returns handles whose thresholds are those of `level` (-1 for the
/// non-blind set).
template <typename Scalar>
ParamVars<Scalar> bind(const ModelParams<Scalar>& params, Tape<Scalar>& tape, int level = -1);
/// Same handles as constants.
template <typename Scalar>
ParamVars<Scalar> constants(const ModelParams<Scalar>& params, int level = -1);

/// Tape gradients gathered into the flatten() layout.
template <typename Scalar>
Vector<Scalar> flatten_gradients(const ModelParams<Scalar>& params, const Tape<Scalar>& tape);

enum class DemosaickInit { kBilinear, kObserved };

struct InferenceConfig {
  int window = 56;
  int update_period = 6;
  bool middle_averaging = true;
  int stride = 48;
  bool center_distance = false;
  DemosaickInit demosaick_init = DemosaickInit::kBilinear;
  int threads = 1;
};

template <typename Scalar>
struct Observation {
  Image<Scalar> y;
  std::optional<Image<Scalar>> mask;  // observed entries; absent means fully observed
  std::optional<Image<Scalar>> init;  // starting estimate for similarities; defaults to y
};

/// Codes after every unrolled step and the similarity matrices in use.
template <typename Scalar>
struct Trace {
  std::vector<Matrix<Scalar>> codes;
  std::vector<Matrix<Scalar>> sigma;
  PatchSet<Scalar> patches;
};

/// The unrolled forward pass of any variant. Returns the restored image as a
/// (h*w*c) x 1 column; it is recorded on the tape of `vars` if they carry one.
/// A non-null `fixed_similarity` replaces the learned similarities.
template <typename Scalar>
Var<Scalar> unrolled_forward(const ParamVars<Scalar>& vars, Variant variant, Scalar csr_gamma, int patch_side,
                             const Observation<Scalar>& obs, const InferenceConfig& config,
                             const Matrix<Scalar>* fixed_similarity = nullptr, Trace<Scalar>* trace = nullptr);

/// Whole-image inference. Blind models pick their level from the noise
/// estimate when `level` is -1.
template <typename Scalar>
Image<Scalar> infer(const ModelParams<Scalar>& params, const Observation<Scalar>& obs,
                    const InferenceConfig& config, int level = -1, Trace<Scalar>* trace = nullptr);

template <typename Scalar>
Image<Scalar> infer_sc(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config);
template <typename Scalar>
Image<Scalar> infer_groupsc(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config);
template <typename Scalar>
Image<Scalar> infer_csr(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config);
/// Masked restoration of a mosaicked image; the similarity estimate starts
/// from a bilinear interpolation of the observed sites.
template <typename Scalar>
Image<Scalar> infer_demosaick(const Image<Scalar>& observed, const Image<Scalar>& mask,
                              const ModelParams<Scalar>& params, const InferenceConfig& config);

template <typename Scalar>
Observation<Scalar> demosaick_observation(const Image<Scalar>& observed, const Image<Scalar>& mask,
                                          DemosaickInit init);

/// Robust noise level on the 0-255 scale: median |HH| / 0.6745 over the
/// diagonal coefficients of a non-overlapping 2x2 Haar transform of the
/// luminance (channel mean, rescaled to unit noise gain).
template <typename Scalar>
double estimate_noise_sigma(const Image<Scalar>& image);

/// Index of the level nearest to sigma_hat; ties go to the larger level.
int nearest_level(const std::vector<double>& levels, double sigma_hat);

template <typename Scalar>
int select_blind_lambda(const Image<Scalar>& y, const ModelParams<Scalar>& params);

/// Block start offsets along one dimension: 0, s, 2s, ... with the last
/// block snapped to the border. A dimension not larger than the block is a
/// single block covering it.
std::vector<int> block_starts(int extent, int block, int stride);

/// Splits the observation into window x window blocks, restores each with
/// `restore`, and averages overlapping block outputs per pixel.
template <typename Scalar>
Image<Scalar> process_blocks(const Observation<Scalar>& obs, int block, int stride, int threads,
                             const std::function<Image<Scalar>(const Observation<Scalar>&)>& restore);

/// infer() applied block by block with block size config.window.
template <typename Scalar>
Image<Scalar> restore(const ModelParams<Scalar>& params, const Observation<Scalar>& obs,
                      const InferenceConfig& config, int level = -1);

/// Refresh events the model performs for K steps under `config`.
int refresh_count(Variant variant, int unroll, int update_period);

}  // namespace gsc
