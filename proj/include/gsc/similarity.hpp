#pragma once

#include "gsc/patch.hpp"
#include "gsc/tape.hpp"

#include <string>

namespace gsc {

/// N x N 0/1 matrix with ones where the top-left corners of two patches are
/// within Chebyshev distance floor(w / 2). w = 1 gives the identity.
template <typename Scalar>
Matrix<Scalar> window_mask(const PatchGeometry& g, int window);

/// Sigma_ij = exp(-||diag(kappa)(x_i - x_j)||^2) inside the window, 0
/// outside, 1 on the diagonal. `patches` is m x N, `kappa` has m entries.
template <typename Scalar>
Matrix<Scalar> compute_similarity(const Matrix<Scalar>& patches, const Vector<Scalar>& kappa,
                                  const Matrix<Scalar>& window);

/// Sigma + nu (Sigma_hat - Sigma), i.e. (1 - nu) Sigma + nu Sigma_hat.
template <typename Scalar>
Matrix<Scalar> online_average(const Matrix<Scalar>& sigma, const Matrix<Scalar>& sigma_hat, Scalar nu);

template <typename Scalar>
Scalar logistic(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// Similarity refresh schedule: refresh at k = 0 and every `period`
/// iterations after that; period 0 means the initial similarities are kept.
struct Schedule {
  int period = 6;

  bool refresh(int k) const { return k == 0 || (period > 0 && k % period == 0); }
  /// Number of refresh events in K iterations (including k = 0).
  int refreshes(int iterations) const;
  std::vector<int> steps(int iterations) const;
};

/// Parses an update frequency ("1/6", "0.125", "0", "1") into a period
/// ceil(1 / f). Rejects f < 0 and f > 1.
int parse_update_period(const std::string& text);
std::string format_update_period(int period);

/// Running similarity state of one unrolled forward pass.
template <typename Scalar>
struct SimilarityState {
  Matrix<Scalar> window;
  Matrix<Scalar> sigma;
  Schedule schedule;
  int refresh_count = 0;
};

// Tape versions.
template <typename Scalar>
Var<Scalar> compute_similarity(const Var<Scalar>& patches, const Var<Scalar>& kappa, const Matrix<Scalar>& window);
/// Uses nu = logistic(nu_raw[index]).
template <typename Scalar>
Var<Scalar> online_average(const Var<Scalar>& sigma, const Var<Scalar>& sigma_hat, const Var<Scalar>& nu_raw,
                           Index index);

}  // namespace gsc
