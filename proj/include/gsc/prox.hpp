#pragma once

#include "gsc/tape.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace gsc {

/// sign(x) * max(|x| - eta, 0), with eta clamped to be nonnegative. NaN
/// inputs give NaN.
template <typename Scalar>
inline Scalar soft_threshold(Scalar x, Scalar eta) {
  const Scalar t = eta > Scalar(0) ? eta : Scalar(0);
  const Scalar mag = std::abs(x) - t;
  if (std::isnan(mag) || std::isnan(eta)) return std::numeric_limits<Scalar>::quiet_NaN();
  if (!(mag > Scalar(0))) return Scalar(0);
  return x > Scalar(0) ? mag : -mag;
}

/// Entrywise soft-thresholding; row j of x uses threshold eta[j].
template <typename Scalar>
Matrix<Scalar> soft_threshold(const Matrix<Scalar>& x, const Vector<Scalar>& eta);

/// Row-wise Group-Lasso prox: Z^j = max(1 - lambda / ||U^j||, 0) U^j.
/// Rows with zero norm map to zero rows.
template <typename Scalar>
Matrix<Scalar> group_lasso_prox(const Matrix<Scalar>& u, Scalar lambda);

/// Similarity-weighted group shrinkage of codes B (p x N):
///   A_ji = max(1 - L_j sqrt(|Sigma_i|_1) / ||(B diag(Sigma_i)^1/2)^j||, 0) B_ji
/// where Sigma_i is column i of the N x N similarity matrix and L = max(Lambda, 0).
template <typename Scalar>
Matrix<Scalar> relaxed_group_shrink(const Matrix<Scalar>& b, const Matrix<Scalar>& sigma,
                                    const Vector<Scalar>& lambda);

struct CsrParams {
  double gamma = 0;
};

/// Prox of lambda * (|u| + gamma |u - beta|) for one coordinate.
template <typename Scalar>
Scalar csr_prox(Scalar z, Scalar lambda, Scalar gamma, Scalar beta);

/// Coordinatewise CSR prox with a shared lambda.
template <typename Scalar>
Vector<Scalar> csr_prox(const Vector<Scalar>& u, Scalar lambda, Scalar gamma, const Vector<Scalar>& beta);

/// CSR prox on a code matrix; row j uses lambda[j], beta is p x N.
template <typename Scalar>
Matrix<Scalar> csr_prox(const Matrix<Scalar>& u, const Vector<Scalar>& lambda, Scalar gamma,
                        const Matrix<Scalar>& beta);

/// Similarity-weighted code average: beta_i = sum_j Sigma_ij / (sum_l Sigma_il) alpha_j.
template <typename Scalar>
Matrix<Scalar> code_average(const Matrix<Scalar>& codes, const Matrix<Scalar>& sigma);

/// Separable objective 1/2 (u_j - z_j)^2 + sum_t weight_t[j] |u_j - center_t[j]|.
struct ProxObjective {
  struct AbsTerm {
    Vector<double> weight;
    Vector<double> center;
  };
  std::vector<AbsTerm> terms;
  /// Weights of l2-norm (group) terms. Not separable, so the oracle rejects them.
  std::vector<double> group_weights;

  static ProxObjective l1(const Vector<double>& eta);
  static ProxObjective csr(const Vector<double>& lambda, double gamma, const Vector<double>& beta);
};

double prox_objective_value(const ProxObjective& obj, Index j, double z, double u);

/// Independent numerical prox: per coordinate, golden-section search over a
/// bracket known to contain the minimizer, then candidates at every
/// breakpoint and at the stationary point of the smooth piece the search
/// landed in; the best objective value wins.
Vector<double> prox_oracle(const ProxObjective& obj, const Vector<double>& z);

// Tape versions.
template <typename Scalar>
Var<Scalar> soft_threshold(const Var<Scalar>& b, const Var<Scalar>& lambda);
template <typename Scalar>
Var<Scalar> relaxed_group_shrink(const Var<Scalar>& b, const Var<Scalar>& sigma, const Var<Scalar>& lambda);
template <typename Scalar>
Var<Scalar> csr_prox(const Var<Scalar>& b, const Var<Scalar>& beta, const Var<Scalar>& lambda, Scalar gamma);
template <typename Scalar>
Var<Scalar> code_average(const Var<Scalar>& codes, const Var<Scalar>& sigma);

}  // namespace gsc
