#pragma once

#include "gsc/train.hpp"

#include <string>
#include <vector>

namespace gsc {

struct CheckResult {
  std::string name;
  bool pass = false;
  double error = 0;
  double tolerance = 0;
  std::string detail;
};

/// Closed-form prox operators against the numerical oracle on random
/// instances, plus the subgradient optimality condition for CSR.
std::vector<CheckResult> verify_prox(std::uint64_t seed, int trials = 10000);
/// Variant reductions that must hold bit for bit.
std::vector<CheckResult> verify_reduction(std::uint64_t seed);
/// Finite differences against tape gradients for every variant and the
/// masked demosaicking path.
std::vector<CheckResult> verify_grad(std::uint64_t seed);

/// How far u is from satisfying
/// 0 in u - z + lambda d|u| + lambda gamma d|u - beta|.
double csr_optimality_residual(double z, double u, double lambda, double gamma, double beta);

/// Row of the Group-Lasso prox by golden-section search along the row
/// direction, and the norm of the optimality residual of a candidate row.
Vector<double> group_lasso_oracle(const Vector<double>& u, double lambda);
double group_lasso_residual(const Vector<double>& u, const Vector<double>& z, double lambda);

/// Random model with unit-norm dictionary atoms scaled by 1 / ||D||.
ModelParams<double> random_model(Variant variant, int side, int channels, Index p, int unroll, int refreshes,
                                 Rng& rng, double lambda_level = 0.05);
Image<double> random_image(int h, int w, int c, Rng& rng);
/// Smooth image with a few edges, in [0, 1].
Image<double> synthetic_image(int h, int w, int c, Rng& rng);

}  // namespace gsc
