#include "gsc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace gsc {

double csr_optimality_residual(double z, double u, double lambda, double gamma, double beta) {
  // Points within rounding of a kink count as on it.
  const double slack = 8 * std::numeric_limits<double>::epsilon() * (std::abs(z) + std::abs(beta) + lambda * (1 + gamma));
  auto range = [slack](double v) {
    return v > slack ? std::pair{1.0, 1.0} : v < -slack ? std::pair{-1.0, -1.0} : std::pair{-1.0, 1.0};
  };
  const auto [a_lo, a_hi] = range(u);
  const auto [b_lo, b_hi] = range(u - beta);
  const double lo = lambda * a_lo + lambda * gamma * b_lo;
  const double hi = lambda * a_hi + lambda * gamma * b_hi;
  const double target = z - u;
  if (target < lo) return lo - target;
  if (target > hi) return target - hi;
  return 0.0;
}

Vector<double> group_lasso_oracle(const Vector<double>& u, double lambda) {
  const double n = u.norm();
  if (n == 0) return Vector<double>::Zero(u.size());
  const Vector<double> dir = u / n;
  auto f = [&](double t) { return 0.5 * (t * dir - u).squaredNorm() + lambda * std::abs(t); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = -1.0, hi = n + 1.0;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 300 && hi - lo > 1e-14 * (1.0 + n); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = f(x2);
    }
  }
  double t = 0.5 * (lo + hi);
  if (f(0.0) <= f(t)) t = 0.0;
  return t * dir;
}

double group_lasso_residual(const Vector<double>& u, const Vector<double>& z, double lambda) {
  const double nz = z.norm();
  if (nz == 0) return std::max(u.norm() - lambda, 0.0);
  return (z - u + lambda * z / nz).norm();
}

ModelParams<double> random_model(Variant variant, int side, int channels, Index p, int unroll, int refreshes,
                                 Rng& rng, double lambda_level) {
  ModelParams<double> mp;
  mp.variant = variant;
  mp.patch_side = side;
  mp.channels = channels;
  const Index m = Index(channels) * side * side;
  Matrix<double> d(m, p);
  for (Index j = 0; j < p; ++j) {
    d.col(j) = gaussian<double>(rng, m, 1.0);
    d.col(j) /= d.col(j).norm();
  }
  d /= spectral_norm<double>(d);
  auto perturbed = [&] {
    Matrix<double> x = d;
    for (Index i = 0; i < x.size(); ++i) x.data()[i] += 0.02 * rng.normal();
    return x;
  };
  mp.D = d;
  mp.C = perturbed();
  mp.W = perturbed();
  mp.lambda.resize(p, unroll);
  for (Index i = 0; i < mp.lambda.size(); ++i) mp.lambda.data()[i] = lambda_level * (0.5 + rng.uniform());
  mp.kappa.resize(m);
  for (Index i = 0; i < m; ++i) mp.kappa[i] = 0.5 + rng.uniform();
  mp.nu_raw.resize(refreshes);
  for (Index i = 0; i < refreshes; ++i) mp.nu_raw[i] = 0.5 * rng.normal();
  mp.csr_gamma = 0.7;
  return mp;
}

Image<double> random_image(int h, int w, int c, Rng& rng) {
  Image<double> img(h, w, c);
  for (Index i = 0; i < img.size(); ++i) img.data[i] = rng.uniform();
  return img;
}

Image<double> synthetic_image(int h, int w, int c, Rng& rng) {
  Image<double> img(h, w, c);
  const double fx = 0.05 + 0.2 * rng.uniform(), fy = 0.05 + 0.2 * rng.uniform();
  const double phase = 6.283 * rng.uniform();
  const int r0 = int(rng.below(std::uint64_t(h))), c0 = int(rng.below(std::uint64_t(w)));
  const double radius = 0.2 * std::min(h, w) + 0.3 * std::min(h, w) * rng.uniform();
  std::vector<double> tint(static_cast<std::size_t>(c));
  for (auto& t : tint) t = 0.6 + 0.4 * rng.uniform();
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) {
      double v = 0.25 + 0.3 * double(r) / h + 0.15 * std::sin(fx * col + fy * r + phase);
      const double dr = r - r0, dc = col - c0;
      if (dr * dr + dc * dc < radius * radius) v += 0.3;
      if (col > w / 2 && r < h / 3) v -= 0.15;
      for (int ch = 0; ch < c; ++ch) img.at(r, col, ch) = std::clamp(v * tint[std::size_t(ch)], 0.0, 1.0);
    }
  return img;
}

namespace {

CheckResult below(const std::string& name, double error, double tolerance) {
  return CheckResult{name, error < tolerance, error, tolerance, ""};
}

CheckResult exact(const std::string& name, double error) { return CheckResult{name, error == 0, error, 0, ""}; }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

}  // namespace

std::vector<CheckResult> verify_prox(std::uint64_t seed, int trials) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  constexpr Index n = 8;

  double soft_err = 0;
  for (int t = 0; t < trials; ++t) {
    Vector<double> z(n), eta(n);
    for (Index j = 0; j < n; ++j) {
      z[j] = uniform(rng, -3, 3);
      eta[j] = rng.below(10) == 0 ? 0.0 : uniform(rng, 0, 1.5);
    }
    const Vector<double> got = soft_threshold<double>(Matrix<double>(z), eta).col(0);
    soft_err = std::max(soft_err, (got - prox_oracle(ProxObjective::l1(eta), z)).cwiseAbs().maxCoeff());
  }
  out.push_back(below("soft_threshold matches the numerical prox", soft_err, 1e-6));

  double group_err = 0, group_kkt = 0;
  for (int t = 0; t < trials; ++t) {
    Matrix<double> u(4, 3);
    const double scale = uniform(rng, 0.1, 3);
    for (Index i = 0; i < u.size(); ++i) u.data()[i] = scale * rng.normal();
    const double lambda = uniform(rng, 0, 3);
    const Matrix<double> z = group_lasso_prox<double>(u, lambda);
    for (Index r = 0; r < u.rows(); ++r) {
      const Vector<double> row = u.row(r).transpose();
      const Vector<double> got = z.row(r).transpose();
      group_err = std::max(group_err, (got - group_lasso_oracle(row, lambda)).cwiseAbs().maxCoeff());
      group_kkt = std::max(group_kkt, group_lasso_residual(row, got, lambda));
    }
  }
  out.push_back(below("group_lasso_prox matches the numerical prox", group_err, 1e-6));
  out.push_back(below("group_lasso_prox satisfies the optimality condition", group_kkt, 1e-9));

  double csr_err = 0, csr_kkt = 0;
  for (int t = 0; t < trials; ++t) {
    const double lambda = uniform(rng, 0, 1), gamma = rng.below(10) == 0 ? 0.0 : uniform(rng, 0, 2);
    Vector<double> z(n), beta(n);
    for (Index j = 0; j < n; ++j) {
      beta[j] = rng.below(10) == 0 ? 0.0 : uniform(rng, -2, 2);
      z[j] = uniform(rng, -3, 3);
      if (rng.below(10) == 0) {
        // Land exactly on a breakpoint of the closed form.
        const double s = beta[j] > 0 ? 1.0 : -1.0;
        const double bps[4] = {lambda - lambda * gamma, -lambda - lambda * gamma, beta[j] + s * (lambda - lambda * gamma),
                               beta[j] + s * (lambda + lambda * gamma)};
        z[j] = bps[rng.below(4)];
      }
    }
    const Vector<double> got = csr_prox<double>(z, lambda, gamma, beta);
    const Vector<double> want = prox_oracle(ProxObjective::csr(Vector<double>::Constant(n, lambda), gamma, beta), z);
    csr_err = std::max(csr_err, (got - want).cwiseAbs().maxCoeff());
    for (Index j = 0; j < n; ++j)
      csr_kkt = std::max(csr_kkt, csr_optimality_residual(z[j], got[j], lambda, gamma, beta[j]));
  }
  out.push_back(below("csr_prox matches the numerical prox", csr_err, 1e-6));
  out.push_back(below("csr_prox satisfies the optimality condition", csr_kkt, 1e-9));
  return out;
}

namespace {

double max_abs_diff(const Image<double>& a, const Image<double>& b) {
  return (a.data - b.data).cwiseAbs().maxCoeff();
}

}  // namespace

std::vector<CheckResult> verify_reduction(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  struct Case {
    const char* name;
    int h, w, c, side;
    Index p;
    bool mosaicked;
  };
  const Case cases[] = {{"gray", 14, 12, 1, 3, 12, false},
                        {"color", 11, 13, 3, 3, 20, false},
                        {"demosaick", 12, 12, 3, 3, 16, true}};
  const int unroll = 5;
  for (const Case& cs : cases) {
    ModelParams<double> sc = random_model(Variant::kSC, cs.side, cs.c, cs.p, unroll, 0, rng, 0.05);
    const Image<double> clean = synthetic_image(cs.h, cs.w, cs.c, rng);
    Observation<double> obs;
    if (cs.mosaicked) {
      const Mosaic<double> mos = mosaic(clean, BayerPattern::kRGGB);
      obs = demosaick_observation(mos.observed, mos.mask, DemosaickInit::kBilinear);
    } else {
      obs.y = add_awgn(clean, 25, rng);
    }
    InferenceConfig cfg;
    cfg.update_period = 2;
    const int refreshes = refresh_count(Variant::kGroupSC, unroll, cfg.update_period);
    const Image<double> x_sc = infer(sc, obs, cfg);

    ModelParams<double> group = sc;
    group.variant = Variant::kGroupSC;
    group.nu_raw = gaussian<double>(rng, refreshes, 1.0);
    InferenceConfig identity_window = cfg;
    identity_window.window = 1;
    out.push_back(exact(std::string("GroupSC with identity similarity equals SC (") + cs.name + ")",
                        max_abs_diff(x_sc, infer(group, obs, identity_window))));

    const Matrix<double> eye =
        Matrix<double>::Identity(PatchGeometry(cs.h, cs.w, cs.c, cs.side).count(), PatchGeometry(cs.h, cs.w, cs.c, cs.side).count());
    const Var<double> fixed = unrolled_forward<double>(constants(group), Variant::kGroupSC, 0.0, cs.side, obs, cfg, &eye);
    Image<double> x_fixed = x_sc;
    x_fixed.data = fixed.value().col(0);
    out.push_back(exact(std::string("GroupSC with fixed identity similarity equals SC (") + cs.name + ")",
                        max_abs_diff(x_sc, x_fixed)));

    ModelParams<double> csr = group;
    csr.variant = Variant::kCSR;
    csr.csr_gamma = 0;
    InferenceConfig wide = cfg;
    wide.window = 5;
    out.push_back(exact(std::string("CSR with gamma 0 equals SC (") + cs.name + ")",
                        max_abs_diff(x_sc, infer(csr, obs, wide))));
  }

  double nested = 0;
  for (int t = 0; t < 100000; ++t) {
    const double z = uniform(rng, -3, 3), lambda = uniform(rng, 0, 1), gamma = uniform(rng, 0, 2);
    nested = std::max(nested, std::abs(csr_prox(z, lambda, gamma, 0.0) - soft_threshold(z, lambda * (1 + gamma))));
  }
  out.push_back(exact("csr_prox with beta 0 equals soft-thresholding at lambda (1 + gamma)", nested));
  return out;
}

std::vector<CheckResult> verify_grad(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  struct Case {
    const char* name;
    Variant variant;
    int size, channels;
    Index p;
    bool mosaicked;
  };
  const Case cases[] = {{"sc", Variant::kSC, 10, 1, 10, false},
                        {"groupsc", Variant::kGroupSC, 10, 1, 10, false},
                        {"csr", Variant::kCSR, 10, 1, 10, false},
                        {"demosaick", Variant::kGroupSC, 8, 3, 12, true}};
  const int unroll = 3;
  for (const Case& cs : cases) {
    InferenceConfig cfg;
    cfg.window = 5;
    cfg.update_period = 1;
    const int refreshes = refresh_count(cs.variant, unroll, cfg.update_period);
    const ModelParams<double> mp = random_model(cs.variant, 3, cs.channels, cs.p, unroll, refreshes, rng, 0.03);
    Sample<double> sample;
    sample.clean = synthetic_image(cs.size, cs.size, cs.channels, rng);
    if (cs.mosaicked) {
      const Mosaic<double> mos = mosaic(sample.clean, BayerPattern::kRGGB);
      sample.obs = demosaick_observation(mos.observed, mos.mask, DemosaickInit::kBilinear);
    } else {
      sample.obs.y = add_awgn(sample.clean, 25, rng);
    }
    const GradCheckReport report = grad_check(mp, sample, cfg);
    for (const auto& g : report.groups) {
      CheckResult r = below(std::string(cs.name) + " gradient of " + g.name, g.max_rel_error, report.tolerance);
      std::ostringstream detail;
      detail << g.entries << " entries, max |grad| " << g.max_abs_gradient;
      r.detail = detail.str();
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace gsc
