#include "gsc/prox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace gsc {

template <typename Scalar>
Matrix<Scalar> soft_threshold(const Matrix<Scalar>& x, const Vector<Scalar>& eta) {
  require_shape(eta.size() == x.rows(), "soft_threshold: threshold size mismatch");
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.cols(); ++i)
    for (Index j = 0; j < x.rows(); ++j) out(j, i) = soft_threshold(x(j, i), eta[j]);
  return out;
}

template <typename Scalar>
Matrix<Scalar> group_lasso_prox(const Matrix<Scalar>& u, Scalar lambda) {
  if (lambda < Scalar(0)) throw std::invalid_argument("group_lasso_prox: negative lambda");
  Matrix<Scalar> z(u.rows(), u.cols());
  for (Index j = 0; j < u.rows(); ++j) {
    const Scalar norm = u.row(j).norm();
    const Scalar scale = norm > lambda ? Scalar(1) - lambda / norm : Scalar(0);
    z.row(j) = scale * u.row(j);
  }
  return z;
}

namespace {

template <typename Scalar>
Vector<Scalar> column_sums(const Matrix<Scalar>& sigma) {
  Vector<Scalar> s(sigma.cols());
  for (Index i = 0; i < sigma.cols(); ++i) {
    Scalar acc = 0;
    for (Index l = 0; l < sigma.rows(); ++l) acc += sigma(l, i);
    s[i] = acc;
  }
  return s;
}

template <typename Scalar>
Vector<Scalar> row_sums(const Matrix<Scalar>& sigma) {
  Vector<Scalar> s = Vector<Scalar>::Zero(sigma.rows());
  for (Index l = 0; l < sigma.cols(); ++l)
    for (Index i = 0; i < sigma.rows(); ++i) s[i] += sigma(i, l);
  return s;
}

template <typename Scalar>
void check_similarity(const Matrix<Scalar>& sigma, Index n) {
  require_shape(sigma.rows() == n && sigma.cols() == n, "similarity matrix must be N x N");
  if ((sigma.array() < Scalar(0)).any()) throw std::invalid_argument("similarity matrix has negative entries");
}

template <typename Scalar>
struct GroupShrinkForward {
  Matrix<Scalar> out;
  Matrix<Scalar> norms;  // ||(B diag(Sigma_i)^1/2)^j||, p x N
  Vector<Scalar> root_mass;  // sqrt(||Sigma_i||_1)
};

template <typename Scalar>
GroupShrinkForward<Scalar> group_shrink_forward(const Matrix<Scalar>& b, const Matrix<Scalar>& sigma,
                                                const Vector<Scalar>& lambda) {
  require_shape(lambda.size() == b.rows(), "relaxed_group_shrink: threshold size mismatch");
  check_similarity(sigma, b.cols());
  GroupShrinkForward<Scalar> f;
  const Matrix<Scalar> squares = b.cwiseProduct(b);
  f.norms = matmul<Scalar>(squares, sigma).cwiseSqrt();
  f.root_mass = column_sums(sigma).cwiseSqrt();
  f.out.resize(b.rows(), b.cols());
  for (Index i = 0; i < b.cols(); ++i)
    for (Index j = 0; j < b.rows(); ++j) {
      const Scalar n = f.norms(j, i);
      const Scalar bji = b(j, i);
      if (n == Scalar(0) || bji == Scalar(0)) {
        f.out(j, i) = Scalar(0);
        continue;
      }
      // max(1 - t/n, 0) * b written as a soft threshold of b at t |b| / n, so
      // that Sigma = I reproduces plain soft-thresholding bit for bit.
      const Scalar lam = lambda[j] > Scalar(0) ? lambda[j] : Scalar(0);
      const Scalar tau = lam * (f.root_mass[i] * (std::abs(bji) / n));
      f.out(j, i) = soft_threshold(bji, tau);
    }
  return f;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> relaxed_group_shrink(const Matrix<Scalar>& b, const Matrix<Scalar>& sigma,
                                    const Vector<Scalar>& lambda) {
  return group_shrink_forward(b, sigma, lambda).out;
}

namespace {

// Value and partial derivatives of the scalar CSR prox.
template <typename Scalar>
struct CsrPoint {
  Scalar value = 0;
  Scalar dz = 0;
  Scalar dlambda = 0;
  Scalar dbeta = 0;
};

template <typename Scalar>
CsrPoint<Scalar> csr_point(Scalar z, Scalar lambda, Scalar gamma, Scalar beta) {
  CsrPoint<Scalar> p;
  const bool lambda_active = lambda > Scalar(0);
  const Scalar lam = lambda_active ? lambda : Scalar(0);
  const Scalar g = lam * gamma;
  auto soft = [&](Scalar t, Scalar dt_dlambda) {
    p.value = soft_threshold(z, t);
    if (p.value != Scalar(0)) {
      p.dz = 1;
      p.dlambda = lambda_active ? (z > 0 ? -dt_dlambda : dt_dlambda) : Scalar(0);
    }
    return p;
  };
  if (g == Scalar(0)) return soft(lam, Scalar(1));
  if (beta == Scalar(0)) return soft(lam * (Scalar(1) + gamma), Scalar(1) + gamma);
  if (beta < Scalar(0)) {
    CsrPoint<Scalar> m = csr_point(-z, lambda, gamma, -beta);
    m.value = -m.value;
    m.dlambda = -m.dlambda;
    return m;
  }
  const Scalar a = lam;
  if (z < -a - g) {
    p.value = z + a + g;
    p.dz = 1;
    p.dlambda = Scalar(1) + gamma;
  } else if (z <= a - g) {
    p.value = 0;
  } else if (z < beta + a - g) {
    p.value = z - a + g;
    p.dz = 1;
    p.dlambda = gamma - Scalar(1);
  } else if (z <= beta + a + g) {
    p.value = beta;
    p.dbeta = 1;
  } else {
    p.value = z - a - g;
    p.dz = 1;
    p.dlambda = -(Scalar(1) + gamma);
  }
  if (!lambda_active) p.dlambda = 0;
  return p;
}

}  // namespace

template <typename Scalar>
Scalar csr_prox(Scalar z, Scalar lambda, Scalar gamma, Scalar beta) {
  if (gamma < Scalar(0)) throw std::invalid_argument("csr_prox: negative gamma");
  return csr_point(z, lambda, gamma, beta).value;
}

template <typename Scalar>
Vector<Scalar> csr_prox(const Vector<Scalar>& u, Scalar lambda, Scalar gamma, const Vector<Scalar>& beta) {
  require_shape(u.size() == beta.size(), "csr_prox: beta size mismatch");
  Vector<Scalar> out(u.size());
  for (Index j = 0; j < u.size(); ++j) out[j] = csr_prox(u[j], lambda, gamma, beta[j]);
  return out;
}

template <typename Scalar>
Matrix<Scalar> csr_prox(const Matrix<Scalar>& u, const Vector<Scalar>& lambda, Scalar gamma,
                        const Matrix<Scalar>& beta) {
  require_shape(u.rows() == beta.rows() && u.cols() == beta.cols() && lambda.size() == u.rows(),
                "csr_prox: shape mismatch");
  Matrix<Scalar> out(u.rows(), u.cols());
  for (Index i = 0; i < u.cols(); ++i)
    for (Index j = 0; j < u.rows(); ++j) out(j, i) = csr_prox(u(j, i), lambda[j], gamma, beta(j, i));
  return out;
}

template <typename Scalar>
Matrix<Scalar> code_average(const Matrix<Scalar>& codes, const Matrix<Scalar>& sigma) {
  check_similarity(sigma, codes.cols());
  const Vector<Scalar> mass = row_sums(sigma);
  for (Index i = 0; i < mass.size(); ++i)
    if (mass[i] == Scalar(0)) throw std::invalid_argument("code_average: isolated patch");
  const Matrix<Scalar> weights = sigma.array().colwise() / mass.array();
  return matmul_nt<Scalar>(codes, weights);
}

ProxObjective ProxObjective::l1(const Vector<double>& eta) {
  ProxObjective obj;
  obj.terms.push_back({eta.cwiseMax(0.0), Vector<double>::Zero(eta.size())});
  return obj;
}

ProxObjective ProxObjective::csr(const Vector<double>& lambda, double gamma, const Vector<double>& beta) {
  ProxObjective obj;
  const Vector<double> lam = lambda.cwiseMax(0.0);
  obj.terms.push_back({lam, Vector<double>::Zero(beta.size())});
  obj.terms.push_back({lam * gamma, beta});
  return obj;
}

double prox_objective_value(const ProxObjective& obj, Index j, double z, double u) {
  double v = 0.5 * (u - z) * (u - z);
  for (const auto& t : obj.terms) v += t.weight[j] * std::abs(u - t.center[j]);
  return v;
}

Vector<double> prox_oracle(const ProxObjective& obj, const Vector<double>& z) {
  if (!obj.group_weights.empty())
    throw std::invalid_argument("prox_oracle: objective is not separable");
  for (const auto& t : obj.terms)
    require_shape(t.weight.size() == z.size() && t.center.size() == z.size(), "prox_oracle: term size mismatch");
  Vector<double> out(z.size());
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (Index j = 0; j < z.size(); ++j) {
    auto f = [&](double u) { return prox_objective_value(obj, j, z[j], u); };
    double total_weight = 0;
    for (const auto& t : obj.terms) total_weight += t.weight[j];
    // The minimizer satisfies |u - z| <= total weight.
    double lo = z[j] - total_weight - 1.0;
    double hi = z[j] + total_weight + 1.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
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
    const double found = 0.5 * (lo + hi);
    // Polish: a breakpoint or the stationary point of a neighbouring smooth
    // piece replaces the search result when it satisfies the optimality
    // condition 0 in u - z + sum_t w_t d|u - c_t|.
    auto residual = [&](double u) {
      double g_lo = 0, g_hi = 0;
      for (const auto& t : obj.terms) {
        const double d = u - t.center[j], w = t.weight[j];
        g_lo += d > 0 ? w : -w;
        g_hi += d < 0 ? -w : w;
      }
      const double g = z[j] - u;
      return g < g_lo ? g_lo - g : g > g_hi ? g - g_hi : 0.0;
    };
    auto slope_at = [&](double u) {
      double slope = 0;
      for (const auto& t : obj.terms) {
        const double d = u - t.center[j];
        if (d > 0) slope += t.weight[j];
        if (d < 0) slope -= t.weight[j];
      }
      return slope;
    };
    const double window = 1e-6 * (1.0 + std::abs(found));
    std::vector<double> candidates;
    for (const auto& t : obj.terms)
      if (t.weight[j] > 0) candidates.push_back(t.center[j]);
    for (double u : {found - window, found, found + window}) candidates.push_back(z[j] - slope_at(u));
    const double accept = 1e-12 * (1.0 + std::abs(z[j]) + total_weight);
    double best = found;
    double best_distance = window;
    for (double c : candidates) {
      const double d = std::abs(c - found);
      if (d <= best_distance && residual(c) <= accept) {
        best = c;
        best_distance = d;
      }
    }
    out[j] = best;
  }
  return out;
}

// Tape versions -------------------------------------------------------------

template <typename Scalar>
Var<Scalar> soft_threshold(const Var<Scalar>& b, const Var<Scalar>& lambda) {
  require_shape(lambda.cols() == 1 && lambda.rows() == b.rows(), "soft_threshold: threshold size mismatch");
  auto bn = b.node();
  auto ln = lambda.node();
  return Tape<Scalar>::record(
      OpKind::kSoftThreshold, soft_threshold<Scalar>(b.value(), lambda.value().col(0)), {&b, &lambda},
      [bn, ln](const Matrix<Scalar>& g) {
        const Matrix<Scalar>& x = bn->value;
        const Matrix<Scalar>& lam = ln->value;
        Matrix<Scalar> gb = Matrix<Scalar>::Zero(x.rows(), x.cols());
        Matrix<Scalar> gl = Matrix<Scalar>::Zero(lam.rows(), 1);
        for (Index i = 0; i < x.cols(); ++i)
          for (Index j = 0; j < x.rows(); ++j) {
            const Scalar t = lam(j, 0) > Scalar(0) ? lam(j, 0) : Scalar(0);
            if (!(std::abs(x(j, i)) > t)) continue;
            gb(j, i) = g(j, i);
            if (lam(j, 0) > Scalar(0)) gl(j, 0) -= x(j, i) > Scalar(0) ? g(j, i) : -g(j, i);
          }
        bn->accumulate(gb);
        ln->accumulate(gl);
      });
}

template <typename Scalar>
Var<Scalar> relaxed_group_shrink(const Var<Scalar>& b, const Var<Scalar>& sigma, const Var<Scalar>& lambda) {
  require_shape(lambda.cols() == 1, "relaxed_group_shrink: thresholds must be a column");
  auto fwd = std::make_shared<GroupShrinkForward<Scalar>>(
      group_shrink_forward<Scalar>(b.value(), sigma.value(), lambda.value().col(0)));
  auto bn = b.node();
  auto sn = sigma.node();
  auto ln = lambda.node();
  Matrix<Scalar> out = fwd->out;
  return Tape<Scalar>::record(
      OpKind::kGroupShrink, std::move(out), {&b, &sigma, &lambda},
      [bn, sn, ln, fwd](const Matrix<Scalar>& g) {
        const Matrix<Scalar>& B = bn->value;
        const Matrix<Scalar>& S = sn->value;
        const Matrix<Scalar>& L = ln->value;
        const Index p = B.rows(), n = B.cols();
        Matrix<Scalar> gb = Matrix<Scalar>::Zero(p, n);
        Matrix<Scalar> dq = Matrix<Scalar>::Zero(p, n);
        Vector<Scalar> dr = Vector<Scalar>::Zero(n);
        Matrix<Scalar> gl = Matrix<Scalar>::Zero(p, 1);
        bool any_active = false;
        for (Index i = 0; i < n; ++i) {
          const Scalar r = fwd->root_mass[i];
          for (Index j = 0; j < p; ++j) {
            if (fwd->out(j, i) == Scalar(0)) continue;
            const Scalar lam = L(j, 0) > Scalar(0) ? L(j, 0) : Scalar(0);
            const Scalar nrm = fwd->norms(j, i);
            const Scalar gji = g(j, i);
            const Scalar bji = B(j, i);
            gb(j, i) = gji * (Scalar(1) - lam * r / nrm);
            if (lam == Scalar(0)) continue;
            any_active = true;
            gl(j, 0) -= gji * r * bji / nrm;
            dr[i] -= gji * lam * bji / nrm;
            const Scalar dn = gji * lam * r * bji / (nrm * nrm);
            dq(j, i) = dn / (Scalar(2) * nrm);
          }
        }
        if (any_active) {
          const Matrix<Scalar> squares = B.cwiseProduct(B);
          if (bn->requires_grad) gb += Scalar(2) * B.cwiseProduct(matmul_nt<Scalar>(dq, S));
          if (sn->requires_grad) {
            Matrix<Scalar> gs = matmul_tn<Scalar>(squares, dq);
            for (Index i = 0; i < n; ++i) {
              const Scalar r = fwd->root_mass[i];
              if (r > Scalar(0)) gs.col(i).array() += dr[i] / (Scalar(2) * r);
            }
            sn->accumulate(gs);
          }
        }
        bn->accumulate(gb);
        ln->accumulate(gl);
      });
}

template <typename Scalar>
Var<Scalar> csr_prox(const Var<Scalar>& b, const Var<Scalar>& beta, const Var<Scalar>& lambda, Scalar gamma) {
  require_shape(lambda.cols() == 1 && lambda.rows() == b.rows(), "csr_prox: threshold size mismatch");
  require_shape(beta.rows() == b.rows() && beta.cols() == b.cols(), "csr_prox: beta shape mismatch");
  if (gamma < Scalar(0)) throw std::invalid_argument("csr_prox: negative gamma");
  auto bn = b.node();
  auto en = beta.node();
  auto ln = lambda.node();
  return Tape<Scalar>::record(
      OpKind::kCsrProx, csr_prox<Scalar>(b.value(), lambda.value().col(0), gamma, beta.value()),
      {&b, &beta, &lambda}, [bn, en, ln, gamma](const Matrix<Scalar>& g) {
        const Matrix<Scalar>& z = bn->value;
        const Matrix<Scalar>& be = en->value;
        const Matrix<Scalar>& lam = ln->value;
        Matrix<Scalar> gz = Matrix<Scalar>::Zero(z.rows(), z.cols());
        Matrix<Scalar> gbeta = Matrix<Scalar>::Zero(z.rows(), z.cols());
        Matrix<Scalar> gl = Matrix<Scalar>::Zero(lam.rows(), 1);
        for (Index i = 0; i < z.cols(); ++i)
          for (Index j = 0; j < z.rows(); ++j) {
            const CsrPoint<Scalar> pt = csr_point(z(j, i), lam(j, 0), gamma, be(j, i));
            gz(j, i) = g(j, i) * pt.dz;
            gbeta(j, i) = g(j, i) * pt.dbeta;
            gl(j, 0) += g(j, i) * pt.dlambda;
          }
        bn->accumulate(gz);
        en->accumulate(gbeta);
        ln->accumulate(gl);
      });
}

template <typename Scalar>
Var<Scalar> code_average(const Var<Scalar>& codes, const Var<Scalar>& sigma) {
  check_similarity(sigma.value(), codes.cols());
  auto an = codes.node();
  auto sn = sigma.node();
  return Tape<Scalar>::record(
      OpKind::kCodeAverage, code_average<Scalar>(codes.value(), sigma.value()), {&codes, &sigma},
      [an, sn](const Matrix<Scalar>& g) {
        const Matrix<Scalar>& S = sn->value;
        const Vector<Scalar> mass = row_sums(S);
        const Matrix<Scalar> weights = S.array().colwise() / mass.array();
        // beta = A W^T  =>  dA = G W,  dW = G^T A
        if (an->requires_grad) an->accumulate(matmul<Scalar>(g, weights));
        if (sn->requires_grad) {
          const Matrix<Scalar> dw = matmul_tn<Scalar>(g, an->value);
          const Vector<Scalar> inner = dw.cwiseProduct(S).rowwise().sum();
          const Vector<Scalar> shift = inner.array() / (mass.array() * mass.array());
          Matrix<Scalar> gs = dw.array().colwise() / mass.array();
          gs.colwise() -= shift;
          sn->accumulate(gs);
        }
      });
}

#define GSC_INSTANTIATE(S)                                                                        \
  template Matrix<S> soft_threshold<S>(const Matrix<S>&, const Vector<S>&);                      \
  template Matrix<S> group_lasso_prox<S>(const Matrix<S>&, S);                                   \
  template Matrix<S> relaxed_group_shrink<S>(const Matrix<S>&, const Matrix<S>&, const Vector<S>&); \
  template S csr_prox<S>(S, S, S, S);                                                            \
  template Vector<S> csr_prox<S>(const Vector<S>&, S, S, const Vector<S>&);                      \
  template Matrix<S> csr_prox<S>(const Matrix<S>&, const Vector<S>&, S, const Matrix<S>&);       \
  template Matrix<S> code_average<S>(const Matrix<S>&, const Matrix<S>&);                        \
  template Var<S> soft_threshold<S>(const Var<S>&, const Var<S>&);                               \
  template Var<S> relaxed_group_shrink<S>(const Var<S>&, const Var<S>&, const Var<S>&);          \
  template Var<S> csr_prox<S>(const Var<S>&, const Var<S>&, const Var<S>&, S);                   \
  template Var<S> code_average<S>(const Var<S>&, const Var<S>&);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
