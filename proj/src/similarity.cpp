#include "gsc/similarity.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

namespace gsc {

template <typename Scalar>
Matrix<Scalar> window_mask(const PatchGeometry& g, int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  const int radius = window / 2;
  const Index n = g.count();
  Matrix<Scalar> mask = Matrix<Scalar>::Zero(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      if (std::abs(g.row_of(i) - g.row_of(j)) <= radius && std::abs(g.col_of(i) - g.col_of(j)) <= radius)
        mask(i, j) = 1;
  return mask;
}

namespace {

template <typename Scalar>
struct SimilarityForward {
  Matrix<Scalar> weighted;  // diag(kappa) X
  Matrix<Scalar> sigma;
  Matrix<Scalar> active;  // 1 where sigma is a differentiable function of d
};

template <typename Scalar>
SimilarityForward<Scalar> similarity_forward(const Matrix<Scalar>& x, const Vector<Scalar>& kappa,
                                             const Matrix<Scalar>& window) {
  require_shape(kappa.size() == x.rows(), "compute_similarity: kappa size mismatch");
  require_shape(window.rows() == x.cols() && window.cols() == x.cols(), "compute_similarity: window shape mismatch");
  SimilarityForward<Scalar> f;
  f.weighted = kappa.asDiagonal() * x;
  const Matrix<Scalar> gram = matmul_tn<Scalar>(f.weighted, f.weighted);
  const Index n = x.cols();
  f.sigma.resize(n, n);
  f.active = Matrix<Scalar>::Zero(n, n);
  // In-window entries are kept strictly positive so the window pattern
  // survives underflow of exp(-d).
  const Scalar floor = std::numeric_limits<Scalar>::min();
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) {
      if (i == j) {
        f.sigma(i, j) = 1;
      } else if (window(i, j) == Scalar(0)) {
        f.sigma(i, j) = 0;
      } else {
        const Scalar d = gram(i, i) + gram(j, j) - Scalar(2) * gram(i, j);
        if (!(d > Scalar(0))) {
          f.sigma(i, j) = 1;
          continue;
        }
        const Scalar e = std::exp(-d);
        if (e > floor) {
          f.sigma(i, j) = e;
          f.active(i, j) = 1;
        } else {
          f.sigma(i, j) = floor;
        }
      }
    }
  return f;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> compute_similarity(const Matrix<Scalar>& patches, const Vector<Scalar>& kappa,
                                  const Matrix<Scalar>& window) {
  return similarity_forward(patches, kappa, window).sigma;
}

template <typename Scalar>
Matrix<Scalar> online_average(const Matrix<Scalar>& sigma, const Matrix<Scalar>& sigma_hat, Scalar nu) {
  require_shape(sigma.rows() == sigma_hat.rows() && sigma.cols() == sigma_hat.cols(),
                "online_average: shape mismatch");
  for (Index j = 0; j < sigma.cols(); ++j)
    for (Index i = 0; i < sigma.rows(); ++i)
      if ((sigma(i, j) == Scalar(0)) != (sigma_hat(i, j) == Scalar(0)))
        throw std::invalid_argument("online_average: sparsity pattern mismatch");
  return sigma + nu * (sigma_hat - sigma);
}

int Schedule::refreshes(int iterations) const {
  int n = 0;
  for (int k = 0; k < iterations; ++k) n += refresh(k);
  return n;
}

std::vector<int> Schedule::steps(int iterations) const {
  std::vector<int> out;
  for (int k = 0; k < iterations; ++k)
    if (refresh(k)) out.push_back(k);
  return out;
}

int parse_update_period(const std::string& text) {
  const auto slash = text.find('/');
  std::size_t used = 0;
  try {
    if (slash != std::string::npos) {
      const long num = std::stol(text.substr(0, slash), &used);
      if (used != slash) throw std::invalid_argument(text);
      const std::string den_text = text.substr(slash + 1);
      const long den = std::stol(den_text, &used);
      if (used != den_text.size() || num < 0 || den <= 0 || num > den) throw std::invalid_argument(text);
      if (num == 0) return 0;
      return int((den + num - 1) / num);
    }
    const double f = std::stod(text, &used);
    if (used != text.size() || !(f >= 0.0) || f > 1.0) throw std::invalid_argument(text);
    if (f == 0.0) return 0;
    return int(std::ceil(1.0 / f - 1e-9));
  } catch (const std::logic_error&) {
    throw std::invalid_argument("invalid update frequency '" + text + "' (expected 0, 1, 1/n or a decimal in [0,1])");
  }
}

std::string format_update_period(int period) {
  if (period == 0) return "0";
  if (period == 1) return "1";
  return "1/" + std::to_string(period);
}

template <typename Scalar>
Var<Scalar> compute_similarity(const Var<Scalar>& patches, const Var<Scalar>& kappa, const Matrix<Scalar>& window) {
  require_shape(kappa.cols() == 1, "compute_similarity: kappa must be a column");
  auto fwd = std::make_shared<SimilarityForward<Scalar>>(
      similarity_forward<Scalar>(patches.value(), kappa.value().col(0), window));
  auto xn = patches.node();
  auto kn = kappa.node();
  Matrix<Scalar> out = fwd->sigma;
  return Tape<Scalar>::record(
      OpKind::kSimilarity, std::move(out), {&patches, &kappa}, [xn, kn, fwd](const Matrix<Scalar>& g) {
        const Matrix<Scalar>& sig = fwd->sigma;
        const Index n = sig.rows();
        // d_ij = n_i + n_j - 2 S_ij with S = Xk^T Xk and n_i = S_ii.
        Matrix<Scalar> ds = Matrix<Scalar>::Zero(n, n);
        Vector<Scalar> dn = Vector<Scalar>::Zero(n);
        for (Index j = 0; j < n; ++j)
          for (Index i = 0; i < n; ++i) {
            if (fwd->active(i, j) == Scalar(0)) continue;
            const Scalar h = -g(i, j) * sig(i, j);
            dn[i] += h;
            dn[j] += h;
            ds(i, j) = Scalar(-2) * h;
          }
        const Matrix<Scalar> sym = ds + ds.transpose();
        Matrix<Scalar> dxk = matmul<Scalar>(fwd->weighted, sym);
        for (Index i = 0; i < n; ++i) dxk.col(i) += Scalar(2) * dn[i] * fwd->weighted.col(i);
        const Matrix<Scalar>& x = xn->value;
        const Matrix<Scalar>& kap = kn->value;
        if (kn->requires_grad) {
          Matrix<Scalar> gk(kap.rows(), 1);
          for (Index l = 0; l < x.rows(); ++l) gk(l, 0) = x.row(l).dot(dxk.row(l));
          kn->accumulate(gk);
        }
        if (xn->requires_grad) xn->accumulate(kap.col(0).asDiagonal() * dxk);
      });
}

template <typename Scalar>
Var<Scalar> online_average(const Var<Scalar>& sigma, const Var<Scalar>& sigma_hat, const Var<Scalar>& nu_raw,
                           Index index) {
  require_shape(nu_raw.cols() == 1 && index >= 0 && index < nu_raw.rows(), "online_average: bad nu index");
  const Scalar nu = logistic(nu_raw.value()(index, 0));
  auto sn = sigma.node();
  auto hn = sigma_hat.node();
  auto vn = nu_raw.node();
  return Tape<Scalar>::record(
      OpKind::kOnlineAverage, online_average<Scalar>(sigma.value(), sigma_hat.value(), nu),
      {&sigma, &sigma_hat, &nu_raw}, [sn, hn, vn, nu, index](const Matrix<Scalar>& g) {
        sn->accumulate((Scalar(1) - nu) * g);
        hn->accumulate(nu * g);
        if (vn->requires_grad) {
          Matrix<Scalar> gv = Matrix<Scalar>::Zero(vn->value.rows(), 1);
          gv(index, 0) = nu * (Scalar(1) - nu) * g.cwiseProduct(hn->value - sn->value).sum();
          vn->accumulate(gv);
        }
      });
}

#define GSC_INSTANTIATE(S)                                                                         \
  template Matrix<S> window_mask<S>(const PatchGeometry&, int);                                   \
  template Matrix<S> compute_similarity<S>(const Matrix<S>&, const Vector<S>&, const Matrix<S>&); \
  template Matrix<S> online_average<S>(const Matrix<S>&, const Matrix<S>&, S);                    \
  template Var<S> compute_similarity<S>(const Var<S>&, const Var<S>&, const Matrix<S>&);          \
  template Var<S> online_average<S>(const Var<S>&, const Var<S>&, const Var<S>&, Index);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
