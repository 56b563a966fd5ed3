#include "gsc/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>
#include <vector>

namespace gsc {

namespace {

template <typename Scalar, Index MR, Index NR>
inline void micro_kernel(const Scalar* __restrict ap, const Scalar* __restrict bp, Index kc, Scalar (&out)[NR][MR]) {
  Scalar acc[NR][MR];
  for (Index jj = 0; jj < NR; ++jj)
    for (Index ii = 0; ii < MR; ++ii) acc[jj][ii] = out[jj][ii];
  for (Index k = 0; k < kc; ++k) {
#pragma GCC unroll 4
    for (Index jj = 0; jj < NR; ++jj) {
      const Scalar bk = bp[k * NR + jj];
#pragma GCC unroll 16
      for (Index ii = 0; ii < MR; ++ii) acc[jj][ii] += ap[k * MR + ii] * bk;
    }
  }
  for (Index jj = 0; jj < NR; ++jj)
    for (Index ii = 0; ii < MR; ++ii) out[jj][ii] = acc[jj][ii];
}

// c = a * b for column-major a (rows x inner, leading dimension lda).
// Every entry is accumulated over the inner index in increasing order with a
// separate multiply and add, so the result equals the textbook triple loop.
// Blocking only changes which entries are in flight together; partial sums
// parked in c between inner blocks are resumed in order.
template <typename Scalar>
void gemm_ordered(const Scalar* a, Index lda, Index rows, Index inner, const Matrix<Scalar>& b, Matrix<Scalar>& c) {
  constexpr Index MR = 16, NR = 4, KC = 256, MC = 64, NC = 512;
  const Index cols = b.cols();
  if (inner == 0) {
    c.setZero();
    return;
  }
  const Index kmax = std::min(KC, inner);
  thread_local std::vector<Scalar> bpack, apack;
  bpack.resize(std::size_t(kmax * (std::min(NC, cols) + NR)));
  apack.resize(std::size_t(kmax * (std::min(MC, rows) + MR)));
  for (Index jc = 0; jc < cols; jc += NC) {
    const Index nc = std::min(NC, cols - jc);
    for (Index pc = 0; pc < inner; pc += KC) {
      const Index kc = std::min(KC, inner - pc);
      for (Index jr = 0; jr < nc; jr += NR) {
        Scalar* bp = bpack.data() + jr * kc;
        for (Index k = 0; k < kc; ++k)
          for (Index jj = 0; jj < NR; ++jj) bp[k * NR + jj] = jr + jj < nc ? b(pc + k, jc + jr + jj) : Scalar(0);
      }
      for (Index ic = 0; ic < rows; ic += MC) {
        const Index mc = std::min(MC, rows - ic);
        for (Index ir = 0; ir < mc; ir += MR) {
          Scalar* ap = apack.data() + ir * kc;
          const Index mr = std::min(MR, mc - ir);
          for (Index k = 0; k < kc; ++k) {
            const Scalar* src = a + (pc + k) * lda + ic + ir;
            for (Index ii = 0; ii < MR; ++ii) ap[k * MR + ii] = ii < mr ? src[ii] : Scalar(0);
          }
        }
        for (Index jr = 0; jr < nc; jr += NR) {
          const Index nr = std::min(NR, nc - jr);
          const Scalar* bp = bpack.data() + jr * kc;
          for (Index ir = 0; ir < mc; ir += MR) {
            const Index mr = std::min(MR, mc - ir);
            const Scalar* ap = apack.data() + ir * kc;
            Scalar acc[NR][MR] = {};
            if (pc > 0)
              for (Index jj = 0; jj < nr; ++jj)
                for (Index ii = 0; ii < mr; ++ii) acc[jj][ii] = c(ic + ir + ii, jc + jr + jj);
            micro_kernel<Scalar, MR, NR>(ap, bp, kc, acc);
            for (Index jj = 0; jj < nr; ++jj)
              for (Index ii = 0; ii < mr; ++ii) c(ic + ir + ii, jc + jr + jj) = acc[jj][ii];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  require_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix<Scalar> c(a.rows(), b.cols());
  gemm_ordered(a.data(), a.rows(), a.rows(), a.cols(), b, c);
  return c;
}

template <typename Scalar>
Matrix<Scalar> matmul_tn(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  const Matrix<Scalar> at = a.transpose();
  return matmul<Scalar>(at, b);
}

template <typename Scalar>
Matrix<Scalar> matmul_nt(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  const Matrix<Scalar> bt = b.transpose();
  return matmul<Scalar>(a, bt);
}

template <typename Scalar>
Scalar spectral_norm(const Matrix<Scalar>& a, double tolerance, int max_iterations) {
  if (a.size() == 0) return Scalar(0);
  Matrix<Scalar> gram = matmul_tn<Scalar>(a, a);
  Vector<Scalar> v = Vector<Scalar>::Ones(gram.cols()) / std::sqrt(Scalar(gram.cols()));
  // Slightly asymmetric start so we never begin orthogonal to the top vector.
  for (Index i = 0; i < v.size(); ++i) v[i] += Scalar(1e-3) * Scalar(i % 7);
  v.normalize();
  Scalar eig = 0;
  for (int it = 0; it < max_iterations; ++it) {
    Vector<Scalar> w = gram * v;
    Scalar norm = w.norm();
    if (norm == Scalar(0)) return Scalar(0);
    w /= norm;
    const Scalar change = std::abs(norm - eig);
    eig = norm;
    v = w;
    if (change <= Scalar(tolerance) * eig) break;
  }
  return std::sqrt(eig);
}

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t tag) const {
  Rng mixer(state_ ^ (tag * 0xD1B54A32D192ED03ull));
  return Rng(mixer.next_u64());
}

template <typename Scalar>
Vector<Scalar> gaussian(Rng& rng, Index n, Scalar sigma) {
  Vector<Scalar> out(n);
  for (Index i = 0; i < n; ++i) out[i] = Scalar(double(sigma) * rng.normal());
  return out;
}

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Ref<Vector<Scalar>> params,
               const Vector<Scalar>& grads, double lr) {
  require_shape(params.size() == grads.size(), "adam_step: params/grads size mismatch");
  if (state.first.size() == 0) {
    state.first = Vector<Scalar>::Zero(params.size());
    state.second = Vector<Scalar>::Zero(params.size());
  }
  require_shape(state.first.size() == params.size(), "adam_step: state size mismatch");
  ++state.step;
  const double b1 = state.hyper.beta1;
  const double b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (Index i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * double(state.first[i]) + (1.0 - b1) * g;
    const double v = b2 * double(state.second[i]) + (1.0 - b2) * g * g;
    state.first[i] = Scalar(m);
    state.second[i] = Scalar(v);
    const double mhat = m / c1;
    const double vhat = v / c2;
    params[i] = Scalar(double(params[i]) - lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
  }
}

#define GSC_INSTANTIATE(S)                                                           \
  template Matrix<S> matmul<S>(const Matrix<S>&, const Matrix<S>&);                 \
  template Matrix<S> matmul_tn<S>(const Matrix<S>&, const Matrix<S>&);              \
  template Matrix<S> matmul_nt<S>(const Matrix<S>&, const Matrix<S>&);              \
  template S spectral_norm<S>(const Matrix<S>&, double, int);                       \
  template Vector<S> gaussian<S>(Rng&, Index, S);                                   \
  template void adam_step<S>(AdamState<S>&, Eigen::Ref<Vector<S>>, const Vector<S>&, \
                             double);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

void parallel_for(Index n, int threads, const std::function<void(Index)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (Index i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const Index count = std::min<Index>(threads, n);
  for (Index t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

int default_threads() {
  const char* env = std::getenv("GSC_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return int(v);
}

}  // namespace gsc
