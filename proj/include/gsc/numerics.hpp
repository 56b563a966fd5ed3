#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace gsc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense products with a fixed accumulation order: every output entry is
// summed over the inner index in increasing order, exactly like the textbook
// triple loop.
template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b);

/// a^T * b
template <typename Scalar>
Matrix<Scalar> matmul_tn(const Matrix<Scalar>& a, const Matrix<Scalar>& b);

/// a * b^T
template <typename Scalar>
Matrix<Scalar> matmul_nt(const Matrix<Scalar>& a, const Matrix<Scalar>& b);

/// Largest singular value by power iteration on a^T a.
template <typename Scalar>
Scalar spectral_norm(const Matrix<Scalar>& a, double tolerance = 1e-6, int max_iterations = 10000);

/// SplitMix64. The whole generator state is one 64-bit word, so it can be
/// checkpointed verbatim.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal draw (Box-Muller, cosine branch only).
  double normal();

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  /// Independent stream derived from this seed and a tag, without advancing.
  Rng fork(std::uint64_t tag) const;

 private:
  std::uint64_t state_;
};

template <typename Scalar>
Vector<Scalar> gaussian(Rng& rng, Index n, Scalar sigma);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  Vector<Scalar> first;
  Vector<Scalar> second;
  std::uint64_t step = 0;
  AdamHyper hyper;

  AdamState() = default;
  explicit AdamState(Index n) : first(Vector<Scalar>::Zero(n)), second(Vector<Scalar>::Zero(n)) {}
};

/// One bias-corrected ADAM update of `params` in place.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Ref<Vector<Scalar>> params,
               const Vector<Scalar>& grads, double lr);

/// Runs fn(0..n-1) on up to `threads` workers. Each index is handled by
/// exactly one call, so results do not depend on the thread count as long as
/// fn writes disjoint outputs.
void parallel_for(Index n, int threads, const std::function<void(Index)>& fn);

/// Worker count from GSC_THREADS, or 1 when unset or invalid.
int default_threads();

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace gsc
