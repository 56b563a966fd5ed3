#pragma once

#include "gsc/numerics.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gsc {

/// Kinds of recorded operations. Module-specific ops (shrinkage, similarity,
/// patch transforms) live next to their forward kernels but share this list
/// so a single rule can be singled out for fault injection.
enum class OpKind {
  kParameter,
  kConstant,
  kMatmul,
  kMatmulTN,
  kAdd,
  kSub,
  kMaskMul,
  kColumn,
  kElement,
  kMse,
  kSoftThreshold,
  kGroupShrink,
  kCsrProx,
  kCodeAverage,
  kSimilarity,
  kOnlineAverage,
  kPatchExtract,
  kPatchAverage,
  kAddColumnOffsets,
  kCenterColumns,
};

const char* op_name(OpKind op);

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Node {
  using Mat = Matrix<Scalar>;

  OpKind op = OpKind::kConstant;
  Mat value;
  Mat grad;
  bool requires_grad = false;
  Tape<Scalar>* tape = nullptr;
  std::function<void(const Mat& upstream)> backward;

  void accumulate(const Mat& g) {
    if (!requires_grad) return;
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

/// Handle to a matrix value that may be recorded on a tape. A Var built
/// without a tape (or from constants only) is a plain value: nothing is
/// retained beyond its own lifetime.
template <typename Scalar>
class Var {
 public:
  using Mat = Matrix<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  static Var constant(Mat value) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  const Mat& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<Scalar>* tape() const { return node_ ? node_->tape : nullptr; }
  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Reverse-mode record of matrix-level operations.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  using BackwardFn = std::function<void(const Mat& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a named leaf with its own gradient slot.
  Var<Scalar> parameter(const std::string& name, Mat value);

  /// Records an op whose inputs are `inputs`. If none of them requires a
  /// gradient the result is a constant and `backward` is dropped.
  static Var<Scalar> record(OpKind op, Mat value, std::initializer_list<const Var<Scalar>*> inputs,
                            BackwardFn backward);

  void close() { closed_ = true; }
  bool closed() const { return closed_; }

  struct Gradient {
    std::string name;
    Mat value;
  };
  /// Gradients of a scalar node with respect to every registered parameter,
  /// in registration order. Parameters the loss does not depend on get zeros.
  std::vector<Gradient> backward(const Var<Scalar>& loss);

  const Mat& gradient(const std::string& name) const;

  /// Negates the adjoint of every node of kind `op`. Used only to check that
  /// gradient verification catches a broken rule.
  void inject_fault(OpKind op) { fault_ = op; has_fault_ = true; }

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  std::vector<NodePtr> nodes_;
  std::vector<std::pair<std::string, NodePtr>> params_;
  std::vector<Gradient> grads_;
  bool closed_ = false;
  bool has_fault_ = false;
  OpKind fault_ = OpKind::kConstant;
};

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// a^T b
template <typename Scalar>
Var<Scalar> matmul_tn(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
/// Elementwise product with a constant matrix.
template <typename Scalar>
Var<Scalar> mask_mul(const Var<Scalar>& a, const Matrix<Scalar>& mask);
template <typename Scalar>
Var<Scalar> column(const Var<Scalar>& a, Index j);
/// Entry i of a column vector, as a 1x1 value.
template <typename Scalar>
Var<Scalar> element(const Var<Scalar>& a, Index i);
/// Mean of squared differences against a constant target, as a 1x1 value.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Matrix<Scalar>& target);

}  // namespace gsc
