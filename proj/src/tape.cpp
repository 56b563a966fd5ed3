#include "gsc/tape.hpp"

namespace gsc {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kMatmulTN: return "matmul_tn";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMaskMul: return "mask_mul";
    case OpKind::kColumn: return "column";
    case OpKind::kElement: return "element";
    case OpKind::kMse: return "mse";
    case OpKind::kSoftThreshold: return "soft_threshold";
    case OpKind::kGroupShrink: return "group_shrink";
    case OpKind::kCsrProx: return "csr_prox";
    case OpKind::kCodeAverage: return "code_average";
    case OpKind::kSimilarity: return "similarity";
    case OpKind::kOnlineAverage: return "online_average";
    case OpKind::kPatchExtract: return "patch_extract";
    case OpKind::kPatchAverage: return "patch_average";
    case OpKind::kAddColumnOffsets: return "add_column_offsets";
    case OpKind::kCenterColumns: return "center_columns";
  }
  return "unknown";
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::parameter(const std::string& name, Mat value) {
  if (closed_) throw std::logic_error("Tape::parameter: tape is closed");
  for (const auto& [existing, node] : params_)
    if (existing == name) throw std::logic_error("Tape::parameter: duplicate parameter " + name);
  auto node = std::make_shared<Node<Scalar>>();
  node->op = OpKind::kParameter;
  node->value = std::move(value);
  node->requires_grad = true;
  node->tape = this;
  nodes_.push_back(node);
  params_.emplace_back(name, node);
  return Var<Scalar>(node);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(OpKind op, Mat value,
                                 std::initializer_list<const Var<Scalar>*> inputs,
                                 BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Var<Scalar>* in : inputs)
    if (in->requires_grad()) {
      tape = in->tape();
      break;
    }
  auto node = std::make_shared<Node<Scalar>>();
  node->op = op;
  node->value = std::move(value);
  if (tape == nullptr) return Var<Scalar>(std::move(node));
  if (tape->closed_) throw std::logic_error("Tape::record: tape is closed");
  node->requires_grad = true;
  node->tape = tape;
  node->backward = std::move(backward);
  tape->nodes_.push_back(node);
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
std::vector<typename Tape<Scalar>::Gradient> Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (!closed_) throw std::logic_error("Tape::backward: tape is still open");
  require_shape(loss.rows() == 1 && loss.cols() == 1, "Tape::backward: loss is not a scalar");
  for (auto& node : nodes_) node->grad.resize(0, 0);
  if (loss.requires_grad() && loss.tape() == this) {
    loss.node()->grad = Mat::Ones(1, 1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<Scalar>& node = **it;
      if (!node.backward || node.grad.size() == 0) continue;
      if (has_fault_ && node.op == fault_)
        node.backward(-node.grad);
      else
        node.backward(node.grad);
    }
  }
  grads_.clear();
  for (const auto& [name, node] : params_) {
    Mat g = node->grad.size() ? node->grad : Mat::Zero(node->value.rows(), node->value.cols());
    grads_.push_back({name, std::move(g)});
  }
  return grads_;
}

template <typename Scalar>
const typename Tape<Scalar>::Mat& Tape<Scalar>::gradient(const std::string& name) const {
  for (const auto& g : grads_)
    if (g.name == name) return g.value;
  throw std::out_of_range("Tape::gradient: no parameter named " + name);
}

template <typename Scalar>
void Tape<Scalar>::clear() {
  nodes_.clear();
  params_.clear();
  grads_.clear();
  closed_ = false;
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto an = a.node();
  auto bn = b.node();
  return Tape<Scalar>::record(OpKind::kMatmul, matmul<Scalar>(a.value(), b.value()), {&a, &b},
                              [an, bn](const Matrix<Scalar>& g) {
                                if (an->requires_grad) an->accumulate(matmul_nt<Scalar>(g, bn->value));
                                if (bn->requires_grad) bn->accumulate(matmul_tn<Scalar>(an->value, g));
                              });
}

template <typename Scalar>
Var<Scalar> matmul_tn(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto an = a.node();
  auto bn = b.node();
  return Tape<Scalar>::record(OpKind::kMatmulTN, matmul_tn<Scalar>(a.value(), b.value()), {&a, &b},
                              [an, bn](const Matrix<Scalar>& g) {
                                // c = a^T b: da = b g^T, db = a g
                                if (an->requires_grad) an->accumulate(matmul_nt<Scalar>(bn->value, g));
                                if (bn->requires_grad) bn->accumulate(matmul<Scalar>(an->value, g));
                              });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto an = a.node();
  auto bn = b.node();
  return Tape<Scalar>::record(OpKind::kAdd, a.value() + b.value(), {&a, &b},
                              [an, bn](const Matrix<Scalar>& g) {
                                an->accumulate(g);
                                bn->accumulate(g);
                              });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto an = a.node();
  auto bn = b.node();
  return Tape<Scalar>::record(OpKind::kSub, a.value() - b.value(), {&a, &b},
                              [an, bn](const Matrix<Scalar>& g) {
                                an->accumulate(g);
                                if (bn->requires_grad) bn->accumulate(-g);
                              });
}

template <typename Scalar>
Var<Scalar> mask_mul(const Var<Scalar>& a, const Matrix<Scalar>& mask) {
  require_shape(a.rows() == mask.rows() && a.cols() == mask.cols(), "mask_mul: shape mismatch");
  auto an = a.node();
  return Tape<Scalar>::record(OpKind::kMaskMul, a.value().cwiseProduct(mask), {&a},
                              [an, mask](const Matrix<Scalar>& g) { an->accumulate(g.cwiseProduct(mask)); });
}

template <typename Scalar>
Var<Scalar> column(const Var<Scalar>& a, Index j) {
  require_shape(j >= 0 && j < a.cols(), "column: index out of range");
  auto an = a.node();
  return Tape<Scalar>::record(OpKind::kColumn, a.value().col(j), {&a},
                              [an, j](const Matrix<Scalar>& g) {
                                Matrix<Scalar> full = Matrix<Scalar>::Zero(an->value.rows(), an->value.cols());
                                full.col(j) = g;
                                an->accumulate(full);
                              });
}

template <typename Scalar>
Var<Scalar> element(const Var<Scalar>& a, Index i) {
  require_shape(a.cols() == 1 && i >= 0 && i < a.rows(), "element: index out of range");
  auto an = a.node();
  Matrix<Scalar> v(1, 1);
  v(0, 0) = a.value()(i, 0);
  return Tape<Scalar>::record(OpKind::kElement, std::move(v), {&a},
                              [an, i](const Matrix<Scalar>& g) {
                                Matrix<Scalar> full = Matrix<Scalar>::Zero(an->value.rows(), 1);
                                full(i, 0) = g(0, 0);
                                an->accumulate(full);
                              });
}

template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Matrix<Scalar>& target) {
  require_shape(a.rows() == target.rows() && a.cols() == target.cols(), "mse: shape mismatch");
  auto an = a.node();
  Matrix<Scalar> diff = a.value() - target;
  const Scalar n = Scalar(diff.size());
  Matrix<Scalar> v(1, 1);
  v(0, 0) = diff.squaredNorm() / n;
  return Tape<Scalar>::record(OpKind::kMse, std::move(v), {&a},
                              [an, diff, n](const Matrix<Scalar>& g) {
                                an->accumulate(diff * (Scalar(2) * g(0, 0) / n));
                              });
}

#define GSC_INSTANTIATE(S)                                                   \
  template class Tape<S>;                                                   \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&);                  \
  template Var<S> matmul_tn<S>(const Var<S>&, const Var<S>&);               \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                     \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                     \
  template Var<S> mask_mul<S>(const Var<S>&, const Matrix<S>&);             \
  template Var<S> column<S>(const Var<S>&, Index);                          \
  template Var<S> element<S>(const Var<S>&, Index);                         \
  template Var<S> mse<S>(const Var<S>&, const Matrix<S>&);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
