#include "gsc/patch.hpp"

namespace gsc {

PatchGeometry::PatchGeometry(int h, int w, int c, int k)
    : height(h), width(w), channels(c), side(k) {
  if (k < 1) throw std::invalid_argument("patch side must be >= 1");
  if (h < k || w < k) throw ShapeError("image smaller than patch");
  grid_rows = h - k + 1;
  grid_cols = w - k + 1;
  counts.assign(std::size_t(h) * w, 0);
  for (int r = 0; r < grid_rows; ++r)
    for (int col = 0; col < grid_cols; ++col)
      for (int dr = 0; dr < k; ++dr)
        for (int dc = 0; dc < k; ++dc) ++counts[std::size_t(r + dr) * w + col + dc];
}

Index PatchGeometry::image_index(Index n, Index e) const {
  const int ch = int(e % channels);
  const int pix = int(e / channels);
  const int dr = pix / side;
  const int dc = pix % side;
  return (Index(row_of(n) + dr) * width + col_of(n) + dc) * channels + ch;
}

namespace {

// Calls fn(n, e, flat_image_index) over every patch entry in a fixed order.
template <typename Fn>
void for_each_entry(const PatchGeometry& g, Fn&& fn) {
  const Index row_span = Index(g.side) * g.channels;
  for (Index n = 0; n < g.count(); ++n) {
    const int r0 = g.row_of(n), c0 = g.col_of(n);
    Index e = 0;
    for (int dr = 0; dr < g.side; ++dr) {
      const Index base = (Index(r0 + dr) * g.width + c0) * g.channels;
      for (Index t = 0; t < row_span; ++t, ++e) fn(n, e, base + t);
    }
  }
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> extract_raw(const Image<Scalar>& image, const PatchGeometry& g) {
  require_shape(image.height == g.height && image.width == g.width && image.channels == g.channels,
                "extract: image does not match geometry");
  Matrix<Scalar> out(g.dim(), g.count());
  for_each_entry(g, [&](Index n, Index e, Index idx) { out(e, n) = image.data[idx]; });
  return out;
}

template <typename Scalar>
PatchSet<Scalar> extract(const Image<Scalar>& image, int side) {
  PatchSet<Scalar> ps;
  ps.geometry = PatchGeometry(image.height, image.width, image.channels, side);
  ps.raw = extract_raw(image, ps.geometry);
  const Index m = ps.raw.rows();
  ps.mean.resize(ps.raw.cols());
  ps.centered.resize(m, ps.raw.cols());
  for (Index n = 0; n < ps.raw.cols(); ++n) {
    Scalar sum = 0;
    for (Index e = 0; e < m; ++e) sum += ps.raw(e, n);
    ps.mean[n] = sum / Scalar(m);
    for (Index e = 0; e < m; ++e) ps.centered(e, n) = ps.raw(e, n) - ps.mean[n];
  }
  return ps;
}

template <typename Scalar>
Scalar masked_mean(const Eigen::Ref<const Vector<Scalar>>& values,
                   const Eigen::Ref<const Vector<Scalar>>& mask) {
  require_shape(values.size() == mask.size(), "masked_mean: size mismatch");
  Scalar sum = 0, count = 0;
  for (Index i = 0; i < values.size(); ++i)
    if (mask[i] != Scalar(0)) {
      sum += values[i];
      count += 1;
    }
  if (count == 0) throw DataError("masked_mean: patch has no observed entry");
  return sum / count;
}

template <typename Scalar>
PatchSet<Scalar> extract_masked(const Image<Scalar>& image, const Image<Scalar>& mask, int side) {
  require_shape(image.same_shape(mask), "extract_masked: mask shape mismatch");
  PatchSet<Scalar> ps;
  ps.geometry = PatchGeometry(image.height, image.width, image.channels, side);
  ps.raw = extract_raw(image, ps.geometry);
  const Matrix<Scalar> m = extract_raw(mask, ps.geometry);
  ps.mean.resize(ps.raw.cols());
  ps.centered.resize(ps.raw.rows(), ps.raw.cols());
  for (Index n = 0; n < ps.raw.cols(); ++n) {
    ps.mean[n] = masked_mean<Scalar>(ps.raw.col(n), m.col(n));
    for (Index e = 0; e < ps.raw.rows(); ++e)
      ps.centered(e, n) = m(e, n) != Scalar(0) ? ps.raw(e, n) - ps.mean[n] : Scalar(0);
  }
  return ps;
}

template <typename Scalar>
Image<Scalar> average(const Matrix<Scalar>& estimates, const Vector<Scalar>& mean,
                      const PatchGeometry& g) {
  require_shape(estimates.rows() == g.dim() && estimates.cols() == g.count() && mean.size() == g.count(),
                "average: estimates do not match geometry");
  Image<Scalar> out(g.height, g.width, g.channels);
  for_each_entry(g, [&](Index n, Index e, Index idx) { out.data[idx] += estimates(e, n) + mean[n]; });
  for (Index idx = 0; idx < out.size(); ++idx) out.data[idx] /= Scalar(g.counts[std::size_t(idx / g.channels)]);
  return out;
}

template <typename Scalar>
Var<Scalar> patch_extract(const Var<Scalar>& image, const PatchGeometry& g) {
  require_shape(image.cols() == 1 && image.rows() == Index(g.height) * g.width * g.channels,
                "patch_extract: image does not match geometry");
  Matrix<Scalar> out(g.dim(), g.count());
  const auto& img = image.value();
  for_each_entry(g, [&](Index n, Index e, Index idx) { out(e, n) = img(idx, 0); });
  auto in = image.node();
  return Tape<Scalar>::record(OpKind::kPatchExtract, std::move(out), {&image},
                              [in, g](const Matrix<Scalar>& grad) {
                                Matrix<Scalar> acc = Matrix<Scalar>::Zero(in->value.rows(), 1);
                                for_each_entry(g, [&](Index n, Index e, Index idx) { acc(idx, 0) += grad(e, n); });
                                in->accumulate(acc);
                              });
}

template <typename Scalar>
Var<Scalar> patch_average(const Var<Scalar>& estimates, const Vector<Scalar>& mean,
                          const PatchGeometry& g) {
  const Image<Scalar> img = average<Scalar>(estimates.value(), mean, g);
  auto in = estimates.node();
  return Tape<Scalar>::record(OpKind::kPatchAverage, img.data, {&estimates},
                              [in, g](const Matrix<Scalar>& grad) {
                                Matrix<Scalar> acc(g.dim(), g.count());
                                for_each_entry(g, [&](Index n, Index e, Index idx) {
                                  acc(e, n) = grad(idx, 0) / Scalar(g.counts[std::size_t(idx / g.channels)]);
                                });
                                in->accumulate(acc);
                              });
}

template <typename Scalar>
Var<Scalar> add_column_offsets(const Var<Scalar>& estimates, const Vector<Scalar>& mean) {
  require_shape(mean.size() == estimates.cols(), "add_column_offsets: size mismatch");
  Matrix<Scalar> out = estimates.value();
  for (Index n = 0; n < out.cols(); ++n) out.col(n).array() += mean[n];
  auto in = estimates.node();
  return Tape<Scalar>::record(OpKind::kAddColumnOffsets, std::move(out), {&estimates},
                              [in](const Matrix<Scalar>& grad) { in->accumulate(grad); });
}

template <typename Scalar>
Var<Scalar> center_columns(const Var<Scalar>& patches) {
  Matrix<Scalar> out = patches.value();
  const Scalar m = Scalar(out.rows());
  for (Index n = 0; n < out.cols(); ++n) out.col(n).array() -= out.col(n).sum() / m;
  auto in = patches.node();
  return Tape<Scalar>::record(OpKind::kCenterColumns, std::move(out), {&patches},
                              [in, m](const Matrix<Scalar>& grad) {
                                Matrix<Scalar> g = grad;
                                for (Index n = 0; n < g.cols(); ++n) g.col(n).array() -= grad.col(n).sum() / m;
                                in->accumulate(g);
                              });
}

#define GSC_INSTANTIATE(S)                                                                         \
  template Matrix<S> extract_raw<S>(const Image<S>&, const PatchGeometry&);                       \
  template PatchSet<S> extract<S>(const Image<S>&, int);                                          \
  template PatchSet<S> extract_masked<S>(const Image<S>&, const Image<S>&, int);                  \
  template Image<S> average<S>(const Matrix<S>&, const Vector<S>&, const PatchGeometry&);         \
  template S masked_mean<S>(const Eigen::Ref<const Vector<S>>&, const Eigen::Ref<const Vector<S>>&); \
  template Var<S> patch_extract<S>(const Var<S>&, const PatchGeometry&);                         \
  template Var<S> patch_average<S>(const Var<S>&, const Vector<S>&, const PatchGeometry&);       \
  template Var<S> add_column_offsets<S>(const Var<S>&, const Vector<S>&);                        \
  template Var<S> center_columns<S>(const Var<S>&);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
