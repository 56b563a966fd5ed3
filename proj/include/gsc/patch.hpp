#pragma once

#include "gsc/imageio.hpp"
#include "gsc/tape.hpp"

namespace gsc {

/// Stride-1 grid of k x k patches fully inside an h x w image. Patch n has
/// top-left corner (n / cols, n % cols); within a patch, entries run
/// row-major over pixels with channels interleaved, as in Image.
struct PatchGeometry {
  int height = 0;
  int width = 0;
  int channels = 1;
  int side = 1;
  int grid_rows = 0;
  int grid_cols = 0;
  /// Number of patches covering each pixel (border pixels get fewer).
  std::vector<int> counts;

  PatchGeometry() = default;
  PatchGeometry(int h, int w, int c, int k);

  Index dim() const { return Index(channels) * side * side; }
  Index count() const { return Index(grid_rows) * grid_cols; }
  int row_of(Index n) const { return int(n / grid_cols); }
  int col_of(Index n) const { return int(n % grid_cols); }
  /// Flat image index of entry `e` of patch `n`.
  Index image_index(Index n, Index e) const;
};

template <typename Scalar>
struct PatchSet {
  PatchGeometry geometry;
  Matrix<Scalar> raw;       // m x N
  Vector<Scalar> mean;      // N
  Matrix<Scalar> centered;  // m x N
};

template <typename Scalar>
Matrix<Scalar> extract_raw(const Image<Scalar>& image, const PatchGeometry& g);

/// All overlapping patches with their means removed.
template <typename Scalar>
PatchSet<Scalar> extract(const Image<Scalar>& image, int side);

/// Same, but means are taken over observed entries only and unobserved
/// entries of the centered patches are zero.
template <typename Scalar>
PatchSet<Scalar> extract_masked(const Image<Scalar>& image, const Image<Scalar>& mask, int side);

/// Each pixel is the mean over covering patches of (estimate + patch mean).
template <typename Scalar>
Image<Scalar> average(const Matrix<Scalar>& estimates, const Vector<Scalar>& mean,
                      const PatchGeometry& g);

template <typename Scalar>
Scalar masked_mean(const Eigen::Ref<const Vector<Scalar>>& values,
                   const Eigen::Ref<const Vector<Scalar>>& mask);

// Tape versions. Images are carried as (h*w*c) x 1 column vectors.
template <typename Scalar>
Var<Scalar> patch_extract(const Var<Scalar>& image, const PatchGeometry& g);
template <typename Scalar>
Var<Scalar> patch_average(const Var<Scalar>& estimates, const Vector<Scalar>& mean,
                          const PatchGeometry& g);
/// estimates + 1 * mean^T
template <typename Scalar>
Var<Scalar> add_column_offsets(const Var<Scalar>& estimates, const Vector<Scalar>& mean);
/// Removes each column's mean.
template <typename Scalar>
Var<Scalar> center_columns(const Var<Scalar>& patches);

}  // namespace gsc
