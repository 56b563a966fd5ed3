#pragma once

#include "gsc/imageio.hpp"

namespace gsc {

struct MetricReport {
  double psnr_db = 0;
  double ssim = 0;
};

/// 10 log10(1 / MSE) with peak 1. Identical images give +infinity. With
/// `quantize`, both images are first rounded to 8-bit levels.
template <typename Scalar>
double psnr(const Image<Scalar>& x, const Image<Scalar>& y, bool quantize = false);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions and
/// over channels.
template <typename Scalar>
double ssim(const Image<Scalar>& x, const Image<Scalar>& y);

template <typename Scalar>
MetricReport evaluate(const Image<Scalar>& reference, const Image<Scalar>& estimate, bool quantize = false);

}  // namespace gsc
