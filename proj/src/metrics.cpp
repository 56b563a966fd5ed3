#include "gsc/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace gsc {

namespace {

double quantized(double v) {
  const double c = v < 0 ? 0 : (v > 1 ? 1 : v);
  return std::round(c * 255.0) / 255.0;
}

constexpr int kWindow = 11;

std::array<double, kWindow * kWindow> gaussian_window() {
  std::array<double, kWindow * kWindow> w{};
  double sum = 0;
  for (int r = 0; r < kWindow; ++r)
    for (int c = 0; c < kWindow; ++c) {
      const double dr = r - kWindow / 2, dc = c - kWindow / 2;
      w[std::size_t(r * kWindow + c)] = std::exp(-(dr * dr + dc * dc) / (2 * 1.5 * 1.5));
      sum += w[std::size_t(r * kWindow + c)];
    }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

template <typename Scalar>
double psnr(const Image<Scalar>& x, const Image<Scalar>& y, bool quantize) {
  require_shape(x.same_shape(y), "psnr: shape mismatch");
  require_shape(x.size() > 0, "psnr: empty image");
  double sum = 0;
  for (Index i = 0; i < x.size(); ++i) {
    double a = double(x.data[i]), b = double(y.data[i]);
    if (quantize) {
      a = quantized(a);
      b = quantized(b);
    }
    sum += (a - b) * (a - b);
  }
  const double mse = sum / double(x.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

template <typename Scalar>
double ssim(const Image<Scalar>& x, const Image<Scalar>& y) {
  require_shape(x.same_shape(y), "ssim: shape mismatch");
  if (x.height < kWindow || x.width < kWindow) throw std::invalid_argument("ssim: image smaller than 11x11");
  static const auto w = gaussian_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (int ch = 0; ch < x.channels; ++ch) {
    double channel_sum = 0;
    for (int r0 = 0; r0 + kWindow <= x.height; ++r0)
      for (int c0 = 0; c0 + kWindow <= x.width; ++c0) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int r = 0; r < kWindow; ++r)
          for (int c = 0; c < kWindow; ++c) {
            const double g = w[std::size_t(r * kWindow + c)];
            const double a = double(x.at(r0 + r, c0 + c, ch)), b = double(y.at(r0 + r, c0 + c, ch));
            mx += g * a;
            my += g * b;
            sxx += g * (a * a);
            syy += g * (b * b);
            sxy += g * (a * b);
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        channel_sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    total += channel_sum / double((x.height - kWindow + 1) * (x.width - kWindow + 1));
  }
  return total / x.channels;
}

template <typename Scalar>
MetricReport evaluate(const Image<Scalar>& reference, const Image<Scalar>& estimate, bool quantize) {
  MetricReport r;
  r.psnr_db = psnr(reference, estimate, quantize);
  if (reference.height >= kWindow && reference.width >= kWindow) r.ssim = ssim(reference, estimate);
  else r.ssim = std::numeric_limits<double>::quiet_NaN();
  return r;
}

#define GSC_INSTANTIATE(S)                                             \
  template double psnr<S>(const Image<S>&, const Image<S>&, bool);     \
  template double ssim<S>(const Image<S>&, const Image<S>&);           \
  template MetricReport evaluate<S>(const Image<S>&, const Image<S>&, bool);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
