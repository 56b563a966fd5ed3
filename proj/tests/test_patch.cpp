#include "support.hpp"

#include <gtest/gtest.h>

namespace gsc {
namespace {

TEST(Geometry, CountsMatchBruteForce) {
  for (auto [h, w, k] : std::vector<std::array<int, 3>>{{5, 5, 3}, {7, 12, 4}, {3, 3, 3}, {9, 4, 1}, {1, 6, 1}}) {
    const PatchGeometry g(h, w, 1, k);
    EXPECT_EQ(g.count(), Index(h - k + 1) * (w - k + 1));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int covering = 0;
        for (int pr = 0; pr + k <= h; ++pr)
          for (int pc = 0; pc + k <= w; ++pc) covering += pr <= r && r < pr + k && pc <= c && c < pc + k;
        EXPECT_EQ(g.counts[std::size_t(r * w + c)], covering);
        EXPECT_GE(covering, 1);
      }
  }
}

TEST(Geometry, RejectsImageSmallerThanPatch) {
  EXPECT_THROW(PatchGeometry(4, 8, 1, 5), ShapeError);
  EXPECT_THROW(extract(Image<double>(2, 2, 1), 3), ShapeError);
}

TEST(Extract, ConstantImage) {
  const PatchSet<double> ps = extract(Image<double>(6, 7, 3, 0.3), 3);
  EXPECT_LT((ps.mean.array() - 0.3).abs().maxCoeff(), 1e-16);
  EXPECT_LT(ps.centered.cwiseAbs().maxCoeff(), 1e-16);
}

TEST(Extract, SinglePatchIsRowMajorImage) {
  Image<double> img(3, 3, 1);
  for (int i = 0; i < 9; ++i) img.data[i] = i;
  const PatchSet<double> ps = extract(img, 3);
  ASSERT_EQ(ps.raw.cols(), 1);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(ps.raw(i, 0), i);
  EXPECT_EQ(ps.mean[0], 4.0);
}

TEST(Extract, LayoutIsRowMajorWithInterleavedChannels) {
  Rng rng(1);
  const Image<double> img = random_image(5, 6, 3, rng);
  const PatchSet<double> ps = extract(img, 2);
  ASSERT_EQ(ps.raw.rows(), 12);
  ASSERT_EQ(ps.raw.cols(), 4 * 5);
  for (Index n = 0; n < ps.raw.cols(); ++n) {
    const int r0 = int(n / 5), c0 = int(n % 5);
    Index e = 0;
    for (int dr = 0; dr < 2; ++dr)
      for (int dc = 0; dc < 2; ++dc)
        for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(ps.raw(e++, n), img.at(r0 + dr, c0 + dc, ch));
  }
}

TEST(Extract, MeansMatchNaiveOracle) {
  Rng rng(2);
  const Image<double> img = random_image(4, 4, 1, rng);
  const PatchSet<double> ps = extract(img, 3);
  ASSERT_EQ(ps.mean.size(), 4);
  for (int n = 0; n < 4; ++n) {
    double s = 0;
    for (int dr = 0; dr < 3; ++dr)
      for (int dc = 0; dc < 3; ++dc) s += img.at(n / 2 + dr, n % 2 + dc);
    EXPECT_EQ(ps.mean[n], s / 9);
  }
}

TEST(Extract, CenteredColumnsHaveZeroMean) {
  Rng rng(3);
  const PatchSet<double> ps = extract(random_image(11, 9, 3, rng), 4);
  EXPECT_LT(ps.centered.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  const Matrix<double> rebuilt = ps.centered.rowwise() + ps.mean.transpose();
  EXPECT_LT((rebuilt - ps.raw).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Average, RoundTripOnRandomImages) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = trial % 2 ? 3 : 1;
    const int k = 1 + int(rng.below(5));
    const int h = k + int(rng.below(8)), w = k + int(rng.below(8));
    const Image<double> img = random_image(h, w, c, rng);
    const PatchSet<double> ps = extract(img, k);
    const Image<double> back = average(ps.centered, ps.mean, ps.geometry);
    EXPECT_LT((back.data - img.data).cwiseAbs().maxCoeff(), 1e-12) << h << "x" << w << "x" << c << " k=" << k;
  }
}

TEST(Average, SixBySixRoundTrip) {
  Rng rng(5);
  const Image<double> img = random_image(6, 6, 1, rng);
  const PatchSet<double> ps = extract(img, 3);
  EXPECT_LT((average(ps.centered, ps.mean, ps.geometry).data - img.data).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Average, SinglePatchAddsMeanBack) {
  Rng rng(6);
  const PatchGeometry g(4, 4, 1, 4);
  Matrix<double> est(16, 1);
  for (Index i = 0; i < 16; ++i) est(i, 0) = rng.normal();
  const Vector<double> mean = Vector<double>::Constant(1, 0.25);
  const Image<double> out = average(est, mean, g);
  for (Index i = 0; i < 16; ++i) EXPECT_EQ(out.data[i], est(i, 0) + 0.25);
}

TEST(Average, IsCountNormalizedMeanOfEstimates) {
  Rng rng(7);
  const PatchGeometry g(5, 6, 1, 3);
  Matrix<double> est(9, g.count());
  for (Index i = 0; i < est.size(); ++i) est.data()[i] = rng.normal();
  const Vector<double> mean = Vector<double>::Zero(g.count());
  const Image<double> out = average(est, mean, g);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) {
      double s = 0;
      int n = 0;
      for (int pr = 0; pr <= 2; ++pr)
        for (int pc = 0; pc <= 3; ++pc)
          if (pr <= r && r < pr + 3 && pc <= c && c < pc + 3) {
            s += est((r - pr) * 3 + (c - pc), pr * 4 + pc);
            ++n;
          }
      EXPECT_NEAR(out.at(r, c), s / n, 1e-15);
    }
}

TEST(Average, ShapeMismatchThrows) {
  const PatchGeometry g(5, 5, 1, 3);
  EXPECT_THROW(average<double>(Matrix<double>::Zero(9, 8), Vector<double>::Zero(9), g), ShapeError);
  EXPECT_THROW(average<double>(Matrix<double>::Zero(9, 9), Vector<double>::Zero(8), g), ShapeError);
}

TEST(MaskedMean, Examples) {
  Vector<double> v(4), full = Vector<double>::Ones(4), one = Vector<double>::Zero(4), half(4);
  v << 1, 2, 3, 6;
  one[2] = 1;
  half << 1, 0, 1, 0;
  EXPECT_EQ(masked_mean<double>(v, full), 3.0);
  EXPECT_EQ(masked_mean<double>(v, one), 3.0);
  EXPECT_EQ(masked_mean<double>(Vector<double>::Constant(4, 0.7), half), 0.7);
  EXPECT_THROW(masked_mean<double>(v, Vector<double>::Zero(4)), DataError);
}

TEST(ExtractMasked, FullMaskMatchesExtract) {
  Rng rng(8);
  const Image<double> img = random_image(7, 8, 3, rng);
  const PatchSet<double> a = extract(img, 3), b = extract_masked(img, Image<double>(7, 8, 3, 1.0), 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.centered, b.centered);
}

TEST(ExtractMasked, UsesObservedEntriesOnly) {
  const Image<double> img(6, 6, 3, 0.6);
  const Mosaic<double> m = mosaic(img, BayerPattern::kRGGB);
  const PatchSet<double> ps = extract_masked(m.observed, m.mask, 3);
  EXPECT_LT((ps.mean.array() - 0.6).abs().maxCoeff(), 1e-15);
  EXPECT_LT(ps.centered.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PatchTape, ExtractAndAverageMatchPlainVersions) {
  Rng rng(9);
  const Image<double> img = random_image(6, 7, 3, rng);
  const PatchSet<double> ps = extract(img, 3);
  const auto col = Var<double>::constant(Matrix<double>(img.data));
  EXPECT_EQ(patch_extract(col, ps.geometry).value(), ps.raw);
  EXPECT_LT((center_columns(patch_extract(col, ps.geometry)).value() - ps.centered).cwiseAbs().maxCoeff(), 1e-15);
  const auto back = patch_average(Var<double>::constant(ps.centered), ps.mean, ps.geometry);
  EXPECT_LT((back.value() - Matrix<double>(img.data)).cwiseAbs().maxCoeff(), 1e-12);
}

double patch_chain(const Matrix<double>& x, const PatchGeometry& g, const Vector<double>& mean,
                   const Matrix<double>& target, Tape<double>* tape, Matrix<double>* grad) {
  const Var<double> v = tape ? tape->parameter("x", x) : Var<double>::constant(x);
  const auto centered = center_columns(patch_extract(v, g));
  const auto shifted = add_column_offsets(centered, mean);
  const auto img = patch_average(shifted, mean, g);
  const auto loss = mse(img, target);
  if (tape) {
    tape->close();
    tape->backward(loss);
    *grad = tape->gradient("x");
  }
  return loss.value()(0, 0);
}

TEST(PatchTape, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  const PatchGeometry g(5, 6, 1, 3);
  Matrix<double> x(30, 1), target(30, 1);
  for (Index i = 0; i < 30; ++i) {
    x(i, 0) = rng.normal();
    target(i, 0) = rng.normal();
  }
  Vector<double> mean(g.count());
  for (Index i = 0; i < mean.size(); ++i) mean[i] = rng.normal();
  Tape<double> tape;
  Matrix<double> grad;
  patch_chain(x, g, mean, target, &tape, &grad);
  double err = 0, scale = 0;
  for (Index i = 0; i < 30; ++i) {
    Matrix<double> p = x, m = x;
    p(i, 0) += 1e-5;
    m(i, 0) -= 1e-5;
    const double fd = (patch_chain(p, g, mean, target, nullptr, nullptr) -
                       patch_chain(m, g, mean, target, nullptr, nullptr)) / 2e-5;
    err = std::max(err, std::abs(fd - grad(i, 0)));
    scale = std::max({scale, std::abs(fd), std::abs(grad(i, 0))});
  }
  EXPECT_LT(err / scale, 1e-4);
}

}  // namespace
}  // namespace gsc
