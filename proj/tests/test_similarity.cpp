#include "support.hpp"

#include <gtest/gtest.h>

namespace gsc {
namespace {

TEST(Window, ChebyshevRadiusOnTopLeftCorners) {
  const PatchGeometry g(8, 9, 1, 3);
  for (int w : {1, 3, 4, 5, 56}) {
    const Matrix<double> mask = window_mask<double>(g, w);
    for (Index i = 0; i < g.count(); ++i)
      for (Index j = 0; j < g.count(); ++j) {
        const int d = std::max(std::abs(g.row_of(i) - g.row_of(j)), std::abs(g.col_of(i) - g.col_of(j)));
        EXPECT_EQ(mask(i, j), d <= w / 2 ? 1.0 : 0.0);
      }
  }
  EXPECT_EQ(window_mask<double>(g, 1), Matrix<double>::Identity(g.count(), g.count()));
}

TEST(Similarity, IdenticalPatchesGiveOne) {
  Matrix<double> patches(4, 3);
  patches << 1, 1, 0, 2, 2, 0, 3, 3, 0, 4, 4, 1;
  const Matrix<double> s =
      compute_similarity<double>(patches, Vector<double>::Ones(4), Matrix<double>::Ones(3, 3));
  EXPECT_EQ(s(0, 1), 1.0);
  EXPECT_LT(s(0, 2), 1.0);
}

TEST(Similarity, ZeroKappaGivesOnesInsideWindow) {
  Rng rng(1);
  const PatchSet<double> ps = extract(random_image(7, 7, 1, rng), 3);
  const Matrix<double> window = window_mask<double>(ps.geometry, 3);
  const Matrix<double> s = compute_similarity<double>(ps.raw, Vector<double>::Zero(9), window);
  EXPECT_EQ(s, window);
}

TEST(Similarity, OnePixelDifferenceGivesInverseE) {
  Matrix<double> patches = Matrix<double>::Zero(9, 2);
  patches(4, 1) = 1.0;
  const Matrix<double> s =
      compute_similarity<double>(patches, Vector<double>::Ones(9), Matrix<double>::Ones(2, 2));
  EXPECT_NEAR(s(0, 1), 0.36787944117144233, 1e-15);
  EXPECT_NEAR(s(1, 0), 0.36787944117144233, 1e-15);
}

TEST(Similarity, KappaWeightsSquaredDifferences) {
  Matrix<double> patches = Matrix<double>::Zero(2, 2);
  patches(0, 1) = 1.0;
  patches(1, 1) = 2.0;
  Vector<double> kappa(2);
  kappa << 0.5, 0.25;
  const Matrix<double> s = compute_similarity<double>(patches, kappa, Matrix<double>::Ones(2, 2));
  EXPECT_NEAR(s(0, 1), std::exp(-(0.25 + 0.25)), 1e-15);
}

TEST(Similarity, SymmetricUnitDiagonalAndWindowed) {
  Rng rng(2);
  const PatchSet<double> ps = extract(random_image(9, 10, 3, rng), 3);
  const Matrix<double> window = window_mask<double>(ps.geometry, 5);
  Vector<double> kappa(ps.raw.rows());
  for (Index i = 0; i < kappa.size(); ++i) kappa[i] = rng.uniform();
  const Matrix<double> s = compute_similarity<double>(ps.raw, kappa, window);
  EXPECT_EQ(s, s.transpose());
  EXPECT_EQ(s.diagonal(), Vector<double>::Ones(s.rows()));
  for (Index i = 0; i < s.size(); ++i) {
    if (window.data()[i] == 0) {
      EXPECT_EQ(s.data()[i], 0.0);
    } else {
      EXPECT_GT(s.data()[i], 0.0);
      EXPECT_LE(s.data()[i], 1.0);
    }
  }
}

TEST(OnlineAverage, Examples) {
  Rng rng(3);
  Matrix<double> s0(3, 3), hat(3, 3);
  for (Index i = 0; i < 9; ++i) {
    s0.data()[i] = 0.1 + 0.8 * rng.uniform();
    hat.data()[i] = 0.1 + 0.8 * rng.uniform();
  }
  EXPECT_LT((online_average(s0, hat, logistic(40.0)) - hat).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(online_average(hat, hat, 0.5), hat);
  const Matrix<double> twice = online_average(online_average(s0, hat, 0.5), hat, 0.5);
  EXPECT_LT((twice - (0.25 * s0 + 0.75 * hat)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(OnlineAverage, PreservesRangeSymmetryAndPattern) {
  Rng rng(4);
  const PatchSet<double> a = extract(random_image(8, 8, 1, rng), 3), b = extract(random_image(8, 8, 1, rng), 3);
  const Matrix<double> window = window_mask<double>(a.geometry, 3);
  const Vector<double> kappa = Vector<double>::Constant(9, 0.7);
  const Matrix<double> s1 = compute_similarity<double>(a.raw, kappa, window);
  const Matrix<double> s2 = compute_similarity<double>(b.raw, kappa, window);
  const Matrix<double> s = online_average(s1, s2, 0.3);
  EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-16);
  for (Index i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.data()[i] == 0.0, window.data()[i] == 0.0);
    EXPECT_LE(s.data()[i], 1.0);
  }
}

TEST(OnlineAverage, RejectsPatternMismatch) {
  Matrix<double> a = Matrix<double>::Identity(3, 3), b = Matrix<double>::Ones(3, 3);
  EXPECT_THROW(online_average(a, b, 0.5), std::invalid_argument);
  EXPECT_THROW(online_average<double>(a, Matrix<double>::Ones(2, 2), 0.5), ShapeError);
}

TEST(Schedule, Examples) {
  const Schedule sixth{parse_update_period("1/6")};
  EXPECT_EQ(sixth.steps(24), (std::vector<int>{0, 6, 12, 18}));
  EXPECT_EQ(sixth.refreshes(24), 4);
  const Schedule never{parse_update_period("0")};
  EXPECT_EQ(never.steps(24), std::vector<int>{0});
  const Schedule always{parse_update_period("1")};
  EXPECT_EQ(always.refreshes(24), 24);
  EXPECT_EQ(Schedule{parse_update_period("1/8")}.steps(24), (std::vector<int>{0, 8, 16}));
}

TEST(Schedule, ParsesFrequencies) {
  EXPECT_EQ(parse_update_period("1/6"), 6);
  EXPECT_EQ(parse_update_period("0.125"), 8);
  EXPECT_EQ(parse_update_period("0.3"), 4);
  EXPECT_EQ(parse_update_period("1/12"), 12);
  EXPECT_EQ(parse_update_period("0"), 0);
  EXPECT_EQ(parse_update_period("1"), 1);
  for (const char* bad : {"-0.5", "2", "1/0", "abc", "", "3/2"}) EXPECT_THROW(parse_update_period(bad), std::invalid_argument) << bad;
  EXPECT_EQ(parse_update_period(format_update_period(6)), 6);
  EXPECT_EQ(parse_update_period(format_update_period(0)), 0);
}

TEST(Logistic, StartsAtHalf) {
  EXPECT_EQ(logistic(0.0), 0.5);
  EXPECT_GT(logistic(-50.0), 0.0);
  EXPECT_LE(logistic(50.0), 1.0);
}

TEST(SimilarityTape, ForwardMatchesPlainKernels) {
  Rng rng(5);
  const PatchSet<double> ps = extract(random_image(6, 6, 1, rng), 3);
  const Matrix<double> window = window_mask<double>(ps.geometry, 3);
  Vector<double> kappa(9);
  for (Index i = 0; i < 9; ++i) kappa[i] = rng.uniform();
  const auto s = compute_similarity(Var<double>::constant(ps.raw), Var<double>::constant(Matrix<double>(kappa)), window);
  EXPECT_EQ(s.value(), compute_similarity<double>(ps.raw, kappa, window));
  Matrix<double> nu(2, 1);
  nu << 0.3, -1.0;
  const auto avg = online_average(s, Var<double>::constant(window), Var<double>::constant(nu), 1);
  EXPECT_LT((avg.value() - online_average<double>(s.value(), window, logistic(-1.0))).cwiseAbs().maxCoeff(), 1e-16);
}

// Two refreshes of the similarity on a small unroll; gradients with respect
// to kappa and nu_raw must be nonzero and match finite differences.
TEST(SimilarityTape, KappaAndNuGradientsMatchFiniteDifferences) {
  Rng rng(6);
  ModelParams<double> params = random_model(Variant::kGroupSC, 3, 1, 8, 2, 2, rng, 0.05);
  const Image<double> clean = synthetic_image(8, 8, 1, rng);
  Sample<double> sample;
  sample.clean = clean;
  sample.obs.y = add_awgn(clean, 25.0, rng);
  InferenceConfig config;
  config.window = 5;
  config.update_period = 1;
  const GradCheckReport report = grad_check(params, sample, config);
  bool saw_kappa = false, saw_nu = false;
  for (const auto& g : report.groups) {
    EXPECT_LT(g.max_rel_error, 1e-4) << g.name;
    if (g.name == "kappa") saw_kappa = g.max_abs_gradient > 0;
    if (g.name == "nu_raw") saw_nu = g.max_abs_gradient > 0;
  }
  EXPECT_TRUE(saw_kappa);
  EXPECT_TRUE(saw_nu);
}

}  // namespace
}  // namespace gsc
