#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cafe/theory.hpp"

using namespace cafe;

namespace {

Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed, "theory-test");
  Tensor t({r, c});
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST(H11, SingleSampleIsScaledIdentity) {
  auto h = build_h11(5, 1);
  EXPECT_TRUE(h.m.isApprox(0.4 * Eigen::MatrixXd::Identity(5, 5), 1e-15));
  EXPECT_TRUE(h.positive_definite);
}

TEST(H11, FourChooseTwoEntriesAndMonteCarlo) {
  auto h = build_h11(4, 2);
  Eigen::MatrixXd mc = Eigen::MatrixXd::Zero(4, 4);
  auto masks = enumerate_masks(4, 2);
  for (const auto& m : masks)
    for (int p = 0; p < 4; ++p)
      for (int r = 0; r < 4; ++r) mc(p, r) += 2.0 * m.bits[p] * m.bits[r] / static_cast<double>(masks.size());
  for (int p = 0; p < 4; ++p)
    for (int r = 0; r < 4; ++r) {
      EXPECT_NEAR(h.m(p, r), p == r ? 1.0 : 1.0 / 3.0, 1e-15);
      EXPECT_NEAR(h.m(p, r), mc(p, r), 1e-15);
    }
}

TEST(H11, FullBatchIsRankOne) {
  auto h = build_h11(4, 4);
  EXPECT_TRUE(h.m.isApprox(2.0 * Eigen::MatrixXd::Ones(4, 4), 1e-15));
  EXPECT_FALSE(h.positive_definite);
  EXPECT_LT(std::abs(min_eigenvalue(h.m)), 1e-12);
}

TEST(H11, FiveChooseTwoSpectrum) {
  auto s = h11_eigvals(5, 2);
  EXPECT_EQ(s.bracketed, (std::vector<double>{3, 3, 3, 3, 8}));
  EXPECT_DOUBLE_EQ(s.prefactor, 0.2);
  std::vector<double> expect{0.6, 0.6, 0.6, 0.6, 1.6};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(s.numeric[i], expect[i], 1e-12);
  EXPECT_LT(s.max_err_scaled, 1e-12);
  EXPECT_GT(s.max_err_unscaled, 1.0);
}

TEST(H11, InvalidArguments) {
  EXPECT_THROW(build_h11(3, 0), Error);
  EXPECT_THROW(build_h11(3, 4), Error);
}

TEST(G11, OrthonormalRowsKeepDiagonal) {
  Tensor V({3, 5});
  for (std::size_t i = 0; i < 3; ++i) V(i, i) = 1.0;
  auto g = build_g11(V, 3, 2);
  auto h = build_h11(3, 2);
  for (int p = 0; p < 3; ++p)
    for (int r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(g.m(p, r), p == r ? h.m(p, p) : 0.0);
}

TEST(G11, FullRankIsPositiveDefinite) {
  auto g = build_g11(gaussian(4, 6, 1), 4, 2);
  EXPECT_GT(min_eigenvalue(g.m), 0.0);
  EXPECT_TRUE(g.positive_definite);
}

TEST(G11, DuplicateRowsDegenerate) {
  auto V = gaussian(4, 6, 2);
  for (std::size_t j = 0; j < 6; ++j) V(2, j) = V(0, j);
  auto g = build_g11(V, 4, 2);
  EXPECT_FALSE(g.positive_definite);
  // Oppenheim: det(H11 ∘ VV^T) >= det(H11) prod ||v_n||^2, so a positive
  // definite H11 keeps the product nonsingular even for repeated rows.
  double prod = 1.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += V(n, j) * V(n, j);
    prod *= s;
  }
  EXPECT_GE(g.m.determinant(), build_h11(4, 2).m.determinant() * prod * (1 - 1e-12));
  EXPECT_GT(min_eigenvalue(g.m), 0.0);
  // With K = N the first factor is rank one and the duplicate shows up.
  EXPECT_NEAR(min_eigenvalue(build_g11(V, 4, 4).m), 0.0, 1e-12);
}

TEST(Bound, ZeroResidualsGiveZero) {
  BoundInputs in{3.0, 2.0, 5.0, 0.0, 0.0};
  EXPECT_EQ(recovery_bound(in, 6, 2), 0.0);
}

TEST(Bound, MonotoneInEveryInput) {
  BoundInputs base{1.5, 2.0, 0.5, 1e-3, 2e-3};
  double b0 = recovery_bound(base, 8, 2);
  EXPECT_NEAR(b0, 2.0 * 4.0 * (1.5 * 2.0 * 0.5 * 1e-3 + 2.0 * 2e-3), 1e-15);
  for (double BoundInputs::*f : {&BoundInputs::lambda_theta, &BoundInputs::lambda_v, &BoundInputs::lambda_star,
                                 &BoundInputs::phi1, &BoundInputs::phi2}) {
    auto in = base;
    in.*f *= 2.0;
    EXPECT_GT(recovery_bound(in, 8, 2), b0);
  }
  EXPECT_GT(recovery_bound(base, 8, 1), b0);
}

TEST(Bound, PseudoInverseNorm) {
  Tensor A({2, 3}, std::vector<double>{2, 0, 0, 0, 4, 0});
  EXPECT_NEAR(pinv_frobenius_sq(A), 0.25 + 0.0625, 1e-15);
}

TEST(Bound, ExactRecoveryHolds) {
  auto V = gaussian(4, 6, 3), H = gaussian(4, 2, 4);
  auto c = evaluate_bound(V, V, H, H, 2);
  EXPECT_EQ(c.measured, 0.0);
  EXPECT_EQ(c.inputs.phi1, 0.0);
  EXPECT_TRUE(c.holds);
}

TEST(MaskMean, CorrectedClosedFormMatchesEnumeration) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::size_t N = 3 + seed % 6;
    std::size_t K = 1 + seed % (N - 1);
    auto Vs = gaussian(N, 4, seed), V = gaussian(N, 4, seed + 50);
    double mean = f1_mask_mean(V, Vs, K);
    EXPECT_NEAR(mean, f1_mask_mean_closed_form(V, Vs, K), 1e-10 * std::max(1.0, mean)) << N << " " << K;
  }
}

TEST(MaskMean, FixedPointAndSingleSample) {
  auto V = gaussian(5, 3, 8);
  EXPECT_EQ(f1_mask_mean(V, V, 2), 0.0);
  EXPECT_EQ(f1_exact_identity_check(V, V, 5, 2), 0.0);
  // K = 1 has no cross terms, so the simple K/N form is exact there
  auto Vs = gaussian(5, 3, 9);
  EXPECT_LT(f1_exact_identity_check(V, Vs, 5, 1), 1e-12);
}

TEST(TheoryCsv, Header) {
  std::string path = ::testing::TempDir() + "theory_test.csv";
  write_theory_csv(path, {{4, 2, 0.5, 0.25, 1.0}});
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "N,K,min_eig_h11,min_eig_g11,bound_residual");
}

TEST(MaskMean, StatedFormMissesCrossTerms) {
  // mean - (K/N)||E||^2 = c (||sum e_n||^2 - ||E||^2), c = K(K-1)/(N(N-1))
  auto Vs = gaussian(5, 3, 10), V = gaussian(5, 3, 11);
  double c = 2.0 * 1.0 / (5.0 * 4.0);
  double e2 = 0.0, s2 = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t n = 0; n < 5; ++n) {
      double e = V(n, j) - Vs(n, j);
      e2 += e * e;
      s += e;
    }
    s2 += s * s;
  }
  EXPECT_NEAR(f1_exact_identity_check(V, Vs, 5, 2), std::abs(c * (s2 - e2)), 1e-12);
}
