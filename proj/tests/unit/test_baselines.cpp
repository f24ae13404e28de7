#include <gtest/gtest.h>

#include <cmath>

#include "cafe/baselines.hpp"
#include "toy.hpp"

using namespace cafe;

namespace {

GradientReport report(std::vector<Tensor> ts) {
  GradientReport r;
  for (std::size_t i = 0; i < ts.size(); ++i) r.ids.push_back("t" + std::to_string(i));
  r.tensors = std::move(ts);
  return r;
}

GradientReport negate(GradientReport r) {
  for (auto& t : r.tensors)
    for (auto& v : t.data()) v = -v;
  return r;
}

const GradientReport kReal = report({Tensor({3}, std::vector<double>{1, -2, 0.5}), Tensor({2}, std::vector<double>{0.25, 4})});
const GradientReport kFake = report({Tensor({3}, std::vector<double>{0, 1, 1}), Tensor({2}, std::vector<double>{-1, 3})});

}  // namespace

TEST(Dlg, Examples) {
  EXPECT_EQ(dlg_objective(kReal, kReal), 0.0);
  auto zero = report({Tensor({3}), Tensor({2})});
  EXPECT_DOUBLE_EQ(dlg_objective(zero, kReal), 1 + 4 + 0.25 + 0.0625 + 16);
  EXPECT_DOUBLE_EQ(dlg_objective(kFake, kReal), 1 + 9 + 0.25 + 1.5625 + 1);
}

TEST(Dlg, MismatchedKeysRejected) {
  auto other = kFake;
  other.ids[1] = "zz";
  EXPECT_THROW(dlg_objective(other, kReal), Error);
}

TEST(Dlg, EqualsCafeGradientTermAtUnitAlpha) {
  auto toy = fixture::make_toy(3);
  auto mask = BatchMask::from_indices(6, {0, 3});
  TrainConfig cfg;
  cfg.K = 2;
  auto real = run_round(toy.params, toy.data, mask, cfg).report;
  Rng rng(5);
  Tensor x({2, 16}), logits({2, 3});
  for (auto& v : x.data()) v = rng.uniform();
  for (auto& v : logits.data()) v = rng.normal();
  LabeledBatch fake{x, {}, softmax_rows(logits)};
  auto fake_report = backward_full(toy.params, fake).grads;
  AttackHyper hp;
  hp.alpha = 1.0;
  hp.beta = hp.gamma = 0.0;
  auto t = step3_objective(toy.params, x, logits, Tensor({2, toy.params.arch.d1()}), real, hp, {1, 4, 4}, 0.0);
  EXPECT_NEAR(dlg_objective(fake_report, real), t.total, 1e-15 * std::max(1.0, t.total));
}

TEST(Cosine, Examples) {
  Tensor img({1, 4}, std::vector<double>{0, 1, 0, 1});
  Shape3 L{1, 2, 2};
  EXPECT_NEAR(cosine_objective(kReal, kReal, img, L, 0.1), 0.0 + 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(cosine_objective(negate(kReal), kReal, img, L, 0.1), 2.0 + 0.1 * 2.0, 1e-15);
  // hand cosine of two 3-vectors
  auto a = report({Tensor({3}, std::vector<double>{1, 2, 2})});
  auto b = report({Tensor({3}, std::vector<double>{2, 0, 1})});
  double expect = 1.0 - 4.0 / (3.0 * std::sqrt(5.0));
  EXPECT_NEAR(cosine_objective(b, a, Tensor({1, 4}), L, 0.0), expect, 1e-15);
}

TEST(Cosine, DirectionMatchesDifferences) {
  auto m = cosine_match(kFake.tensors, kReal.tensors);
  const double h = 1e-7;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < kFake.tensors[i].size(); ++k) {
      auto p = kFake.tensors, q = kFake.tensors;
      p[i][k] += h;
      q[i][k] -= h;
      double num = (cosine_match(p, kReal.tensors).value - cosine_match(q, kReal.tensors).value) / (2 * h);
      EXPECT_NEAR(num, m.direction[i][k], 1e-7);
    }
}

TEST(Sapag, Examples) {
  EXPECT_EQ(sapag_objective(kReal, kReal, 1.0), 0.0);
  // only the first tensor differs, with squared distance 2
  auto f = kReal;
  f.tensors[0][0] += 1.0;
  f.tensors[0][1] -= 1.0;
  EXPECT_NEAR(sapag_objective(f, kReal, 2.0), 1.0 - std::exp(-1.0), 1e-15);
}

TEST(Sapag, WideKernelsVanishMonotonically) {
  double prev = sapag_objective(kFake, kReal, 1.0);
  for (double w : {10.0, 1e2, 1e3, 1e4, 1e6, 1e9}) {
    double v = sapag_objective(kFake, kReal, w);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-7);
}

TEST(Sapag, NarrowKernelSaturates) {
  EXPECT_NEAR(sapag_objective(kFake, kReal, 1e-6), 2.0, 1e-12);
  auto m = sapag_match(kFake.tensors, kReal.tensors, 1e-6);
  EXPECT_EQ(max_abs(m.direction[0]), 0.0);
  EXPECT_THROW(sapag_objective(kFake, kReal, 0.0), Error);
}

TEST(Sapag, MedianWidth) {
  EXPECT_DOUBLE_EQ(sapag_median_width(kReal), 0.5 * (5.25 + 16.0625));
}

TEST(Baseline, SingleImageDlgRecovers) {
  auto toy = fixture::make_toy(21, 1, 4, 1, 12, 3);
  TrainConfig cfg;
  cfg.K = 1;
  Simulator sim(toy.data, toy.params, cfg);
  AttackHyper hp;
  hp.lr3 = 30;
  hp.T = 1500;
  auto res = run_baseline(sim, {BaselineKind::dlg}, hp, 1);
  EXPECT_GE(res.final_psnr, 25.0);
}

TEST(Baseline, Names) {
  for (auto k : {BaselineKind::dlg, BaselineKind::cosine, BaselineKind::sapag})
    EXPECT_EQ(parse_baseline(baseline_name(k)), k);
  EXPECT_THROW(parse_baseline("gradinv"), Error);
}
