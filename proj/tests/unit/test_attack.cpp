#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cafe/attack.hpp"
#include "toy.hpp"

using namespace cafe;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed, "rt");
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

Tensor mask_sum(const Tensor& V, const BatchMask& m) {
  Tensor g({V.cols()});
  for (auto n : m.indices())
    for (std::size_t j = 0; j < V.cols(); ++j) g[j] += V(n, j);
  return g;
}

Tensor mask_outer(const Tensor& H, const Tensor& V, const BatchMask& m) {
  Tensor G({H.cols(), V.cols()});
  for (auto n : m.indices())
    for (std::size_t a = 0; a < H.cols(); ++a)
      for (std::size_t b = 0; b < V.cols(); ++b) G(a, b) += H(n, a) * V(n, b);
  return G;
}

struct Observed {
  Tensor V, H;
  std::vector<MaskObservation> obs;
};

Observed observe_all(std::size_t N, std::size_t K, std::size_t d1, std::size_t d2, std::uint64_t seed) {
  Observed o{random_tensor({N, d2}, seed), random_tensor({N, d1}, seed + 100), {}};
  for (const auto& m : enumerate_masks(N, K)) o.obs.push_back({m, mask_sum(o.V, m), mask_outer(o.H, o.V, m)});
  return o;
}

}  // namespace

TEST(StepOne, ObjectiveExamples) {
  auto V = random_tensor({5, 3}, 1);
  for (const auto& m : enumerate_masks(5, 2)) EXPECT_NEAR(step1_objective(V, m, mask_sum(V, m)), 0.0, 1e-28);
  Tensor g({3}, std::vector<double>{1, -2, 0.5});
  EXPECT_DOUBLE_EQ(step1_objective(Tensor({5, 3}), BatchMask::from_indices(5, {1, 4}), g), 5.25);
}

TEST(StepOne, HandExpandedQuadratic) {
  // N = 3, K = 2, d2 = 1: F1 = (v0 + v2 - g)^2
  Tensor V({3, 1}, std::vector<double>{0.3, -1.1, 2.0});
  Tensor g({1}, std::vector<double>{0.7});
  auto m = BatchMask::from_indices(3, {0, 2});
  double v0 = 0.3, v2 = 2.0, gg = 0.7;
  double expanded = v0 * v0 + v2 * v2 + gg * gg + 2 * v0 * v2 - 2 * v0 * gg - 2 * v2 * gg;
  EXPECT_NEAR(step1_objective(V, m, g), expanded, 1e-14);
}

TEST(StepOne, UpdateTouchesOnlyMaskRows) {
  auto V = random_tensor({6, 4}, 2);
  auto before = V;
  auto m = BatchMask::from_indices(6, {1, 3});
  step1_update(V, m, random_tensor({4}, 3), 0.5);
  for (std::size_t n : {0u, 2u, 4u, 5u})
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(V(n, j), before(n, j));
  EXPECT_GT(max_abs_diff(V, before), 0.0);
}

TEST(StepOne, UpdateDecreasesObjective) {
  auto V = random_tensor({6, 4}, 4);
  auto m = BatchMask::from_indices(6, {0, 5});
  auto g = random_tensor({4}, 5);
  double f0 = step1_update(V, m, g, 0.5);
  EXPECT_LT(step1_objective(V, m, g), f0);
}

TEST(StepOne, RecoversAllRowsFromEveryMask) {
  auto o = observe_all(6, 2, 3, 4, 11);
  auto res = solve_step1(o.obs, 6, 4, 0.5, 4000, 1e-26, 1);
  EXPECT_LT(max_abs_diff(res.value, o.V), 1e-6);
}

TEST(StepOne, FullBatchIsDegenerate) {
  drain_warnings();
  EXPECT_TRUE(check_step1_degeneracy(4, 4));
  EXPECT_TRUE(has_warning("degenerate_batch"));
  drain_warnings();
  EXPECT_FALSE(check_step1_degeneracy(4, 2));
  EXPECT_FALSE(has_warning("degenerate_batch"));
}

TEST(StepTwo, ObjectiveExamples) {
  auto o = observe_all(4, 2, 3, 5, 6);
  for (const auto& ob : o.obs) EXPECT_NEAR(step2_objective(o.H, o.V, ob.mask, ob.grad_w1), 0.0, 1e-26);
  const auto& ob = o.obs[2];
  EXPECT_NEAR(step2_objective(Tensor({4, 3}), o.V, ob.mask, ob.grad_w1), sum_sq(ob.grad_w1), 1e-14);
}

TEST(StepTwo, StackedLeastSquaresOracle) {
  const std::size_t N = 4, d1 = 3, d2 = 8;
  auto o = observe_all(N, 2, d1, d2, 21);
  // Oracle: for each feature a, solve the stacked system sum_{n in s} H[n,a] V[n,:] = G_s[a,:].
  Eigen::MatrixXd A(o.obs.size() * d2, N);
  Eigen::MatrixXd B(o.obs.size() * d2, d1);
  for (std::size_t i = 0; i < o.obs.size(); ++i)
    for (std::size_t b = 0; b < d2; ++b) {
      for (std::size_t n = 0; n < N; ++n) A(i * d2 + b, n) = o.obs[i].mask.bits[n] ? o.V(n, b) : 0.0;
      for (std::size_t a = 0; a < d1; ++a) B(i * d2 + b, a) = o.obs[i].grad_w1(a, b);
    }
  Eigen::MatrixXd Hls = A.colPivHouseholderQr().solve(B);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t a = 0; a < d1; ++a) EXPECT_NEAR(Hls(n, a), o.H(n, a), 1e-8);
  auto res = solve_step2(o.obs, o.V, d1, 0.5, 4000, 1e-26, 1);
  EXPECT_LT(max_abs_diff(res.value, o.H), 1e-8);
}

TEST(StepTwo, HypothesisWarning) {
  drain_warnings();
  auto V = random_tensor({4, 8}, 3);
  EXPECT_TRUE(check_step2_hypothesis(V).ok);
  EXPECT_FALSE(has_warning("theorem2_hypothesis"));
  for (std::size_t j = 0; j < 8; ++j) V(3, j) = V(1, j);
  auto hc = check_step2_hypothesis(V);
  EXPECT_FALSE(hc.ok);
  EXPECT_EQ(hc.rank, 3u);
  EXPECT_TRUE(has_warning("theorem2_hypothesis"));
  EXPECT_FALSE(check_step2_hypothesis(random_tensor({6, 5}, 4), false).ok);
}

TEST(TotalVariation, Examples) {
  Shape3 L{1, 2, 2};
  Tensor flat({1, 4}, 0.37);
  EXPECT_EQ(tv_truncated(flat, L, 0.0), 0.0);
  EXPECT_EQ(tv_truncated(flat, L, 5.0), 0.0);
  Tensor img({1, 4}, std::vector<double>{0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(tv_norm(img, L), 2.0);
  EXPECT_DOUBLE_EQ(tv_truncated(img, L, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(tv_truncated(img, L, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(tv_truncated(img, L, 1.0), 2.0);
}

TEST(TotalVariation, GradientMatchesDifferences) {
  Shape3 L{1, 3, 4};
  auto x = random_tensor({2, 12}, 8);
  auto g = tv_gradient(x, L);
  const double h = 1e-7;
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    EXPECT_NEAR((tv_norm(xp, L) - tv_norm(xm, L)) / (2 * h), g[k], 1e-6);
  }
}

namespace {

struct StepThreeCase {
  fixture::Toy toy;
  BatchMask mask;
  GradientReport real;
  Tensor H, x, logits;
  Shape3 layout{1, 4, 4};
};

StepThreeCase step3_case(std::uint64_t seed) {
  StepThreeCase c{fixture::make_toy(seed), BatchMask::from_indices(6, {1, 4}), {}, {}, {}, {}};
  TrainConfig cfg;
  cfg.K = 2;
  auto r = run_round(c.toy.params, c.toy.data, c.mask, cfg);
  c.real = r.report;
  auto batch = assemble_batch(c.toy.data.data, c.mask);
  c.H = forward_representation(c.toy.params, batch.inputs);
  c.x = random_tensor({2, 16}, seed + 1, 0.3);
  for (auto& v : c.x.data()) v += 0.5;
  c.logits = random_tensor({2, 3}, seed + 2);
  return c;
}

}  // namespace

TEST(StepThree, ZeroWeightsGiveZero) {
  auto c = step3_case(1);
  AttackHyper hp;
  hp.alpha = hp.beta = hp.gamma = 0.0;
  EXPECT_EQ(step3_objective(c.toy.params, c.x, c.logits, c.H, c.real, hp, c.layout, 0.0).total, 0.0);
}

TEST(StepThree, RealBatchIsFixedPoint) {
  auto c = step3_case(2);
  auto batch = assemble_batch(c.toy.data.data, c.mask);
  Tensor logits({2, 3});
  for (std::size_t k = 0; k < 2; ++k) logits(k, batch.labels[k]) = 1000.0;
  AttackHyper hp;
  double xi = 0.5;
  auto t = step3_objective(c.toy.params, batch.inputs, logits, c.H, c.real, hp, c.layout, xi);
  EXPECT_NEAR(t.grad, 0.0, 1e-28);
  EXPECT_NEAR(t.rep, 0.0, 1e-28);
  EXPECT_NEAR(t.total, hp.beta * tv_truncated(batch.inputs, c.layout, xi), 1e-18);
}

TEST(StepThree, GradientMatchesFiniteDifferences) {
  auto c = step3_case(3);
  AttackHyper hp;
  hp.alpha = 1.0;
  hp.beta = 1e-3;
  hp.gamma = 0.5;
  auto g = step3_gradient(c.toy.params, c.x, c.logits, c.H, c.real, hp, c.layout, 0.0);
  auto f = [&](const Tensor& x, const Tensor& l) {
    return step3_objective(c.toy.params, x, l, c.H, c.real, hp, c.layout, 0.0).total;
  };
  const double h = 1e-6;
  double scale = std::max(max_abs(g.dx), 1e-8);
  for (std::size_t k = 0; k < c.x.size(); ++k) {
    auto xp = c.x, xm = c.x;
    xp[k] += h;
    xm[k] -= h;
    EXPECT_NEAR((f(xp, c.logits) - f(xm, c.logits)) / (2 * h), g.dx[k], 1e-5 * scale) << "x " << k;
  }
  double lscale = std::max(max_abs(g.dlogits), 1e-8);
  for (std::size_t k = 0; k < c.logits.size(); ++k) {
    auto lp = c.logits, lm = c.logits;
    lp[k] += h;
    lm[k] -= h;
    EXPECT_NEAR((f(c.x, lp) - f(c.x, lm)) / (2 * h), g.dlogits[k], 1e-5 * lscale) << "logit " << k;
  }
}

TEST(StepThree, MatchedGradientIsDirectional) {
  auto c = step3_case(4);
  TensorList<double> r;
  for (const auto& t : c.real.tensors) r.push_back(random_tensor(t.shape(), 9));
  auto m = matched_gradient(c.toy.params, c.x, c.logits, r);
  auto inner = [&](const Tensor& x) {
    auto targets = softmax_rows(c.logits);
    auto p = forward_backward<double>(c.toy.params.arch, c.toy.params.tensors, x, targets);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t k = 0; k < r[i].size(); ++k) s += p.grads[i][k] * r[i][k];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t k = 0; k < c.x.size(); k += 3) {
    auto xp = c.x, xm = c.x;
    xp[k] += h;
    xm[k] -= h;
    EXPECT_NEAR((inner(xp) - inner(xm)) / (2 * h), m.dx[k], 1e-6 * std::max(1.0, std::abs(m.dx[k])));
  }
}

TEST(Runner, InitStateIsSeeded) {
  auto a = init_attack_state(4, 3, 5, 16, 3, 9);
  auto b = init_attack_state(4, 3, 5, 16, 3, 9);
  EXPECT_EQ(a.X.data(), b.X.data());
  EXPECT_EQ(a.V.data(), b.V.data());
  EXPECT_EQ(max_abs(a.logits), 0.0);
  for (auto v : a.X.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Runner, SingleLoopImprovesAndStaysInRange) {
  auto toy = fixture::make_toy(12, 6, 4, 2, 12, 3);
  TrainConfig cfg;
  cfg.K = 2;
  Simulator sim(toy.data, toy.params, cfg);
  AttackHyper hp;
  hp.T = 300;
  hp.gated = false;
  auto res = run_single_loop(sim, hp, 1);
  EXPECT_EQ(res.iterations, 300u);
  EXPECT_EQ(res.trace.size(), 300u);
  for (auto v : res.state.X.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GT(res.final_psnr, res.trace.front().psnr);
}

TEST(Runner, NestedPhasesInOrder) {
  auto toy = fixture::make_toy(13, 6, 4, 2, 12, 3);
  TrainConfig cfg;
  cfg.K = 2;
  Simulator sim(toy.data, toy.params, cfg);
  AttackHyper hp;
  hp.T = 200;
  auto res = run_nested(sim, hp, {}, 1);
  EXPECT_GT(res.phase2_start, 0u);
  EXPECT_GT(res.phase3_start, res.phase2_start);
}
