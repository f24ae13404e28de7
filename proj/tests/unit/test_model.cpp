#include <gtest/gtest.h>

#include <cmath>

#include "cafe/model.hpp"
#include "cafe/vfl.hpp"
#include "toy.hpp"

using namespace cafe;

namespace {

FeatureSlice whole(std::size_t D, Shape3 layout) {
  FeatureSlice s;
  for (std::size_t i = 0; i < D; ++i) s.index.push_back(i);
  s.layout = layout;
  return s;
}

LabeledBatch batch_of(const Tensor& x, std::vector<int> y) { return {x, std::move(y), {}}; }

}  // namespace

TEST(Extractor, IdentityPassesInputThrough) {
  auto arch = identity_architecture(6, {whole(6, {1, 2, 3})}, 3, {LayerSpec::relu(), LayerSpec::dense(2)});
  auto p = init_params(arch, 3);
  Tensor x({2, 6});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
  auto h = forward_representation(p, x);
  EXPECT_EQ(max_abs_diff(h, x), 0.0);
}

TEST(Extractor, ZeroDenseGivesZero) {
  Architecture arch(4, {whole(4, {1, 1, 4})}, {{LayerSpec::dense(3)}}, 2, {LayerSpec::dense(2)});
  auto p = init_params(arch, 1);
  p.at("ext0.l0.weight").fill(0.0);
  p.at("ext0.l0.bias").fill(0.0);
  Tensor x({1, 4}, std::vector<double>{0.3, -2, 5, 1});
  auto h = forward_representation(p, x);
  EXPECT_EQ(max_abs(h), 0.0);
}

TEST(Extractor, HandConvolution) {
  Architecture arch(4, {whole(4, {1, 2, 2})}, {{LayerSpec::conv2d(1, 2, 1, 0)}}, 1, {LayerSpec::dense(2)});
  EXPECT_EQ(arch.d1(), 1u);
  auto p = init_params(arch, 1);
  p.at("ext0.l0.weight").fill(1.0);
  p.at("ext0.l0.bias").fill(0.0);
  Tensor x({1, 4}, 1.0);
  auto h = forward_representation(p, x);
  EXPECT_DOUBLE_EQ(h[0], 4.0);
}

TEST(Extractor, ShapeMismatchIsDimensionError) {
  auto arch = identity_architecture(4, {whole(4, {1, 2, 2})}, 2, {LayerSpec::dense(2)});
  auto p = init_params(arch, 1);
  Tensor bad({1, 5});
  try {
    forward_representation(p, bad);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(FirstFc, Examples) {
  auto arch = identity_architecture(2, {whole(2, {1, 1, 2})}, 2, {LayerSpec::dense(2)});
  auto p = init_params(arch, 1);
  Tensor h({1, 2}, std::vector<double>{1, 1});

  p.at("fc1.weight").fill(0.0);
  p.at("fc1.bias").fill(0.0);
  EXPECT_EQ(max_abs(forward_first_fc(p, h)), 0.0);

  auto& W = p.at("fc1.weight");
  W(0, 0) = 1;
  W(1, 1) = 1;
  Tensor h2({1, 2}, std::vector<double>{0.7, -0.2});
  EXPECT_EQ(max_abs_diff(forward_first_fc(p, h2), h2), 0.0);

  // Θ₁ = [[1,0],[0,2]], b₁ = [0.5,-0.5]; the weight is stored (in, out).
  W(1, 1) = 2;
  p.at("fc1.bias") = Tensor({2}, std::vector<double>{0.5, -0.5});
  auto u = forward_first_fc(p, h);
  EXPECT_DOUBLE_EQ(u[0], 1.5);
  EXPECT_DOUBLE_EQ(u[1], 1.5);
}

TEST(Loss, UniformLogitsGiveLogC) {
  auto arch = identity_architecture(4, {whole(4, {1, 2, 2})}, 3, {LayerSpec::relu(), LayerSpec::dense(5)});
  auto p = init_params(arch, 2);
  for (auto& t : p.tensors) t.fill(0.0);
  Tensor x({3, 4}, 0.5);
  EXPECT_NEAR(loss_batch(p, batch_of(x, {0, 3, 4})), std::log(5.0), 1e-14);
}

TEST(Loss, FullMaskEqualsDatasetLoss) {
  auto toy = fixture::make_toy(4);
  TrainConfig cfg;
  cfg.K = toy.data.N();
  Simulator sim(toy.data, toy.params, cfg);
  BatchMask all = BatchMask::from_indices(toy.data.N(), {0, 1, 2, 3, 4, 5});
  auto r = sim.step_with(all);
  EXPECT_NEAR(r.loss, sim.full_loss(), 1e-14);
}

TEST(Loss, TwoClassReferenceForward) {
  // identity extractor, d2 = 2, sigmoid, head 2x2; computed by hand below
  auto arch = identity_architecture(2, {whole(2, {1, 1, 2})}, 2, {LayerSpec::sigmoid(), LayerSpec::dense(2)});
  auto p = init_params(arch, 1);
  p.at("fc1.weight") = Tensor({2, 2}, std::vector<double>{0.5, -1.0, 2.0, 0.25});
  p.at("fc1.bias") = Tensor({2}, std::vector<double>{0.1, -0.3});
  p.at("head.l1.weight") = Tensor({2, 2}, std::vector<double>{1.0, -2.0, 0.5, 0.75});
  p.at("head.l1.bias") = Tensor({2}, std::vector<double>{0.0, 0.2});
  Tensor x({1, 2}, std::vector<double>{0.4, 0.9});
  double u0 = 0.4 * 0.5 + 0.9 * 2.0 + 0.1;
  double u1 = 0.4 * -1.0 + 0.9 * 0.25 - 0.3;
  double a0 = 1 / (1 + std::exp(-u0)), a1 = 1 / (1 + std::exp(-u1));
  double z0 = a0 * 1.0 + a1 * 0.5, z1 = a0 * -2.0 + a1 * 0.75 + 0.2;
  double expect = std::log(std::exp(z0) + std::exp(z1)) - z1;
  EXPECT_NEAR(loss_batch(p, batch_of(x, {1})), expect, 1e-14);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto toy = fixture::make_toy(seed);
    auto batch = assemble_batch(toy.data.data, BatchMask::from_indices(6, {1, 2, 4}));
    EXPECT_LT(fixture::finite_difference_error(toy.params, batch), 1e-4) << "seed " << seed;
  }
}

TEST(Backward, ConvMatchesFiniteDifferences) {
  auto toy = fixture::make_toy(9, 5, 4, 2, 4, 3, true);
  auto batch = assemble_batch(toy.data.data, BatchMask::from_indices(5, {0, 3}));
  EXPECT_LT(fixture::finite_difference_error(toy.params, batch), 1e-4);
}

TEST(Backward, DuplicatedSampleMatchesSingle) {
  auto toy = fixture::make_toy(5);
  auto one = assemble_batch(toy.data.data, BatchMask::from_indices(6, {2}));
  LabeledBatch dup;
  dup.inputs = gather_rows(toy.data.data.x, {2, 2, 2, 2});
  dup.labels.assign(4, toy.data.data.y[2]);
  auto a = backward_full(toy.params, one);
  auto b = backward_full(toy.params, dup);
  for (std::size_t i = 0; i < a.grads.size(); ++i)
    EXPECT_LT(max_abs_diff(a.grads.tensors[i], b.grads.tensors[i]), 1e-14) << a.grads.ids[i];
}

TEST(Backward, BiasGradientIsSumOfRows) {
  auto toy = fixture::make_toy(6);
  auto batch = assemble_batch(toy.data.data, BatchMask::from_indices(6, {0, 1, 5}));
  auto bw = backward_full(toy.params, batch);
  const auto& gb = bw.grads.at("fc1.bias");
  for (std::size_t j = 0; j < gb.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += bw.du(k, j);
    EXPECT_NEAR(gb[j], s, 1e-15);
  }
}

TEST(Backward, DualPassAgreesWithDouble) {
  auto toy = fixture::make_toy(7);
  auto batch = assemble_batch(toy.data.data, BatchMask::from_indices(6, {0, 2}));
  auto targets = batch_targets(batch, 3);
  auto plain = forward_backward<double>(toy.params.arch, toy.params.tensors, batch.inputs, targets);
  TensorList<Dual> dp;
  for (const auto& t : toy.params.tensors) {
    BasicTensor<Dual> d(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) d[i] = Dual(t[i], 0.0);
    dp.push_back(d);
  }
  BasicTensor<Dual> dx(batch.inputs.shape()), dt(targets.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = Dual(batch.inputs[i], 0.0);
  for (std::size_t i = 0; i < dt.size(); ++i) dt[i] = Dual(targets[i], 0.0);
  auto dual = forward_backward<Dual>(toy.params.arch, dp, dx, dt);
  EXPECT_NEAR(dual.loss.v, plain.loss, 1e-15);
  for (std::size_t i = 0; i < plain.grads.size(); ++i)
    for (std::size_t k = 0; k < plain.grads[i].size(); ++k) EXPECT_NEAR(dual.grads[i][k].v, plain.grads[i][k], 1e-15);
}

TEST(Init, SeededAndBounded) {
  auto toy = fixture::make_toy(1);
  auto a = init_params(toy.params.arch, 11);
  auto b = init_params(toy.params.arch, 11);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].data(), b.tensors[i].data());
    double bound = 1.0 / std::sqrt(static_cast<double>(a.arch.params()[i].fan_in));
    EXPECT_LE(max_abs(a.tensors[i]), bound);
  }
}
