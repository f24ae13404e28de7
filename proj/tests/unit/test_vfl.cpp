#include <gtest/gtest.h>

#include <set>

#include "cafe/vfl.hpp"
#include "toy.hpp"

using namespace cafe;

namespace {

Dataset ramp(std::size_t N, std::size_t h, std::size_t w) {
  Dataset d;
  d.image = {1, h, w};
  d.classes = 2;
  d.x = Tensor({N, h * w});
  for (std::size_t i = 0; i < d.x.size(); ++i) d.x[i] = static_cast<double>(i);
  d.y.assign(N, 0);
  return d;
}

}  // namespace

TEST(Partition, SingleWorkerHoldsEverything) {
  auto p = partition_dataset(ramp(2, 2, 3), 1, PartitionScheme::even);
  ASSERT_EQ(p.M(), 1u);
  EXPECT_EQ(p.slices[0].index, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(Partition, EvenRanges) {
  Dataset d = ramp(1, 1, 4);
  auto p = partition_dataset(d, 2, PartitionScheme::even);
  EXPECT_EQ(p.slices[0].index, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(p.slices[1].index, (std::vector<std::size_t>{2, 3}));
}

TEST(Partition, QuadrantReassembly) {
  Dataset d = ramp(3, 8, 8);
  auto p = partition_dataset(d, 4, PartitionScheme::quadrant);
  for (const auto& s : p.slices) EXPECT_EQ(s.layout, (Shape3{1, 4, 4}));
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor back({64}, -1.0);
    for (std::size_t m = 0; m < 4; ++m) {
      auto f = p.worker_features(m, n);
      for (std::size_t i = 0; i < f.size(); ++i) back[p.slices[m].index[i]] = f[i];
    }
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(back[i], d.x(n, i));
  }
}

TEST(Partition, TooManyWorkers) {
  EXPECT_THROW(partition_dataset(ramp(1, 1, 3), 4, PartitionScheme::even), Error);
  EXPECT_THROW(partition_dataset(ramp(1, 4, 4), 2, PartitionScheme::quadrant), Error);
}

TEST(Mask, FullBatchIsAllOnes) {
  Rng rng(1, "t");
  auto m = sample_batch_mask(5, 5, rng);
  for (auto b : m.bits) EXPECT_EQ(b, 1);
}

TEST(Mask, UnitVectorFrequencies) {
  Rng rng(7, "freq");
  std::size_t hits[3] = {0, 0, 0};
  const std::size_t draws = 30000;
  for (std::size_t i = 0; i < draws; ++i) {
    auto m = sample_batch_mask(3, 1, rng);
    ASSERT_EQ(m.indices().size(), 1u);
    ++hits[m.indices()[0]];
  }
  for (auto h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 1.0 / 3.0, 0.02);
}

TEST(Mask, Deterministic) {
  Rng a(42), b(42);
  EXPECT_EQ(sample_batch_mask(6, 2, a).bits, sample_batch_mask(6, 2, b).bits);
}

TEST(Mask, InvalidK) {
  Rng rng(1);
  EXPECT_THROW(sample_batch_mask(3, 0, rng), Error);
  EXPECT_THROW(sample_batch_mask(3, 4, rng), Error);
}

TEST(Enumerate, Counts) {
  EXPECT_EQ(enumerate_masks(4, 2).size(), 6u);
  auto one = enumerate_masks(3, 3);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].str(), "111");
}

TEST(Enumerate, BruteForceSixChooseTwo) {
  auto masks = enumerate_masks(6, 2);
  ASSERT_EQ(masks.size(), 15u);
  std::set<std::string> seen;
  for (const auto& m : masks) {
    std::size_t pop = 0;
    for (auto b : m.bits) pop += b;
    EXPECT_EQ(pop, 2u);
    seen.insert(m.str());
  }
  EXPECT_EQ(seen.size(), 15u);
  std::set<std::string> brute;
  for (unsigned v = 0; v < 64; ++v)
    if (__builtin_popcount(v) == 2) {
      std::string s;
      for (int i = 0; i < 6; ++i) s += (v >> i & 1) ? '1' : '0';
      brute.insert(s);
    }
  EXPECT_EQ(seen, brute);
}

TEST(Enumerate, CapIsEnforced) {
  try {
    enumerate_masks(40, 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::enumeration_cap);
  }
}

TEST(Round, ZeroLearningRateKeepsParameters) {
  auto toy = fixture::make_toy(2);
  TrainConfig cfg;
  cfg.K = 2;
  cfg.train = true;
  cfg.optimizer.lr = 0.0;
  Simulator sim(toy.data, toy.params, cfg);
  auto r = sim.step();
  EXPECT_GT(report_sq_norm(r.report), 0.0);
  for (std::size_t i = 0; i < toy.params.tensors.size(); ++i)
    EXPECT_EQ(sim.params().tensors[i].data(), toy.params.tensors[i].data());
}

TEST(Round, AggregationIsPartitionInvariant) {
  // Identity extractors make M = 1 and M = 2 the same function.
  Dataset d = ramp(4, 2, 4);
  for (auto& v : d.x.data()) v /= 32.0;
  d.y = {0, 1, 1, 0};
  auto build = [&](std::size_t M) {
    auto pd = partition_dataset(d, M, PartitionScheme::even);
    auto arch = identity_architecture(8, pd.slices, 3, {LayerSpec::relu(), LayerSpec::dense(2)});
    return std::make_pair(pd, init_params(arch, 5));
  };
  auto [p1, m1] = build(1);
  auto [p2, m2] = build(2);
  TrainConfig cfg;
  cfg.K = 2;
  auto mask = BatchMask::from_indices(4, {1, 3});
  auto r1 = run_round(m1, p1, mask, cfg);
  auto r2 = run_round(m2, p2, mask, cfg);
  ASSERT_EQ(r1.report.ids, r2.report.ids);
  for (std::size_t i = 0; i < r1.report.size(); ++i)
    EXPECT_LT(max_abs_diff(r1.report.tensors[i], r2.report.tensors[i]), 1e-15);
}

TEST(Round, SgdStep) {
  auto toy = fixture::make_toy(3);
  Optimizer opt({OptimizerKind::sgd, 0.25});
  auto before = toy.params;
  auto g = zero_report(toy.params);
  g.tensors[0][0] = 2.0;
  opt.step(toy.params, g);
  EXPECT_DOUBLE_EQ(toy.params.tensors[0][0], before.tensors[0][0] - 0.5);
  EXPECT_EQ(toy.params.tensors[1].data(), before.tensors[1].data());
}

TEST(Round, AdamFirstStepIsLr) {
  auto toy = fixture::make_toy(3);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.lr = 0.01;
  Optimizer opt(oc);
  double before = toy.params.tensors[0][0];
  auto g = zero_report(toy.params);
  g.tensors[0][0] = -3.0;
  opt.step(toy.params, g);
  EXPECT_NEAR(toy.params.tensors[0][0], before + 0.01, 1e-9);
}

TEST(Round, UploadFilterSeesOwnedTensors) {
  auto toy = fixture::make_toy(4);
  TrainConfig cfg;
  cfg.K = 2;
  Simulator sim(toy.data, toy.params, cfg);
  std::vector<std::size_t> seen(toy.params.tensors.size(), 0);
  sim.set_upload_filter([&](std::size_t w, std::size_t, const std::vector<std::size_t>& idx, TensorList<double> g) {
    for (auto i : idx) {
      ++seen[i];
      EXPECT_EQ(toy.params.arch.params()[i].owner, w);
    }
    return g;
  });
  sim.step();
  for (auto s : seen) EXPECT_EQ(s, 1u);
}

TEST(Round, TrueVRowsSumToBiasGradient) {
  auto toy = fixture::make_toy(8);
  TrainConfig cfg;
  cfg.K = 3;
  Simulator sim(toy.data, toy.params, cfg);
  auto V = sim.true_v();
  auto mask = BatchMask::from_indices(6, {0, 2, 5});
  auto r = sim.step_with(mask);
  const auto& gb = r.report.at("fc1.bias");
  for (std::size_t j = 0; j < gb.size(); ++j)
    EXPECT_NEAR(gb[j], V(0, j) + V(2, j) + V(5, j), 1e-14);
}
