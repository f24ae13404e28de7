#include <benchmark/benchmark.h>

#include "cafe/attack.hpp"
#include "cafe/defense.hpp"
#include "cafe/experiment.hpp"
#include "cafe/theory.hpp"

using namespace cafe;

namespace {

// desk-cafe sized instance, shared by the benchmarks below
struct Desk {
  ExperimentConfig cfg;
  Simulator sim;
  BatchMask mask;
  RoundResult round;

  Desk()
      : cfg(make_config(KvConfig::parse(preset_text("desk-cafe"), "desk-cafe"))),
        sim(make_simulator(cfg, false)),
        mask(BatchMask::from_indices(sim.data().N(), {0, 3, 7, 12})),
        round(sim.step_with(mask)) {}
};

Desk& desk() {
  static Desk d;
  return d;
}

LabeledBatch desk_batch() { return assemble_batch(desk().sim.data().data, desk().mask); }

void BM_ForwardBackward(benchmark::State& st) {
  auto batch = desk_batch();
  const auto& p = desk().sim.params();
  for (auto _ : st) benchmark::DoNotOptimize(backward_full(p, batch).loss);
}
BENCHMARK(BM_ForwardBackward);

void BM_ForwardBackwardDual(benchmark::State& st) {
  auto batch = desk_batch();
  const auto& p = desk().sim.params();
  auto targets = batch_targets(batch, p.arch.classes());
  TensorList<Dual> dp;
  for (const auto& t : p.tensors) {
    BasicTensor<Dual> d(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) d[i] = Dual(t[i], 0.0);
    dp.push_back(d);
  }
  BasicTensor<Dual> dx(batch.inputs.shape()), dt(targets.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = Dual(batch.inputs[i], i == 0 ? 1.0 : 0.0);
  for (std::size_t i = 0; i < dt.size(); ++i) dt[i] = Dual(targets[i], 0.0);
  for (auto _ : st) benchmark::DoNotOptimize(forward_backward<Dual>(p.arch, dp, dx, dt).loss.v);
}
BENCHMARK(BM_ForwardBackwardDual);

void BM_Step1Update(benchmark::State& st) {
  auto& d = desk();
  auto state = init_attack_state(d.sim.data().N(), d.sim.params().arch.d1(), d.sim.params().arch.d2(),
                                 d.sim.data().data.x.cols(), d.sim.params().arch.classes(), 1);
  const auto& gb = d.round.report.at("fc1.bias");
  for (auto _ : st) benchmark::DoNotOptimize(step1_update(state.V, d.mask, gb, 1e-3));
}
BENCHMARK(BM_Step1Update);

void BM_Step2Update(benchmark::State& st) {
  auto& d = desk();
  auto state = init_attack_state(d.sim.data().N(), d.sim.params().arch.d1(), d.sim.params().arch.d2(),
                                 d.sim.data().data.x.cols(), d.sim.params().arch.classes(), 1);
  auto V = d.sim.true_v();
  const auto& gw = d.round.report.at("fc1.weight");
  for (auto _ : st) benchmark::DoNotOptimize(step2_update(state.H, V, d.mask, gw, 1e-3));
}
BENCHMARK(BM_Step2Update);

void BM_Step3Gradient(benchmark::State& st) {
  auto& d = desk();
  const auto& data = d.sim.data().data;
  auto state = init_attack_state(d.sim.data().N(), d.sim.params().arch.d1(), d.sim.params().arch.d2(), data.x.cols(),
                                 d.sim.params().arch.classes(), 1);
  auto idx = d.mask.indices();
  Tensor x = gather_rows(state.X, idx), l = gather_rows(state.logits, idx);
  Tensor h = gather_rows(d.sim.true_representation(), idx);
  double xi = d.cfg.hyper.xi_per_image * static_cast<double>(idx.size());
  for (auto _ : st)
    benchmark::DoNotOptimize(
        step3_gradient(d.sim.params(), x, l, h, d.round.report, d.cfg.hyper, data.image, xi).terms);
}
BENCHMARK(BM_Step3Gradient);

void BM_FakeProject(benchmark::State& st) {
  auto& d = desk();
  DefenseConfig cfg;
  cfg.tau = 4.0;
  Rng rng(1, "bench/fake");
  std::vector<std::size_t> sizes;
  for (const auto& t : d.round.report.tensors) sizes.push_back(t.size());
  auto pool = gen_fake_pool(sizes, cfg.nu, cfg.sigma2, rng);
  for (auto _ : st) benchmark::DoNotOptimize(fake_project(d.round.report.tensors, pool, cfg, rng).distance);
}
BENCHMARK(BM_FakeProject);

void BM_H11Eigvals(benchmark::State& st) {
  auto N = static_cast<std::size_t>(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(h11_eigvals(N, N / 2).max_err_scaled);
}
BENCHMARK(BM_H11Eigvals)->Arg(8)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
