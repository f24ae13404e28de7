#include "cafe/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace cafe {

double DPConfig::noise_sigma() const {
  require(clip_norm > 0.0 && epsilon > 0.0 && delta > 0.0 && delta < 1.0, ErrorCode::invalid_argument,
          "DP needs clip_norm > 0, epsilon > 0 and 0 < delta < 1");
  return clip_norm * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

FakePool gen_fake_pool(const std::vector<std::size_t>& sizes, std::size_t nu, double sigma2, Rng& rng) {
  require(nu >= 1, ErrorCode::invalid_argument, "pool size nu must be >= 1");
  require(sigma2 >= 0.0, ErrorCode::invalid_argument, "sigma2 must be non-negative");
  double sd = std::sqrt(sigma2);
  FakePool pool(nu);
  for (auto& member : pool)
    for (auto n : sizes) {
      std::vector<double> v(n);
      for (auto& e : v) e = std::abs(sd * rng.normal());
      std::sort(v.begin(), v.end(), std::greater<>());
      member.push_back(std::move(v));
    }
  return pool;
}

namespace {
std::vector<std::size_t> magnitude_order(const Tensor& t) {
  std::vector<std::size_t> z(t.size());
  std::iota(z.begin(), z.end(), 0);
  std::stable_sort(z.begin(), z.end(), [&](std::size_t a, std::size_t b) { return std::abs(t[a]) > std::abs(t[b]); });
  return z;
}
}  // namespace

std::vector<double> sorted_magnitudes(const Tensor& t) {
  std::vector<double> m(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) m[i] = std::abs(t[i]);
  std::sort(m.begin(), m.end(), std::greater<>());
  return m;
}

Tensor project_onto(const Tensor& true_grad, const std::vector<double>& psi) {
  require(psi.size() == true_grad.size(), ErrorCode::dimension, "pool member does not match tensor size");
  auto zeta = magnitude_order(true_grad);
  Tensor g(true_grad.shape());
  for (std::size_t r = 0; r < zeta.size(); ++r) {
    std::size_t k = zeta[r];
    g[k] = std::min(psi[r], std::max(true_grad[k], -psi[r]));
  }
  return g;
}

double member_distance(const TensorList<double>& true_grads, const FakeMember& m) {
  require(m.size() == true_grads.size(), ErrorCode::dimension, "pool member does not match tensor count");
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto mag = sorted_magnitudes(true_grads[i]);
    require(mag.size() == m[i].size(), ErrorCode::dimension, "pool member does not match tensor size");
    for (std::size_t k = 0; k < mag.size(); ++k) s += (m[i][k] - mag[k]) * (m[i][k] - mag[k]);
  }
  return std::sqrt(s);
}

Projection fake_project(const TensorList<double>& true_grads, FakePool& pool, const DefenseConfig& cfg, Rng& rng) {
  require(cfg.tau > 0.0, ErrorCode::invalid_argument, "tau must be positive");
  std::vector<std::size_t> sizes;
  for (const auto& t : true_grads) sizes.push_back(t.size());
  if (pool.empty()) pool = gen_fake_pool(sizes, cfg.nu, cfg.sigma2, rng);
  Projection p;
  double best_seen = std::numeric_limits<double>::infinity();
  while (true) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < pool.size(); ++j) {
      double d = member_distance(true_grads, pool[j]);
      if (d < best) {
        best = d;
        p.member = j;
      }
    }
    best_seen = std::min(best_seen, best);
    if (best <= cfg.tau) {
      p.distance = best;
      break;
    }
    if (p.regenerations >= cfg.max_regenerations) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "no fake gradient within tau = %.6g after %zu regenerations (best distance %.6g); raise tau",
                    cfg.tau, p.regenerations, best_seen);
      fail(ErrorCode::defense_exhausted, buf);
    }
    pool = gen_fake_pool(sizes, cfg.nu, cfg.sigma2, rng);
    ++p.regenerations;
  }
  for (std::size_t i = 0; i < true_grads.size(); ++i) p.grads.push_back(project_onto(true_grads[i], pool[p.member][i]));
  return p;
}

TensorList<double> dp_perturb(const TensorList<double>& true_grads, const DPConfig& dp, Rng& rng) {
  double sigma = dp.noise_sigma();
  double norm = 0.0;
  for (const auto& t : true_grads) norm += sum_sq(t);
  norm = std::sqrt(norm);
  double scale = norm > dp.clip_norm ? dp.clip_norm / norm : 1.0;
  TensorList<double> out;
  for (const auto& t : true_grads) {
    Tensor o(t.shape());
    for (std::size_t k = 0; k < t.size(); ++k) o[k] = t[k] * scale + sigma * rng.normal();
    out.push_back(std::move(o));
  }
  return out;
}

Tensor dp_perturb(const Tensor& true_grad, const DPConfig& dp, Rng& rng) {
  return dp_perturb(TensorList<double>{true_grad}, dp, rng).front();
}

void write_audit(const std::string& path, const std::vector<AuditRow>& rows) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCode::io, "cannot open audit file '" + path + "'");
  f << "round,tensor_id,true_norm,fake_norm,l2_gap,regenerations\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9e,%.9e,%.9e,%zu\n", r.round, r.tensor_id.c_str(), r.true_norm,
                  r.fake_norm, r.l2_gap, r.regenerations);
    f << buf;
  }
  require(static_cast<bool>(f), ErrorCode::io, "write failed for '" + path + "'");
}

DefenseKind parse_defense(const std::string& s) {
  if (s == "none") return DefenseKind::none;
  if (s == "fake") return DefenseKind::fake;
  if (s == "dp") return DefenseKind::dp;
  fail(ErrorCode::config, "unknown defense '" + s + "' (expected none|fake|dp)");
}

std::string defense_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "none";
    case DefenseKind::fake: return "fake";
    case DefenseKind::dp: return "dp";
  }
  return "?";
}

void install_defense(Simulator& sim, const DefenseSpec& spec, std::uint64_t seed,
                     std::shared_ptr<std::vector<AuditRow>> audit) {
  if (spec.kind == DefenseKind::none) {
    sim.set_upload_filter({});
    return;
  }
  std::vector<std::string> ids;
  for (const auto& p : sim.params().arch.params()) ids.push_back(p.id);
  std::size_t M = sim.data().M();
  auto rngs = std::make_shared<std::vector<Rng>>();
  for (std::size_t m = 0; m < M; ++m) rngs->emplace_back(seed, "defense/worker" + std::to_string(m));

  if (spec.kind == DefenseKind::dp) {
    DPConfig dp = spec.dp;
    dp.noise_sigma();
    sim.set_upload_filter([dp, rngs](std::size_t m, std::size_t, const std::vector<std::size_t>&,
                                     TensorList<double> g) { return dp_perturb(g, dp, (*rngs)[m]); });
    return;
  }
  DefenseConfig cfg = spec.fake;
  require(cfg.nu >= 1 && cfg.sigma2 > 0.0 && cfg.tau > 0.0, ErrorCode::invalid_argument,
          "fake gradients need nu >= 1, sigma2 > 0 and tau > 0");
  sim.set_upload_filter([cfg, rngs, ids, audit](std::size_t m, std::size_t round, const std::vector<std::size_t>& idx,
                                                TensorList<double> g) {
    FakePool pool;
    auto p = fake_project(g, pool, cfg, (*rngs)[m]);
    if (audit)
      for (std::size_t j = 0; j < g.size(); ++j) {
        double gap = 0.0;
        for (std::size_t k = 0; k < g[j].size(); ++k) gap += (p.grads[j][k] - g[j][k]) * (p.grads[j][k] - g[j][k]);
        audit->push_back({round, ids[idx[j]], std::sqrt(sum_sq(g[j])), std::sqrt(sum_sq(p.grads[j])),
                          std::sqrt(gap), p.regenerations});
      }
    return std::move(p.grads);
  });
}

RoundResult defended_round(Simulator& sim) { return sim.step(); }

}  // namespace cafe
