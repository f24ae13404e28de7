#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cafe/rng.hpp"
#include "cafe/vfl.hpp"

namespace cafe {

struct DefenseConfig {
  std::size_t nu = 16;
  double sigma2 = 1e-4;
  double tau = 2.0;
  std::size_t max_regenerations = 50;
};

struct DPConfig {
  double clip_norm = 3.0;
  double epsilon = 1.0;
  double delta = 1e-5;
  // Gaussian mechanism: clip * sqrt(2 ln(1.25/delta)) / epsilon.
  double noise_sigma() const;
};

// One pool member: per tensor, |N(0, sigma2)| draws sorted descending.
using FakeMember = std::vector<std::vector<double>>;
using FakePool = std::vector<FakeMember>;

FakePool gen_fake_pool(const std::vector<std::size_t>& sizes, std::size_t nu, double sigma2, Rng& rng);

// Position k of the true tensor is paired with the rank of |true[k]|
// in descending order, then clamped to [-psi, psi].
Tensor project_onto(const Tensor& true_grad, const std::vector<double>& psi);
std::vector<double> sorted_magnitudes(const Tensor& t);
double member_distance(const TensorList<double>& true_grads, const FakeMember& m);

struct Projection {
  TensorList<double> grads;
  double distance = 0.0;          // accepted ||psi - sorted|true|||_2 over the concatenation
  std::size_t regenerations = 0;
  std::size_t member = 0;
};

// Regenerates `pool` while no member is within tau.
Projection fake_project(const TensorList<double>& true_grads, FakePool& pool, const DefenseConfig& cfg, Rng& rng);

TensorList<double> dp_perturb(const TensorList<double>& true_grads, const DPConfig& dp, Rng& rng);
Tensor dp_perturb(const Tensor& true_grad, const DPConfig& dp, Rng& rng);

struct AuditRow {
  std::size_t round = 0;
  std::string tensor_id;
  double true_norm = 0.0;
  double fake_norm = 0.0;
  double l2_gap = 0.0;
  std::size_t regenerations = 0;
};

void write_audit(const std::string& path, const std::vector<AuditRow>& rows);

enum class DefenseKind { none, fake, dp };
DefenseKind parse_defense(const std::string& s);
std::string defense_name(DefenseKind k);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::none;
  DefenseConfig fake;
  DPConfig dp;
};

// Installs the defense as the simulator's per-worker upload filter, so the
// server-visible report of every later round is defended.
void install_defense(Simulator& sim, const DefenseSpec& spec, std::uint64_t seed,
                     std::shared_ptr<std::vector<AuditRow>> audit = nullptr);
RoundResult defended_round(Simulator& sim);

}  // namespace cafe
