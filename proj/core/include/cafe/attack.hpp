#pragma once

#include <string>
#include <vector>

#include "cafe/model.hpp"
#include "cafe/vfl.hpp"

namespace cafe {

struct AttackHyper {
  double alpha = 1e-2;
  double beta = 1e-5;
  double gamma = 1e-3;
  double xi_per_image = 12.0;  // TV threshold; the batch threshold is xi_per_image * K
  double lr1 = 0.5;            // relative to the per-mask Lipschitz constant of F1
  double lr2 = 0.5;            // relative to the per-mask Lipschitz constant of F2
  double lr3 = 300.0;
  std::size_t T = 5000;
  double switch1 = 1e-9;
  double switch2 = 5e-9;
  bool gated = true;           // single loop: enable steps II/III only after the switch thresholds
  std::size_t patience = 10;   // nested loop: consecutive rounds below phi before moving on
  std::size_t backtrack = 20;  // max step halvings in step III
  double psnr_target = 0.0;    // stop early once reached (0 disables)
  std::size_t trace_every = 1;
};

struct StopCriteria {
  double phi1 = 1e-9;
  double phi2 = 5e-9;
};

struct AttackState {
  Tensor V;       // N x d2
  Tensor H;       // N x d1
  Tensor X;       // N x D fake inputs in [0,1]
  Tensor logits;  // N x C fake label logits

  Tensor fake_labels() const { return softmax_rows(logits); }
};

// V, H, X uniform on [0,1) from the run seed, label logits zero.
AttackState init_attack_state(std::size_t N, std::size_t d1, std::size_t d2, std::size_t D, std::size_t C,
                              std::uint64_t seed);

struct TraceRow {
  std::size_t iter = 0;
  std::string phase;
  double f1 = 0.0, f2 = 0.0, f3_grad = 0.0, f3_tv = 0.0, f3_rep = 0.0;
  double psnr = 0.0;
};

void write_trace(const std::string& path, const std::vector<TraceRow>& rows);

// ---- Step I ----
double step1_objective(const Tensor& V, const BatchMask& mask, const Tensor& grad_b1);
// One normalized SGD step; returns the objective before the step.
double step1_update(Tensor& V, const BatchMask& mask, const Tensor& grad_b1, double lr1);

// ---- Step II ----
double step2_objective(const Tensor& H, const Tensor& V, const BatchMask& mask, const Tensor& grad_w1);
double step2_update(Tensor& H, const Tensor& V, const BatchMask& mask, const Tensor& grad_w1, double lr2);

struct HypothesisCheck {
  bool ok = true;
  std::size_t rank = 0;
  std::string reason;
};
// Unique step II recovery needs N < d2 and rank(V) = N. Emits a
// "theorem2_hypothesis" warning when violated.
HypothesisCheck check_step2_hypothesis(const Tensor& V, bool emit_warning = true);
// Emits a "degenerate_batch" warning for K = N.
bool check_step1_degeneracy(std::size_t N, std::size_t K, bool emit_warning = true);

struct MaskObservation {
  BatchMask mask;
  Tensor grad_b1;
  Tensor grad_w1;
};

// Cyclic SGD with diminishing steps over every observed mask.
struct SweepResult {
  Tensor value;
  std::size_t sweeps = 0;
  double max_objective = 0.0;
};
SweepResult solve_step1(const std::vector<MaskObservation>& obs, std::size_t N, std::size_t d2, double lr1,
                        std::size_t max_sweeps, double tol, std::uint64_t seed);
SweepResult solve_step2(const std::vector<MaskObservation>& obs, const Tensor& V, std::size_t d1, double lr2,
                        std::size_t max_sweeps, double tol, std::uint64_t seed);

// ---- Step III ----
double tv_norm(const Tensor& images, const Shape3& layout);
double tv_truncated(const Tensor& images, const Shape3& layout, double xi);
// Subgradient of the plain TV norm.
Tensor tv_gradient(const Tensor& images, const Shape3& layout);

struct Step3Terms {
  double grad = 0.0, tv = 0.0, rep = 0.0;
  double total = 0.0;
};

// Gradient-matching objectives over the uploaded report. `direction`
// receives d(value)/d(fake gradient) per tensor.
struct MatchValue {
  double value = 0.0;
  TensorList<double> direction;
};

double report_distance_sq(const TensorList<double>& a, const TensorList<double>& b);

struct FakeBatchGrad {
  Tensor dx;       // K x D
  Tensor dlogits;  // K x C
};

// d/dx and d/dlogits of <grad_theta L(fake), r>, via a dual-number pass.
FakeBatchGrad matched_gradient(const ModelParams& theta, const Tensor& x, const Tensor& logits,
                               const TensorList<double>& r);

Step3Terms step3_objective(const ModelParams& theta, const Tensor& x, const Tensor& logits, const Tensor& H_rows,
                           const GradientReport& real, const AttackHyper& hyper, const Shape3& layout,
                           double xi_batch);

struct Step3Gradient {
  Step3Terms terms;
  Tensor dx, dlogits;
};
Step3Gradient step3_gradient(const ModelParams& theta, const Tensor& x, const Tensor& logits, const Tensor& H_rows,
                             const GradientReport& real, const AttackHyper& hyper, const Shape3& layout,
                             double xi_batch);

struct AttackResult {
  AttackState state;
  std::vector<TraceRow> trace;
  std::size_t iterations = 0;    // rounds consumed
  std::size_t reached_at = 0;    // first round with psnr >= target, 0 if never
  std::size_t phase2_start = 0;  // round at which step II first ran
  std::size_t phase3_start = 0;
  double final_psnr = 0.0;
  double final_mse = 0.0;
};

AttackResult run_nested(Simulator& sim, const AttackHyper& hyper, const StopCriteria& stop, std::uint64_t seed);
AttackResult run_single_loop(Simulator& sim, const AttackHyper& hyper, std::uint64_t seed);

}  // namespace cafe
