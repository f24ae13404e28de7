#pragma once

#include <string>

#include "cafe/attack.hpp"

namespace cafe {

enum class BaselineKind { dlg, cosine, sapag };

struct BaselineConfig {
  BaselineKind kind = BaselineKind::dlg;
  double beta_tv = 1e-4;       // cosine
  double kernel_width = 0.0;   // sapag; <= 0 picks the per-round median of ||real_i||^2
};

std::string baseline_name(BaselineKind k);
BaselineKind parse_baseline(const std::string& s);

double dlg_objective(const GradientReport& fake, const GradientReport& real);
double cosine_objective(const GradientReport& fake, const GradientReport& real, const Tensor& fake_images,
                        const Shape3& layout, double beta_tv);
double sapag_objective(const GradientReport& fake, const GradientReport& real, double kernel_width);
double sapag_median_width(const GradientReport& real);

// Objective value and its derivative w.r.t. each fake gradient tensor
// (the TV part of cosine is not included).
MatchValue dlg_match(const TensorList<double>& fake, const TensorList<double>& real);
MatchValue cosine_match(const TensorList<double>& fake, const TensorList<double>& real);
MatchValue sapag_match(const TensorList<double>& fake, const TensorList<double>& real, double kernel_width);

// Gradient-matching loop over the same rounds as CAFE step III, without
// steps I/II. Uses hyper.lr3, hyper.T, hyper.backtrack, hyper.psnr_target.
AttackResult run_baseline(Simulator& sim, const BaselineConfig& cfg, const AttackHyper& hyper, std::uint64_t seed);

}  // namespace cafe
