#include "cafe/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "cafe/metrics.hpp"

namespace cafe {

std::string baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::dlg: return "dlg";
    case BaselineKind::cosine: return "cosine";
    case BaselineKind::sapag: return "sapag";
  }
  return "?";
}

BaselineKind parse_baseline(const std::string& s) {
  for (auto k : {BaselineKind::dlg, BaselineKind::cosine, BaselineKind::sapag})
    if (baseline_name(k) == s) return k;
  fail(ErrorCode::config, "unknown baseline '" + s + "' (expected dlg|cosine|sapag)");
}

namespace {
void check_keys(const GradientReport& a, const GradientReport& b) {
  require(a.ids == b.ids, ErrorCode::invalid_argument, "gradient reports have different parameter ids");
}

double dot(const TensorList<double>& a, const TensorList<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) s += a[i][k] * b[i][k];
  return s;
}

TensorList<double> zeros_like(const TensorList<double>& a) {
  TensorList<double> z;
  for (const auto& t : a) z.emplace_back(t.shape());
  return z;
}
}  // namespace

MatchValue dlg_match(const TensorList<double>& fake, const TensorList<double>& real) {
  MatchValue m{report_distance_sq(fake, real), zeros_like(fake)};
  for (std::size_t i = 0; i < fake.size(); ++i)
    for (std::size_t k = 0; k < fake[i].size(); ++k) m.direction[i][k] = 2.0 * (fake[i][k] - real[i][k]);
  return m;
}

MatchValue cosine_match(const TensorList<double>& fake, const TensorList<double>& real) {
  require(fake.size() == real.size(), ErrorCode::dimension, "gradient collections differ in tensor count");
  MatchValue m{1.0, zeros_like(fake)};
  double nr = std::sqrt(dot(real, real)), nf = std::sqrt(dot(fake, fake));
  if (nr == 0.0 || nf == 0.0) return m;
  double ab = dot(real, fake);
  m.value = 1.0 - ab / (nr * nf);
  // d/db [1 - <a,b>/(|a||b|)] = -a/(|a||b|) + <a,b> b/(|a||b|^3)
  for (std::size_t i = 0; i < fake.size(); ++i)
    for (std::size_t k = 0; k < fake[i].size(); ++k)
      m.direction[i][k] = -real[i][k] / (nr * nf) + ab * fake[i][k] / (nr * nf * nf * nf);
  return m;
}

MatchValue sapag_match(const TensorList<double>& fake, const TensorList<double>& real, double w) {
  require(w > 0.0, ErrorCode::invalid_argument, "sapag kernel width must be positive");
  require(fake.size() == real.size(), ErrorCode::dimension, "gradient collections differ in tensor count");
  MatchValue m{0.0, zeros_like(fake)};
  for (std::size_t i = 0; i < fake.size(); ++i) {
    double d = 0.0;
    for (std::size_t k = 0; k < fake[i].size(); ++k) d += (real[i][k] - fake[i][k]) * (real[i][k] - fake[i][k]);
    double e = std::exp(-d / w);
    m.value += 1.0 - e;
    for (std::size_t k = 0; k < fake[i].size(); ++k) m.direction[i][k] = e / w * 2.0 * (fake[i][k] - real[i][k]);
  }
  return m;
}

double dlg_objective(const GradientReport& fake, const GradientReport& real) {
  check_keys(fake, real);
  return report_distance_sq(fake.tensors, real.tensors);
}

double cosine_objective(const GradientReport& fake, const GradientReport& real, const Tensor& fake_images,
                        const Shape3& layout, double beta_tv) {
  check_keys(fake, real);
  return cosine_match(fake.tensors, real.tensors).value + beta_tv * tv_norm(fake_images, layout);
}

double sapag_objective(const GradientReport& fake, const GradientReport& real, double kernel_width) {
  check_keys(fake, real);
  return sapag_match(fake.tensors, real.tensors, kernel_width).value;
}

double sapag_median_width(const GradientReport& real) {
  std::vector<double> n;
  for (const auto& t : real.tensors) n.push_back(sum_sq(t));
  if (n.empty()) return 1.0;
  std::sort(n.begin(), n.end());
  double med = n.size() % 2 ? n[n.size() / 2] : 0.5 * (n[n.size() / 2 - 1] + n[n.size() / 2]);
  return med > 0.0 ? med : 1.0;
}

namespace {

struct Eval {
  double value = 0.0;
  TensorList<double> direction;
};

Eval evaluate(const BaselineConfig& cfg, const ModelParams& theta, const Tensor& x, const Tensor& l,
              const GradientReport& real, double width, const Shape3& layout, bool want_dir) {
  auto pass = forward_backward(theta.arch, theta.tensors, x, softmax_rows(l));
  MatchValue m;
  switch (cfg.kind) {
    case BaselineKind::dlg: m = dlg_match(pass.grads, real.tensors); break;
    case BaselineKind::cosine:
      m = cosine_match(pass.grads, real.tensors);
      m.value += cfg.beta_tv * tv_norm(x, layout);
      break;
    case BaselineKind::sapag: m = sapag_match(pass.grads, real.tensors, width); break;
  }
  Eval e{m.value, {}};
  if (want_dir) e.direction = std::move(m.direction);
  return e;
}

}  // namespace

AttackResult run_baseline(Simulator& sim, const BaselineConfig& cfg, const AttackHyper& hp, std::uint64_t seed) {
  require(hp.lr3 > 0.0 && hp.T >= 1, ErrorCode::invalid_argument, "baseline needs lr3 > 0 and T >= 1");
  const auto& arch = sim.params().arch;
  const auto& d = sim.data().data;
  const Shape3 layout = d.image.size() == d.x.cols() ? d.image : Shape3{1, 1, d.x.cols()};
  AttackResult res;
  res.state = init_attack_state(d.size(), arch.d1(), arch.d2(), d.x.cols(), arch.classes(), seed);
  auto& st = res.state;
  const std::string phase = baseline_name(cfg.kind);

  for (std::size_t t = 0; t < hp.T; ++t) {
    ModelParams theta = sim.params();
    auto rr = sim.step();
    std::size_t iter = t + 1;
    double width = cfg.kind == BaselineKind::sapag
                       ? (cfg.kernel_width > 0.0 ? cfg.kernel_width : sapag_median_width(rr.report))
                       : 1.0;
    auto idx = rr.mask.indices();
    Tensor x = gather_rows(st.X, idx);
    Tensor l = gather_rows(st.logits, idx);
    auto e = evaluate(cfg, theta, x, l, rr.report, width, layout, true);
    auto g = matched_gradient(theta, x, l, e.direction);
    if (cfg.kind == BaselineKind::cosine && cfg.beta_tv > 0.0) {
      Tensor tg = tv_gradient(x, layout);
      for (std::size_t k = 0; k < tg.size(); ++k) g.dx[k] += cfg.beta_tv * tg[k];
    }
    double step = hp.lr3;
    for (std::size_t bt = 0; bt <= hp.backtrack; ++bt, step *= 0.5) {
      Tensor nx = x, nl = l;
      for (std::size_t k = 0; k < nx.size(); ++k) nx[k] = std::min(1.0, std::max(0.0, x[k] - step * g.dx[k]));
      for (std::size_t k = 0; k < nl.size(); ++k) nl[k] = l[k] - step * g.dlogits[k];
      if (evaluate(cfg, theta, nx, nl, rr.report, width, layout, false).value <= e.value) {
        scatter_rows(st.X, idx, nx);
        scatter_rows(st.logits, idx, nl);
        break;
      }
    }
    auto m = psnr(d.x, st.X);
    res.final_psnr = m.psnr_db;
    res.final_mse = m.mse;
    if (hp.trace_every && (iter % hp.trace_every == 0 || iter == 1))
      res.trace.push_back({iter, phase, 0.0, 0.0, e.value, 0.0, 0.0, m.psnr_db});
    res.iterations = iter;
    if (hp.psnr_target > 0.0 && m.psnr_db >= hp.psnr_target) {
      res.reached_at = iter;
      break;
    }
  }
  return res;
}

}  // namespace cafe
