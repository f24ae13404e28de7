#include "cafe/attack.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cafe/metrics.hpp"

namespace cafe {

AttackState init_attack_state(std::size_t N, std::size_t d1, std::size_t d2, std::size_t D, std::size_t C,
                              std::uint64_t seed) {
  Rng rng(seed, "attack/init");
  AttackState s{Tensor({N, d2}), Tensor({N, d1}), Tensor({N, D}), Tensor({N, C})};
  for (auto& v : s.V.data()) v = rng.uniform();
  for (auto& v : s.H.data()) v = rng.uniform();
  for (auto& v : s.X.data()) v = rng.uniform();
  return s;
}

void write_trace(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCode::io, "cannot open trace file '" + path + "'");
  f << "iter,phase,f1,f2,f3_grad,f3_tv,f3_rep,psnr\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9e,%.9e,%.9e,%.9e,%.9e,%.6f\n", r.iter, r.phase.c_str(), r.f1, r.f2,
                  r.f3_grad, r.f3_tv, r.f3_rep, r.psnr);
    f << buf;
  }
  require(static_cast<bool>(f), ErrorCode::io, "write failed for '" + path + "'");
}

// ---------------------------------------------------------------- Step I

namespace {
Tensor step1_residual(const Tensor& V, const BatchMask& mask, const Tensor& g) {
  require(V.rank() == 2 && mask.N() == V.rows(), ErrorCode::dimension, "V rows do not match mask length");
  require(g.size() == V.cols(), ErrorCode::dimension, "bias gradient length does not match d2");
  Tensor r({V.cols()});
  for (std::size_t j = 0; j < V.cols(); ++j) r[j] = -g[j];
  for (std::size_t n = 0; n < V.rows(); ++n)
    if (mask.bits[n])
      for (std::size_t j = 0; j < V.cols(); ++j) r[j] += V(n, j);
  return r;
}
}  // namespace

double step1_objective(const Tensor& V, const BatchMask& mask, const Tensor& grad_b1) {
  return sum_sq(step1_residual(V, mask, grad_b1));
}

double step1_update(Tensor& V, const BatchMask& mask, const Tensor& grad_b1, double lr1) {
  require(lr1 > 0.0, ErrorCode::invalid_argument, "lr1 must be positive");
  Tensor r = step1_residual(V, mask, grad_b1);
  double f = sum_sq(r);
  // grad_V F1 = 2 s r^T; its Lipschitz constant is 2K.
  double step = lr1 / static_cast<double>(mask.K);
  for (std::size_t n = 0; n < V.rows(); ++n)
    if (mask.bits[n])
      for (std::size_t j = 0; j < V.cols(); ++j) V(n, j) -= step * r[j];
  return f;
}

bool check_step1_degeneracy(std::size_t N, std::size_t K, bool emit_warning) {
  if (K < N) return false;
  if (emit_warning)
    warn("degenerate_batch", "K = N = " + std::to_string(N) +
                                 ": every round observes the same batch, so only the row sum of V is "
                                 "identifiable (Hessian block is rank one, not positive definite)");
  return true;
}

// --------------------------------------------------------------- Step II

namespace {
Tensor step2_residual(const Tensor& H, const Tensor& V, const BatchMask& mask, const Tensor& G) {
  std::size_t d1 = H.cols(), d2 = V.cols();
  require(H.rows() == V.rows() && mask.N() == V.rows(), ErrorCode::dimension, "H/V rows do not match mask");
  require(G.rank() == 2 && G.rows() == d1 && G.cols() == d2, ErrorCode::dimension,
          "weight gradient " + shape_str(G.shape()) + " does not match (d1,d2)");
  Tensor R({d1, d2});
  for (std::size_t i = 0; i < R.size(); ++i) R[i] = -G[i];
  for (std::size_t n = 0; n < V.rows(); ++n) {
    if (!mask.bits[n]) continue;
    const double* h = H.row(n);
    const double* v = V.row(n);
    for (std::size_t a = 0; a < d1; ++a) {
      double* r = R.row(a);
      for (std::size_t b = 0; b < d2; ++b) r[b] += h[a] * v[b];
    }
  }
  return R;
}
}  // namespace

double step2_objective(const Tensor& H, const Tensor& V, const BatchMask& mask, const Tensor& grad_w1) {
  return sum_sq(step2_residual(H, V, mask, grad_w1));
}

double step2_update(Tensor& H, const Tensor& V, const BatchMask& mask, const Tensor& grad_w1, double lr2) {
  require(lr2 > 0.0, ErrorCode::invalid_argument, "lr2 must be positive");
  Tensor R = step2_residual(H, V, mask, grad_w1);
  double f = sum_sq(R);
  auto idx = mask.indices();
  std::size_t K = idx.size(), d1 = H.cols(), d2 = V.cols();
  Eigen::MatrixXd Vs(K, d2);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t b = 0; b < d2; ++b) Vs(i, b) = V(idx[i], b);
  Eigen::MatrixXd gram = Vs * Vs.transpose();
  double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) return f;
  double step = lr2 / (2.0 * lmax);
  // grad_{h_n} F2 = 2 R v_n.
  for (std::size_t i = 0; i < K; ++i) {
    const double* v = V.row(idx[i]);
    double* h = H.row(idx[i]);
    for (std::size_t a = 0; a < d1; ++a) {
      const double* r = R.row(a);
      double acc = 0.0;
      for (std::size_t b = 0; b < d2; ++b) acc += r[b] * v[b];
      h[a] -= step * 2.0 * acc;
    }
  }
  return f;
}

HypothesisCheck check_step2_hypothesis(const Tensor& V, bool emit_warning) {
  std::size_t N = V.rows(), d2 = V.cols();
  Eigen::MatrixXd M = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      V.ptr(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d2));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  double tol = sv.size() ? static_cast<double>(std::max(N, d2)) * 1e-12 * sv(0) : 0.0;
  HypothesisCheck c;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++c.rank;
  if (N >= d2) {
    c.ok = false;
    c.reason = "N = " + std::to_string(N) + " >= d2 = " + std::to_string(d2);
  } else if (c.rank < N) {
    c.ok = false;
    c.reason = "rank(V) = " + std::to_string(c.rank) + " < N = " + std::to_string(N);
  }
  if (!c.ok && emit_warning)
    warn("theorem2_hypothesis", "step II recovery hypothesis violated (" + c.reason + "); recovery not guaranteed");
  return c;
}

SweepResult solve_step1(const std::vector<MaskObservation>& obs, std::size_t N, std::size_t d2, double lr1,
                        std::size_t max_sweeps, double tol, std::uint64_t seed) {
  require(!obs.empty(), ErrorCode::invalid_argument, "no observations");
  check_step1_degeneracy(N, obs.front().mask.K);
  Rng rng(seed, "attack/init");
  SweepResult r{Tensor({N, d2}), 0, 0.0};
  for (auto& v : r.value.data()) v = rng.uniform();
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  for (r.sweeps = 1; r.sweeps <= max_sweeps; ++r.sweeps) {
    double lr = lr1 / (1.0 + 1e-3 * static_cast<double>(r.sweeps - 1));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (auto i : order) step1_update(r.value, obs[i].mask, obs[i].grad_b1, lr);
    r.max_objective = 0.0;
    for (const auto& o : obs) r.max_objective = std::max(r.max_objective, step1_objective(r.value, o.mask, o.grad_b1));
    if (r.max_objective < tol) break;
  }
  return r;
}

SweepResult solve_step2(const std::vector<MaskObservation>& obs, const Tensor& V, std::size_t d1, double lr2,
                        std::size_t max_sweeps, double tol, std::uint64_t seed) {
  require(!obs.empty(), ErrorCode::invalid_argument, "no observations");
  check_step2_hypothesis(V);
  Rng rng(seed, "attack/init/h");
  SweepResult r{Tensor({V.rows(), d1}), 0, 0.0};
  for (auto& v : r.value.data()) v = rng.uniform();
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  for (r.sweeps = 1; r.sweeps <= max_sweeps; ++r.sweeps) {
    double lr = lr2 / (1.0 + 1e-3 * static_cast<double>(r.sweeps - 1));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (auto i : order) step2_update(r.value, V, obs[i].mask, obs[i].grad_w1, lr);
    r.max_objective = 0.0;
    for (const auto& o : obs)
      r.max_objective = std::max(r.max_objective, step2_objective(r.value, V, o.mask, o.grad_w1));
    if (r.max_objective < tol) break;
  }
  return r;
}

// -------------------------------------------------------------- Step III

double tv_norm(const Tensor& images, const Shape3& L) {
  require(images.cols() == L.size(), ErrorCode::dimension, "image width does not match layout");
  double tv = 0.0;
  for (std::size_t n = 0; n < images.rows(); ++n) {
    const double* im = images.row(n);
    for (std::size_t c = 0; c < L.c; ++c) {
      const double* p = im + c * L.h * L.w;
      for (std::size_t y = 0; y < L.h; ++y)
        for (std::size_t x = 0; x < L.w; ++x) {
          if (x + 1 < L.w) tv += std::abs(p[y * L.w + x + 1] - p[y * L.w + x]);
          if (y + 1 < L.h) tv += std::abs(p[(y + 1) * L.w + x] - p[y * L.w + x]);
        }
    }
  }
  return tv;
}

double tv_truncated(const Tensor& images, const Shape3& layout, double xi) {
  double tv = tv_norm(images, layout);
  return tv < xi ? 0.0 : tv;
}

Tensor tv_gradient(const Tensor& images, const Shape3& L) {
  Tensor g(images.shape());
  auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
  for (std::size_t n = 0; n < images.rows(); ++n) {
    const double* im = images.row(n);
    double* gr = g.row(n);
    for (std::size_t c = 0; c < L.c; ++c) {
      std::size_t o = c * L.h * L.w;
      for (std::size_t y = 0; y < L.h; ++y)
        for (std::size_t x = 0; x < L.w; ++x) {
          std::size_t i = o + y * L.w + x;
          if (x + 1 < L.w) {
            double s = sgn(im[i + 1] - im[i]);
            gr[i + 1] += s;
            gr[i] -= s;
          }
          if (y + 1 < L.h) {
            double s = sgn(im[i + L.w] - im[i]);
            gr[i + L.w] += s;
            gr[i] -= s;
          }
        }
    }
  }
  return g;
}

double report_distance_sq(const TensorList<double>& a, const TensorList<double>& b) {
  require(a.size() == b.size(), ErrorCode::dimension, "gradient collections differ in tensor count");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].size() == b[i].size(), ErrorCode::dimension, "gradient tensor size mismatch");
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      double d = a[i][k] - b[i][k];
      s += d * d;
    }
  }
  return s;
}

FakeBatchGrad matched_gradient(const ModelParams& theta, const Tensor& x, const Tensor& logits,
                               const TensorList<double>& r) {
  require(r.size() == theta.tensors.size(), ErrorCode::dimension, "direction does not match parameters");
  TensorList<Dual> P;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto& t = theta.tensors[i];
    BasicTensor<Dual> d(t.shape());
    for (std::size_t k = 0; k < t.size(); ++k) d[k] = Dual(t[k], r[i][k]);
    P.push_back(std::move(d));
  }
  BasicTensor<Dual> xd(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) xd[k] = Dual(x[k]);
  Tensor y = softmax_rows(logits);
  BasicTensor<Dual> yd(y.shape());
  for (std::size_t k = 0; k < y.size(); ++k) yd[k] = Dual(y[k]);

  auto pass = forward_backward(theta.arch, P, xd, yd);
  FakeBatchGrad g{Tensor(x.shape()), Tensor(logits.shape())};
  for (std::size_t k = 0; k < x.size(); ++k) g.dx[k] = pass.dx[k].d;
  // Chain through softmax: dl_j = y_j (a_j - sum_c y_c a_c).
  for (std::size_t n = 0; n < y.rows(); ++n) {
    double dot = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) dot += y(n, c) * pass.dtarget(n, c).d;
    for (std::size_t c = 0; c < y.cols(); ++c) g.dlogits(n, c) = y(n, c) * (pass.dtarget(n, c).d - dot);
  }
  return g;
}

namespace {

struct FakePass {
  Pass<double> pass;
  Step3Terms terms;
};

FakePass eval_step3(const ModelParams& theta, const Tensor& x, const Tensor& logits, const Tensor& H_rows,
                    const GradientReport& real, const AttackHyper& hp, const Shape3& layout, double xi_batch) {
  require(real.tensors.size() == theta.tensors.size(), ErrorCode::dimension, "report does not match parameters");
  FakePass f{forward_backward(theta.arch, theta.tensors, x, softmax_rows(logits)), {}};
  f.terms.grad = report_distance_sq(real.tensors, f.pass.grads);
  f.terms.tv = tv_truncated(x, layout, xi_batch);
  f.terms.rep = 0.0;
  require(H_rows.shape() == f.pass.h.shape(), ErrorCode::dimension, "H rows do not match representation");
  for (std::size_t k = 0; k < H_rows.size(); ++k) {
    double d = H_rows[k] - f.pass.h[k];
    f.terms.rep += d * d;
  }
  f.terms.total = hp.alpha * f.terms.grad + hp.beta * f.terms.tv + hp.gamma * f.terms.rep;
  return f;
}

}  // namespace

Step3Terms step3_objective(const ModelParams& theta, const Tensor& x, const Tensor& logits, const Tensor& H_rows,
                           const GradientReport& real, const AttackHyper& hyper, const Shape3& layout,
                           double xi_batch) {
  return eval_step3(theta, x, logits, H_rows, real, hyper, layout, xi_batch).terms;
}

Step3Gradient step3_gradient(const ModelParams& theta, const Tensor& x, const Tensor& logits, const Tensor& H_rows,
                             const GradientReport& real, const AttackHyper& hp, const Shape3& layout,
                             double xi_batch) {
  auto f = eval_step3(theta, x, logits, H_rows, real, hp, layout, xi_batch);
  Step3Gradient g{f.terms, Tensor(x.shape()), Tensor(logits.shape())};
  if (hp.alpha > 0.0) {
    TensorList<double> r;
    for (std::size_t i = 0; i < real.tensors.size(); ++i) {
      Tensor d(real.tensors[i].shape());
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = 2.0 * hp.alpha * (f.pass.grads[i][k] - real.tensors[i][k]);
      r.push_back(std::move(d));
    }
    auto m = matched_gradient(theta, x, logits, r);
    g.dx = std::move(m.dx);
    g.dlogits = std::move(m.dlogits);
  }
  if (hp.gamma > 0.0) {
    Tensor dh(f.pass.h.shape());
    for (std::size_t k = 0; k < dh.size(); ++k) dh[k] = 2.0 * hp.gamma * (f.pass.h[k] - H_rows[k]);
    Tensor dx = extractor_vjp(theta.arch, theta.tensors, x, dh);
    for (std::size_t k = 0; k < dx.size(); ++k) g.dx[k] += dx[k];
  }
  if (hp.beta > 0.0 && f.terms.tv > 0.0) {
    Tensor t = tv_gradient(x, layout);
    for (std::size_t k = 0; k < t.size(); ++k) g.dx[k] += hp.beta * t[k];
  }
  return g;
}

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct Runner {
  Simulator& sim;
  const AttackHyper& hp;
  AttackResult res;
  Shape3 layout;
  double xi_batch;
  std::size_t K;

  Runner(Simulator& s, const AttackHyper& h, std::uint64_t seed) : sim(s), hp(h) {
    const auto& arch = sim.params().arch;
    const auto& d = sim.data().data;
    require(hp.lr1 > 0 && hp.lr2 > 0 && hp.lr3 > 0, ErrorCode::invalid_argument, "all step sizes must be positive");
    require(hp.alpha >= 0 && hp.beta >= 0 && hp.gamma >= 0 && hp.xi_per_image >= 0, ErrorCode::invalid_argument,
            "objective weights must be non-negative");
    require(hp.T >= 1, ErrorCode::invalid_argument, "T must be >= 1");
    res.state = init_attack_state(d.size(), arch.d1(), arch.d2(), d.x.cols(), arch.classes(), seed);
    layout = d.image.size() == d.x.cols() ? d.image : Shape3{1, 1, d.x.cols()};
    K = sim.config().K;
    xi_batch = hp.xi_per_image * static_cast<double>(K);
    check_step1_degeneracy(d.size(), K);
    if (arch.d2() <= d.size())
      warn("theorem2_hypothesis", "d2 = " + std::to_string(arch.d2()) + " <= N = " + std::to_string(d.size()) +
                                      "; step II recovery is not guaranteed");
  }

  double current_psnr() {
    auto m = psnr(sim.data().data.x, res.state.X);
    res.final_psnr = m.psnr_db;
    res.final_mse = m.mse;
    return m.psnr_db;
  }

  // One backtracking SGD step of step III on the rows of `mask`.
  Step3Terms step3(const ModelParams& theta, const RoundResult& rr) {
    auto idx = rr.mask.indices();
    Tensor x = gather_rows(res.state.X, idx);
    Tensor l = gather_rows(res.state.logits, idx);
    Tensor h = gather_rows(res.state.H, idx);
    auto g = step3_gradient(theta, x, l, h, rr.report, hp, layout, xi_batch);
    double step = hp.lr3;
    for (std::size_t bt = 0; bt <= hp.backtrack; ++bt, step *= 0.5) {
      Tensor nx = x, nl = l;
      for (std::size_t k = 0; k < nx.size(); ++k) nx[k] = clamp01(x[k] - step * g.dx[k]);
      for (std::size_t k = 0; k < nl.size(); ++k) nl[k] = l[k] - step * g.dlogits[k];
      double fn = step3_objective(theta, nx, nl, h, rr.report, hp, layout, xi_batch).total;
      if (fn <= g.terms.total) {
        scatter_rows(res.state.X, idx, nx);
        scatter_rows(res.state.logits, idx, nl);
        break;
      }
    }
    return g.terms;
  }

  void record(std::size_t iter, const char* phase, double f1, double f2, const Step3Terms& t, double p) {
    if (hp.trace_every == 0 || (iter % hp.trace_every != 0 && iter != 1)) return;
    res.trace.push_back({iter, phase, f1, f2, t.grad, t.tv, t.rep, p});
  }

  bool hit_target(double p, std::size_t iter) {
    if (hp.psnr_target > 0.0 && p >= hp.psnr_target) {
      res.reached_at = iter;
      return true;
    }
    return false;
  }
};

}  // namespace

AttackResult run_nested(Simulator& sim, const AttackHyper& hp, const StopCriteria& stop, std::uint64_t seed) {
  require(stop.phi1 > 0.0 && stop.phi2 > 0.0, ErrorCode::invalid_argument, "phi1 and phi2 must be positive");
  Runner R(sim, hp, seed);
  auto& st = R.res.state;
  std::size_t iter = 0;
  double p0 = R.current_psnr();

  std::size_t below = 0;
  for (std::size_t t = 0; t < hp.T; ++t) {
    auto rr = sim.step();
    ++iter;
    double f1 = step1_update(st.V, rr.mask, rr.report.at("fc1.bias"), hp.lr1);
    R.record(iter, "step1", f1, 0.0, {}, p0);
    below = f1 < stop.phi1 ? below + 1 : 0;
    if (below >= hp.patience) break;
  }

  R.res.phase2_start = iter + 1;
  check_step2_hypothesis(st.V);
  below = 0;
  for (std::size_t t = 0; t < hp.T; ++t) {
    auto rr = sim.step();
    ++iter;
    double f2 = step2_update(st.H, st.V, rr.mask, rr.report.at("fc1.weight"), hp.lr2);
    R.record(iter, "step2", 0.0, f2, {}, p0);
    below = f2 < stop.phi2 ? below + 1 : 0;
    if (below >= hp.patience) break;
  }

  R.res.phase3_start = iter + 1;
  for (std::size_t t = 0; t < hp.T; ++t) {
    ModelParams theta = sim.params();
    auto rr = sim.step();
    ++iter;
    auto terms = R.step3(theta, rr);
    double p = R.current_psnr();
    R.record(iter, "step3", 0.0, 0.0, terms, p);
    if (R.hit_target(p, iter)) break;
  }
  R.res.iterations = iter;
  R.current_psnr();
  return std::move(R.res);
}

AttackResult run_single_loop(Simulator& sim, const AttackHyper& hp, std::uint64_t seed) {
  Runner R(sim, hp, seed);
  auto& st = R.res.state;
  bool on2 = !hp.gated, on3 = !hp.gated;
  double p = R.current_psnr();
  std::size_t iter = 0;
  for (std::size_t t = 0; t < hp.T; ++t) {
    ModelParams theta = sim.params();
    auto rr = sim.step();
    ++iter;
    double f1 = step1_update(st.V, rr.mask, rr.report.at("fc1.bias"), hp.lr1);
    if (f1 < hp.switch1) on2 = true;
    double f2 = 0.0;
    if (on2) {
      if (!R.res.phase2_start) {
        R.res.phase2_start = iter;
        check_step2_hypothesis(st.V);
      }
      f2 = step2_update(st.H, st.V, rr.mask, rr.report.at("fc1.weight"), hp.lr2);
      if (f2 < hp.switch2) on3 = true;
    }
    Step3Terms terms;
    const char* phase = on2 ? "step2" : "step1";
    if (on3) {
      if (!R.res.phase3_start) R.res.phase3_start = iter;
      terms = R.step3(theta, rr);
      p = R.current_psnr();
      phase = "step3";
    }
    R.record(iter, phase, f1, f2, terms, p);
    if (R.hit_target(p, iter)) break;
  }
  R.res.iterations = iter;
  R.current_psnr();
  return std::move(R.res);
}

}  // namespace cafe
