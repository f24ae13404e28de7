#include "cafe/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace cafe {

double h11_prefactor(std::size_t N, std::size_t K) {
  if (N < 2) return 0.0;
  return 2.0 * static_cast<double>(K) * static_cast<double>(K - 1) /
         (static_cast<double>(N) * static_cast<double>(N - 1));
}

Eigen::VectorXd sym_eigenvalues(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues();
}

double min_eigenvalue(const Eigen::MatrixXd& m) { return sym_eigenvalues(m).minCoeff(); }

HessianBlock build_h11(std::size_t N, std::size_t K) {
  require(K >= 1 && K <= N, ErrorCode::invalid_argument, "build_h11 needs 1 <= K <= N");
  HessianBlock b;
  b.N = N;
  b.K = K;
  double diag = 2.0 * static_cast<double>(K) / static_cast<double>(N);
  double off = h11_prefactor(N, K);
  b.m = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N), off);
  b.m.diagonal().setConstant(diag);
  b.positive_definite = min_eigenvalue(b.m) > 1e-12;
  return b;
}

Spectrum h11_eigvals(std::size_t N, std::size_t K) {
  require(K > 1 && K < N, ErrorCode::invalid_argument, "analytic spectrum needs 1 < K < N");
  Spectrum s;
  s.prefactor = h11_prefactor(N, K);
  double a = static_cast<double>(N - 1) / static_cast<double>(K - 1);
  s.bracketed.assign(N - 1, a - 1.0);
  s.bracketed.push_back(a + static_cast<double>(N) - 1.0);
  for (double v : s.bracketed) s.scaled.push_back(v * s.prefactor);
  auto ev = sym_eigenvalues(build_h11(N, K).m);
  s.numeric.assign(ev.data(), ev.data() + ev.size());
  std::sort(s.numeric.begin(), s.numeric.end());
  for (std::size_t i = 0; i < N; ++i) {
    s.max_err_scaled = std::max(s.max_err_scaled, std::abs(s.numeric[i] - s.scaled[i]));
    s.max_err_unscaled = std::max(s.max_err_unscaled, std::abs(s.numeric[i] - s.bracketed[i]));
  }
  return s;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  require(t.rank() == 2, ErrorCode::dimension, "expected a matrix");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

HessianBlock build_g11(const Tensor& V, std::size_t N, std::size_t K) {
  require(V.rank() == 2 && V.rows() == N, ErrorCode::dimension, "V must have N rows");
  HessianBlock b = build_h11(N, K);
  Eigen::MatrixXd Ve = to_eigen(V);
  b.m = b.m.cwiseProduct(Ve * Ve.transpose());
  b.provenance = Provenance::g11;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Ve);
  lu.setThreshold(1e-10);
  bool full_rank = static_cast<std::size_t>(lu.rank()) == N;
  b.positive_definite = N < V.cols() && full_rank && min_eigenvalue(b.m) > 0.0;
  return b;
}

double pinv_frobenius_sq(const Tensor& A) {
  Eigen::MatrixXd M = to_eigen(A);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  double tol = sv.size() ? static_cast<double>(std::max(M.rows(), M.cols())) * 1e-15 * sv(0) : 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) s += 1.0 / (sv(i) * sv(i));
  return s;
}

double recovery_bound(const BoundInputs& in, std::size_t N, std::size_t K) {
  require(K >= 1, ErrorCode::invalid_argument, "K must be >= 1");
  require(in.lambda_theta >= 0 && in.lambda_v >= 0 && in.lambda_star >= 0 && in.phi1 >= 0 && in.phi2 >= 0,
          ErrorCode::invalid_argument, "bound inputs must be non-negative");
  return 2.0 * static_cast<double>(N) / static_cast<double>(K) *
         (in.lambda_theta * in.lambda_v * in.lambda_star * in.phi1 + in.lambda_v * in.phi2);
}

namespace {
double diff_frob_sq(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::dimension, "shape mismatch " + shape_str(a.shape()) + " vs " +
                                                            shape_str(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}
}  // namespace

BoundCheck evaluate_bound(const Tensor& V, const Tensor& Vs, const Tensor& H, const Tensor& Hs, std::size_t K,
                          std::size_t cap) {
  std::size_t N = V.rows(), d1 = H.cols(), d2 = V.cols();
  require(Vs.shape() == V.shape() && Hs.shape() == H.shape() && H.rows() == N, ErrorCode::dimension,
          "bound inputs have inconsistent shapes");
  BoundCheck c;
  Eigen::MatrixXd Ve = to_eigen(V), Vse = to_eigen(Vs), He = to_eigen(H), Hse = to_eigen(Hs);
  c.inputs.lambda_theta = (Hse.transpose() * Vse).squaredNorm();
  c.inputs.lambda_v = pinv_frobenius_sq(V);
  c.inputs.lambda_star = pinv_frobenius_sq(Vs);
  Eigen::MatrixXd E = Ve - Vse;
  for (const auto& m : enumerate_masks(N, K, cap)) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d2));
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d1), static_cast<Eigen::Index>(d2));
    for (auto n : m.indices()) {
      auto i = static_cast<Eigen::Index>(n);
      r += E.row(i).transpose();
      R += He.row(i).transpose() * Ve.row(i) - Hse.row(i).transpose() * Vse.row(i);
    }
    c.inputs.phi1 = std::max(c.inputs.phi1, r.squaredNorm());
    c.inputs.phi2 = std::max(c.inputs.phi2, R.squaredNorm());
  }
  c.bound = recovery_bound(c.inputs, N, K);
  c.measured = diff_frob_sq(H, Hs);
  c.holds = c.measured <= c.bound;
  return c;
}

double f1_mask_mean(const Tensor& V, const Tensor& Vs, std::size_t K, std::size_t cap) {
  require(V.shape() == Vs.shape() && V.rank() == 2, ErrorCode::dimension, "V and V* shapes differ");
  std::size_t N = V.rows(), d2 = V.cols();
  auto masks = enumerate_masks(N, K, cap);
  double total = 0.0;
  std::vector<double> r(d2);
  for (const auto& m : masks) {
    std::fill(r.begin(), r.end(), 0.0);
    for (auto n : m.indices())
      for (std::size_t j = 0; j < d2; ++j) r[j] += V(n, j) - Vs(n, j);
    double f = 0.0;
    for (double v : r) f += v * v;
    total += f;
  }
  return total / static_cast<double>(masks.size());
}

double f1_exact_identity_check(const Tensor& V, const Tensor& Vs, std::size_t N, std::size_t K, std::size_t cap) {
  require(V.rows() == N, ErrorCode::dimension, "V must have N rows");
  require(K >= 1 && K <= N, ErrorCode::invalid_argument, "identity check needs 1 <= K <= N");
  double lhs = f1_mask_mean(V, Vs, K, cap);
  double rhs = static_cast<double>(K) / static_cast<double>(N) * diff_frob_sq(V, Vs);
  return std::abs(lhs - rhs);
}

double f1_mask_mean_closed_form(const Tensor& V, const Tensor& Vs, std::size_t K) {
  std::size_t N = V.rows(), d2 = V.cols();
  double c = N > 1 ? h11_prefactor(N, K) / 2.0 : 0.0;
  double e2 = diff_frob_sq(V, Vs);
  double colsum = 0.0;
  for (std::size_t j = 0; j < d2; ++j) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) s += V(n, j) - Vs(n, j);
    colsum += s * s;
  }
  return (static_cast<double>(K) / static_cast<double>(N) - c) * e2 + c * colsum;
}

void write_theory_csv(const std::string& path, const std::vector<TheoryRow>& rows) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCode::io, "cannot open theory report '" + path + "'");
  f << "N,K,min_eig_h11,min_eig_g11,bound_residual\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.12e,%.12e,%.12e\n", r.N, r.K, r.min_eig_h11, r.min_eig_g11,
                  r.bound_residual);
    f << buf;
  }
  require(static_cast<bool>(f), ErrorCode::io, "write failed for '" + path + "'");
}

}  // namespace cafe
