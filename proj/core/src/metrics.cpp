#include "cafe/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cafe/error.hpp"

namespace cafe {

double psnr_from_mse(double mse, double max_val) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

namespace {
double row_mse(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s / static_cast<double>(a.cols());
}
}  // namespace

RecoveryMetrics psnr(const Tensor& real, const Tensor& fake, double max_val) {
  require(real.shape() == fake.shape(), ErrorCode::dimension,
          "psnr shape mismatch " + shape_str(real.shape()) + " vs " + shape_str(fake.shape()));
  require(max_val > 0.0, ErrorCode::invalid_argument, "max_val must be positive");
  RecoveryMetrics m;
  double s = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    double d = real[i] - fake[i];
    s += d * d;
  }
  m.mse = real.empty() ? 0.0 : s / static_cast<double>(real.size());
  m.psnr_db = psnr_from_mse(m.mse, max_val);
  if (real.rank() == 2)
    for (std::size_t i = 0; i < real.rows(); ++i) m.per_image_psnr.push_back(psnr_from_mse(row_mse(real, i, fake, i), max_val));
  return m;
}

PermutationMatch match_best_permutation(const Tensor& real, const Tensor& fake, double max_val) {
  require(real.shape() == fake.shape() && real.rank() == 2, ErrorCode::dimension,
          "permutation matching needs equal image counts and sizes");
  std::size_t n = real.rows();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = row_mse(real, i, fake, j);
  std::vector<bool> used_r(n, false), used_f(n, false);
  PermutationMatch out;
  out.perm.assign(n, 0);
  for (std::size_t step = 0; step < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (used_r[i]) continue;
      for (std::size_t j = 0; j < n; ++j)
        if (!used_f[j] && cost[i * n + j] < best) {
          best = cost[i * n + j];
          bi = i;
          bj = j;
        }
    }
    used_r[bi] = used_f[bj] = true;
    out.perm[bi] = bj;
  }
  Tensor aligned = fake;
  for (std::size_t i = 0; i < n; ++i) std::copy(fake.row(out.perm[i]), fake.row(out.perm[i]) + fake.cols(), aligned.row(i));
  out.metrics = psnr(real, aligned, max_val);
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCode::io, "cannot open metrics file '" + path + "'");
  f << "run_id,method,psnr,mse\n";
  char buf[64];
  for (const auto& r : rows) {
    f << r.run_id << ',' << r.method << ',';
    std::snprintf(buf, sizeof buf, "%.6f,%.9e", r.psnr, r.mse);
    f << buf << '\n';
  }
  require(static_cast<bool>(f), ErrorCode::io, "write failed for '" + path + "'");
}

}  // namespace cafe
