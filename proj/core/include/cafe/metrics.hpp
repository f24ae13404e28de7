#pragma once

#include <string>
#include <vector>

#include "cafe/tensor.hpp"

namespace cafe {

constexpr double kPsnrCap = 100.0;

struct RecoveryMetrics {
  double psnr_db = 0.0;
  double mse = 0.0;
  std::vector<double> per_image_psnr;
};

double psnr_from_mse(double mse, double max_val = 1.0);

// Rows are images.
RecoveryMetrics psnr(const Tensor& real, const Tensor& fake, double max_val = 1.0);

struct PermutationMatch {
  std::vector<std::size_t> perm;  // fake row perm[i] is matched to real row i
  RecoveryMetrics metrics;
};

// Greedy nearest-MSE assignment without replacement (not optimal).
PermutationMatch match_best_permutation(const Tensor& real, const Tensor& fake, double max_val = 1.0);

struct MetricsRow {
  std::string run_id;
  std::string method;
  double psnr = 0.0;
  double mse = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace cafe
