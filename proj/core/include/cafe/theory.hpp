#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cafe/tensor.hpp"
#include "cafe/vfl.hpp"

namespace cafe {

enum class Provenance { h11, g11 };

struct HessianBlock {
  Eigen::MatrixXd m;
  Provenance provenance = Provenance::h11;
  std::size_t N = 0, K = 0;
  bool positive_definite = false;
};

// 2 E[s s^T] over uniform K-of-N masks.
HessianBlock build_h11(std::size_t N, std::size_t K);
double h11_prefactor(std::size_t N, std::size_t K);

struct Spectrum {
  std::vector<double> bracketed;  // analytic, without the prefactor, ascending
  std::vector<double> scaled;     // analytic times the prefactor
  std::vector<double> numeric;    // eigenvalues of build_h11, ascending
  double prefactor = 0.0;
  double max_err_scaled = 0.0;    // |numeric - scaled|
  double max_err_unscaled = 0.0;  // |numeric - bracketed|
};
Spectrum h11_eigvals(std::size_t N, std::size_t K);

// H11 ⊙ V V^T.
HessianBlock build_g11(const Tensor& V, std::size_t N, std::size_t K);

Eigen::VectorXd sym_eigenvalues(const Eigen::MatrixXd& m);
double min_eigenvalue(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_eigen(const Tensor& t);
// ||pinv(A)||_F^2, the right inverse for full row rank A.
double pinv_frobenius_sq(const Tensor& A);

struct BoundInputs {
  double lambda_theta = 0.0;
  double lambda_v = 0.0;
  double lambda_star = 0.0;
  double phi1 = 0.0;
  double phi2 = 0.0;
};

double recovery_bound(const BoundInputs& in, std::size_t N, std::size_t K);

struct BoundCheck {
  BoundInputs inputs;
  double bound = 0.0;
  double measured = 0.0;  // ||H - H*||_F^2
  bool holds = false;
};

// phi1/phi2 are the largest per-mask step I/II objectives over every mask;
// lambda_theta = ||H*^T V*||_F^2, lambda_v/lambda_star from pseudo-inverses.
BoundCheck evaluate_bound(const Tensor& V, const Tensor& V_star, const Tensor& H, const Tensor& H_star,
                          std::size_t K, std::size_t cap = kDefaultEnumerationCap);

// Mean of F1(V; s) = ||(V - V*)^T s||^2 over every K-of-N mask.
double f1_mask_mean(const Tensor& V, const Tensor& V_star, std::size_t K, std::size_t cap = kDefaultEnumerationCap);
// |mask mean - (K/N) ||V - V*||_F^2|.
double f1_exact_identity_check(const Tensor& V, const Tensor& V_star, std::size_t N, std::size_t K,
                               std::size_t cap = kDefaultEnumerationCap);
// Exact closed form of the mask mean:
// (K/N - c) ||E||_F^2 + c ||sum_n e_n||^2 with c = K(K-1)/(N(N-1)).
double f1_mask_mean_closed_form(const Tensor& V, const Tensor& V_star, std::size_t K);

struct TheoryRow {
  std::size_t N = 0, K = 0;
  double min_eig_h11 = 0.0;
  double min_eig_g11 = 0.0;
  double bound_residual = 0.0;  // bound - measured; negative means violated
};

void write_theory_csv(const std::string& path, const std::vector<TheoryRow>& rows);

}  // namespace cafe
