#include "cafe/tensor.hpp"

#include <cmath>

namespace cafe {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

double sum_sq(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), ErrorCode::dimension, "max_abs_diff size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  std::size_t c = t.cols();
  Tensor out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < t.rows(), ErrorCode::dimension, "row index out of range");
    std::copy(t.row(idx[i]), t.row(idx[i]) + c, out.row(i));
  }
  return out;
}

void scatter_rows(Tensor& dst, const std::vector<std::size_t>& idx, const Tensor& src) {
  std::size_t c = dst.cols();
  require(src.cols() == c && src.rows() == idx.size(), ErrorCode::dimension, "scatter_rows shape mismatch");
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(src.row(i), src.row(i) + c, dst.row(idx[i]));
}

}  // namespace cafe
