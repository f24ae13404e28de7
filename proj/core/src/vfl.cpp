#include "cafe/vfl.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace cafe {

PartitionScheme parse_partition_scheme(const std::string& s) {
  if (s == "even") return PartitionScheme::even;
  if (s == "quadrant") return PartitionScheme::quadrant;
  fail(ErrorCode::config, "unknown partition scheme '" + s + "' (expected even|quadrant)");
}

std::vector<double> PartitionedDataset::worker_features(std::size_t m, std::size_t n) const {
  const auto& idx = slices.at(m).index;
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.x(n, idx[i]);
  return out;
}

PartitionedDataset partition_dataset(const Dataset& d, std::size_t M, PartitionScheme scheme) {
  std::size_t D = d.x.cols();
  require(M >= 1, ErrorCode::invalid_argument, "M must be >= 1");
  require(M <= D, ErrorCode::invalid_argument,
          "M = " + std::to_string(M) + " exceeds feature dimension " + std::to_string(D));
  PartitionedDataset p{d, {}};
  const Shape3 im = d.image.size() == D ? d.image : Shape3{1, 1, D};
  if (scheme == PartitionScheme::even) {
    for (std::size_t m = 0; m < M; ++m) {
      std::size_t a = m * D / M, b = (m + 1) * D / M;
      FeatureSlice s;
      s.index.resize(b - a);
      std::iota(s.index.begin(), s.index.end(), a);
      // Whole rows of a single-channel image keep their 2-D layout.
      if (im.c == 1 && a % im.w == 0 && b % im.w == 0)
        s.layout = {1, (b - a) / im.w, im.w};
      else
        s.layout = {1, 1, b - a};
      p.slices.push_back(std::move(s));
    }
  } else {
    require(M == 4, ErrorCode::invalid_argument, "quadrant partition needs M = 4");
    require(im.h % 2 == 0 && im.w % 2 == 0 && im.h >= 2, ErrorCode::invalid_argument,
            "quadrant partition needs even image height and width");
    std::size_t hh = im.h / 2, hw = im.w / 2;
    for (std::size_t q = 0; q < 4; ++q) {
      std::size_t y0 = (q / 2) * hh, x0 = (q % 2) * hw;
      FeatureSlice s;
      s.layout = {im.c, hh, hw};
      for (std::size_t c = 0; c < im.c; ++c)
        for (std::size_t y = 0; y < hh; ++y)
          for (std::size_t x = 0; x < hw; ++x) s.index.push_back((c * im.h + y0 + y) * im.w + x0 + x);
      p.slices.push_back(std::move(s));
    }
  }
  return p;
}

std::vector<std::size_t> BatchMask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out.push_back(i);
  return out;
}

std::string BatchMask::str() const {
  std::string s;
  for (auto b : bits) s += b ? '1' : '0';
  return s;
}

BatchMask BatchMask::from_indices(std::size_t N, const std::vector<std::size_t>& idx) {
  BatchMask m{std::vector<std::uint8_t>(N, 0), 0};
  for (auto i : idx) {
    require(i < N, ErrorCode::dimension, "mask index out of range");
    require(!m.bits[i], ErrorCode::invalid_argument, "duplicate mask index");
    m.bits[i] = 1;
  }
  m.K = idx.size();
  return m;
}

BatchMask sample_batch_mask(std::size_t N, std::size_t K, Rng& rng) {
  require(K >= 1 && K <= N, ErrorCode::invalid_argument,
          "batch size K = " + std::to_string(K) + " must lie in [1, N = " + std::to_string(N) + "]");
  // Partial Fisher-Yates: the first K slots are a uniform K-subset.
  std::vector<std::size_t> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < K; ++i) std::swap(perm[i], perm[i + rng.below(N - i)]);
  perm.resize(K);
  return BatchMask::from_indices(N, perm);
}

double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

std::vector<BatchMask> enumerate_masks(std::size_t N, std::size_t K, std::size_t cap) {
  require(K >= 1 && K <= N, ErrorCode::invalid_argument, "enumerate_masks needs 1 <= K <= N");
  double count = binomial(N, K);
  require(count <= static_cast<double>(cap), ErrorCode::enumeration_cap,
          "C(" + std::to_string(N) + "," + std::to_string(K) + ") exceeds enumeration cap " + std::to_string(cap));
  std::vector<BatchMask> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<std::size_t> c(K);
  std::iota(c.begin(), c.end(), 0);
  while (true) {
    out.push_back(BatchMask::from_indices(N, c));
    std::size_t i = K;
    while (i > 0 && c[i - 1] == N - K + i - 1) --i;
    if (i == 0) break;
    ++c[i - 1];
    for (std::size_t j = i; j < K; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

LabeledBatch assemble_batch(const Dataset& d, const BatchMask& mask) {
  require(mask.N() == d.size(), ErrorCode::dimension, "mask length does not match dataset size");
  auto idx = mask.indices();
  LabeledBatch b;
  b.inputs = gather_rows(d.x, idx);
  for (auto i : idx) b.labels.push_back(d.y[i]);
  return b;
}

void Optimizer::step(ModelParams& p, const GradientReport& g) {
  require(g.tensors.size() == p.tensors.size(), ErrorCode::dimension, "gradient report does not match parameters");
  if (cfg_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      auto& w = p.tensors[i];
      const auto& d = g.tensors[i];
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= cfg_.lr * d[k];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& t : p.tensors) {
      m_.emplace_back(t.shape());
      v_.emplace_back(t.shape());
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    auto& w = p.tensors[i];
    const auto& d = g.tensors[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * d[k];
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * d[k] * d[k];
      w[k] -= cfg_.lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + cfg_.eps);
    }
  }
}

RoundResult run_round(ModelParams& params, const PartitionedDataset& data, const BatchMask& mask,
                      const TrainConfig& cfg, Optimizer* opt, const UploadFilter& filter, std::size_t round) {
  require(mask.N() == data.N(), ErrorCode::dimension, "mask length does not match dataset size");
  require(params.arch.workers() == data.M(), ErrorCode::dimension, "model worker count does not match partition");
  auto back = backward_full(params, assemble_batch(data.data, mask));

  RoundResult r;
  r.round = round;
  r.mask = mask;
  r.loss = back.loss;
  r.report = zero_report(params);
  r.report.round = round;
  const auto& infos = params.arch.params();
  for (std::size_t m = 0; m < data.M(); ++m) {
    std::vector<std::size_t> owned;
    TensorList<double> up;
    for (std::size_t i = 0; i < infos.size(); ++i)
      if (infos[i].owner == m) {
        owned.push_back(i);
        up.push_back(back.grads.tensors[i]);
      }
    if (owned.empty()) continue;
    if (filter) up = filter(m, round, owned, std::move(up));
    require(up.size() == owned.size(), ErrorCode::internal, "upload filter changed tensor count");
    for (std::size_t j = 0; j < owned.size(); ++j) {
      auto& dst = r.report.tensors[owned[j]];
      require(up[j].same_shape(dst), ErrorCode::internal, "upload filter changed tensor shape");
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += up[j][k];
    }
  }
  if (cfg.train && opt) opt->step(params, r.report);
  return r;
}

void write_round_log(const std::string& path, const std::vector<RoundLog>& rows) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCode::io, "cannot open round log '" + path + "'");
  f << "round,loss,grad_norm,seed\n";
  f << std::setprecision(17);
  for (const auto& r : rows) f << r.round << ',' << r.loss << ',' << r.grad_norm << ',' << r.seed << '\n';
  require(static_cast<bool>(f), ErrorCode::io, "write failed for '" + path + "'");
}

Simulator::Simulator(PartitionedDataset data, ModelParams params, TrainConfig cfg)
    : data_(std::move(data)),
      params_(std::move(params)),
      cfg_(cfg),
      opt_(cfg.optimizer),
      mask_rng_(cfg.seed, "masks") {
  require(cfg_.K >= 1 && cfg_.K <= data_.N(), ErrorCode::invalid_argument, "K must lie in [1, N]");
  require(cfg_.optimizer.lr >= 0.0, ErrorCode::invalid_argument, "learning rate must be non-negative");
}

RoundResult Simulator::step() { return step_with(sample_batch_mask(data_.N(), cfg_.K, mask_rng_)); }

RoundResult Simulator::step_with(const BatchMask& mask) {
  auto r = run_round(params_, data_, mask, cfg_, &opt_, filter_, round_);
  log_.push_back({round_, r.loss, std::sqrt(report_sq_norm(r.report)), cfg_.seed});
  ++round_;
  return r;
}

Tensor Simulator::true_representation() const { return forward_representation(params_, data_.data.x); }

Tensor Simulator::true_v() const {
  std::size_t N = data_.N();
  Tensor V({N, params_.arch.d2()});
  for (std::size_t n = 0; n < N; ++n) {
    LabeledBatch b;
    b.inputs = gather_rows(data_.data.x, {n});
    b.labels = {data_.data.y[n]};
    auto back = backward_full(params_, b);
    for (std::size_t j = 0; j < V.cols(); ++j) V(n, j) = back.du(0, j) / static_cast<double>(cfg_.K);
  }
  return V;
}

double Simulator::full_loss() const {
  LabeledBatch b{data_.data.x, data_.data.y, {}};
  return loss_batch(params_, b);
}

}  // namespace cafe
