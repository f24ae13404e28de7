#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cafe/model.hpp"
#include "cafe/rng.hpp"

namespace cafe {

struct Dataset {
  Tensor x;               // N x D, values in [0,1]
  std::vector<int> y;
  Shape3 image;           // layout of one sample
  std::size_t classes = 0;

  std::size_t size() const { return x.rows(); }
};

enum class PartitionScheme { even, quadrant };
PartitionScheme parse_partition_scheme(const std::string& s);

struct PartitionedDataset {
  Dataset data;
  std::vector<FeatureSlice> slices;

  std::size_t N() const { return data.size(); }
  std::size_t M() const { return slices.size(); }
  // Worker m's view of sample n.
  std::vector<double> worker_features(std::size_t m, std::size_t n) const;
};

PartitionedDataset partition_dataset(const Dataset& d, std::size_t M, PartitionScheme scheme);

struct BatchMask {
  std::vector<std::uint8_t> bits;
  std::size_t K = 0;

  std::size_t N() const { return bits.size(); }
  std::vector<std::size_t> indices() const;
  std::string str() const;
  static BatchMask from_indices(std::size_t N, const std::vector<std::size_t>& idx);
};

BatchMask sample_batch_mask(std::size_t N, std::size_t K, Rng& rng);

constexpr std::size_t kDefaultEnumerationCap = 1000000;
double binomial(std::size_t n, std::size_t k);
std::vector<BatchMask> enumerate_masks(std::size_t N, std::size_t K, std::size_t cap = kDefaultEnumerationCap);

LabeledBatch assemble_batch(const Dataset& d, const BatchMask& mask);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
  void step(ModelParams& p, const GradientReport& g);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  TensorList<double> m_, v_;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t rounds = 1;
  std::uint64_t seed = 1;
  std::size_t K = 1;
  bool train = false;  // false keeps Θ fixed across rounds
};

// Transforms one worker's upload: (worker, parameter indices, gradients) -> uploaded gradients.
using UploadFilter =
    std::function<TensorList<double>(std::size_t worker, std::size_t round, const std::vector<std::size_t>& param_idx,
                                     TensorList<double> grads)>;

struct RoundResult {
  std::size_t round = 0;
  BatchMask mask;
  GradientReport report;  // what the server sees
  double loss = 0.0;
};

// One protocol round. Workers compute their own tensors' gradients,
// the server sums contributions in worker order.
RoundResult run_round(ModelParams& params, const PartitionedDataset& data, const BatchMask& mask,
                      const TrainConfig& cfg, Optimizer* opt = nullptr, const UploadFilter& filter = {},
                      std::size_t round = 0);

struct RoundLog {
  std::size_t round = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::uint64_t seed = 0;
};

void write_round_log(const std::string& path, const std::vector<RoundLog>& rows);

class Simulator {
 public:
  Simulator(PartitionedDataset data, ModelParams params, TrainConfig cfg);

  void set_upload_filter(UploadFilter f) { filter_ = std::move(f); }
  RoundResult step();
  RoundResult step_with(const BatchMask& mask);

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const PartitionedDataset& data() const { return data_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t round() const { return round_; }
  const std::vector<RoundLog>& log() const { return log_; }

  // Ground truth, for evaluation only: the attacker never reads these.
  Tensor true_representation() const;
  Tensor true_v() const;  // row n = (1/K) dL(x_n,y_n)/du_n
  double full_loss() const;

 private:
  PartitionedDataset data_;
  ModelParams params_;
  TrainConfig cfg_;
  Optimizer opt_;
  Rng mask_rng_;
  UploadFilter filter_;
  std::size_t round_ = 0;
  std::vector<RoundLog> log_;
};

}  // namespace cafe
