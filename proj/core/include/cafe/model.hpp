#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/dual.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

enum class LayerKind { identity, dense, conv2d, relu, sigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::identity;
  std::size_t out_dim = 0;   // dense
  std::size_t channels = 0;  // conv2d output channels
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec identity() { return {}; }
  static LayerSpec dense(std::size_t out) { return {LayerKind::dense, out}; }
  static LayerSpec conv2d(std::size_t ch, std::size_t k, std::size_t stride = 1, std::size_t pad = 0) {
    return {LayerKind::conv2d, 0, ch, k, stride, pad};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid}; }
};

std::string layer_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct Shape3 {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
};

// Which entries of the full feature vector a worker holds, and how the
// worker lays them out spatially.
struct FeatureSlice {
  std::vector<std::size_t> index;
  Shape3 layout;
};

struct ParamInfo {
  std::string id;
  std::vector<std::size_t> shape;
  std::size_t fan_in = 1;
  std::size_t owner = 0;  // worker that computes and uploads this gradient
};

struct LayerSlot {
  LayerSpec spec;
  Shape3 in, out;
  int weight = -1;  // index into the parameter list, -1 if none
  int bias = -1;
};

class Architecture {
 public:
  Architecture() = default;
  Architecture(std::size_t input_dim, std::vector<FeatureSlice> slices,
               std::vector<std::vector<LayerSpec>> extractors, std::size_t d2,
               std::vector<LayerSpec> head);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t workers() const { return slices_.size(); }
  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }
  std::size_t classes() const { return classes_; }
  const std::vector<FeatureSlice>& slices() const { return slices_; }
  const std::vector<std::vector<LayerSlot>>& extractor_slots() const { return ext_; }
  const std::vector<LayerSlot>& head_slots() const { return head_; }
  const std::vector<ParamInfo>& params() const { return params_; }
  std::size_t fc1_weight() const { return fc1_w_; }
  std::size_t fc1_bias() const { return fc1_b_; }
  std::size_t param_index(const std::string& id) const;
  // Offset of worker m's block inside h.
  std::size_t h_offset(std::size_t m) const { return h_off_.at(m); }
  std::size_t param_count() const;

 private:
  std::size_t input_dim_ = 0, d1_ = 0, d2_ = 0, classes_ = 0;
  std::vector<FeatureSlice> slices_;
  std::vector<std::vector<LayerSlot>> ext_;
  std::vector<LayerSlot> head_;
  std::vector<ParamInfo> params_;
  std::vector<std::size_t> h_off_;
  std::size_t fc1_w_ = 0, fc1_b_ = 0;
};

template <class T>
using TensorList = std::vector<BasicTensor<T>>;

struct ModelParams {
  Architecture arch;
  TensorList<double> tensors;  // aligned with arch.params()

  const Tensor& fc1_weight() const { return tensors[arch.fc1_weight()]; }
  const Tensor& fc1_bias() const { return tensors[arch.fc1_bias()]; }
  Tensor& at(const std::string& id) { return tensors[arch.param_index(id)]; }
  const Tensor& at(const std::string& id) const { return tensors[arch.param_index(id)]; }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), one seeded stream per tensor id.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

struct LabeledBatch {
  Tensor inputs;              // K x D
  std::vector<int> labels;    // hard labels, used when soft is empty
  Tensor soft;                // optional K x C probability targets

  std::size_t size() const { return inputs.rows(); }
};

// Named per-parameter gradients from one aggregation round.
struct GradientReport {
  std::size_t round = 0;
  std::vector<std::string> ids;
  TensorList<double> tensors;

  const Tensor& at(const std::string& id) const;
  std::size_t size() const { return tensors.size(); }
};

// Everything one backward pass exposes.
template <class T>
struct Pass {
  T loss{};
  TensorList<T> grads;     // aligned with parameters
  BasicTensor<T> h;        // K x d1
  BasicTensor<T> u;        // K x d2
  BasicTensor<T> du;       // K x d2, dL/du_n including the 1/K batch factor
  BasicTensor<T> dx;       // K x D
  BasicTensor<T> dtarget;  // K x C, dL/dy for the target probabilities
};

// Forward + backward of mean soft-target cross entropy.
template <class T>
Pass<T> forward_backward(const Architecture& arch, const TensorList<T>& params,
                         const BasicTensor<T>& x, const BasicTensor<T>& targets);

template <class T>
BasicTensor<T> extractor_forward(const Architecture& arch, const TensorList<T>& params,
                                 const BasicTensor<T>& x);

// dx for an upstream gradient dh at the representation layer.
Tensor extractor_vjp(const Architecture& arch, const TensorList<double>& params, const Tensor& x,
                     const Tensor& dh);

Tensor forward_representation(const ModelParams& p, const Tensor& x);
Tensor forward_first_fc(const ModelParams& p, const Tensor& h);
Tensor forward_logits(const ModelParams& p, const Tensor& x);
double loss_batch(const ModelParams& p, const LabeledBatch& batch);

struct Backward {
  double loss = 0.0;
  GradientReport grads;
  Tensor h, u, du, dx, dtarget;
};
Backward backward_full(const ModelParams& p, const LabeledBatch& batch);

Tensor batch_targets(const LabeledBatch& batch, std::size_t classes);
Tensor one_hot(const std::vector<int>& labels, std::size_t classes);
Tensor softmax_rows(const Tensor& logits);

GradientReport make_report(const ModelParams& p, TensorList<double> grads, std::size_t round = 0);
GradientReport zero_report(const ModelParams& p);

// Flattened concatenation in parameter order.
std::vector<double> flatten(const TensorList<double>& ts);
double report_sq_norm(const GradientReport& g);

// Identity extractor over an image split into slices; canonical desk model
// when `head` is {relu, dense(C)}.
Architecture identity_architecture(std::size_t input_dim, std::vector<FeatureSlice> slices,
                                   std::size_t d2, std::vector<LayerSpec> head);

}  // namespace cafe
