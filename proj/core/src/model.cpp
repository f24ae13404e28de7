#include "cafe/model.hpp"

#include <algorithm>
#include <cmath>

#include "cafe/rng.hpp"

namespace cafe {

std::string layer_name(LayerKind k) {
  switch (k) {
    case LayerKind::identity: return "identity";
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::identity, LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::sigmoid})
    if (layer_name(k) == s) return k;
  fail(ErrorCode::config, "unknown layer kind '" + s + "'");
}

namespace {

LayerSlot make_slot(const LayerSpec& spec, Shape3 in, const std::string& prefix, std::size_t owner,
                    std::vector<ParamInfo>& params) {
  LayerSlot s{spec, in, in, -1, -1};
  switch (spec.kind) {
    case LayerKind::identity:
    case LayerKind::relu:
    case LayerKind::sigmoid:
      break;
    case LayerKind::dense: {
      require(spec.out_dim > 0, ErrorCode::config, prefix + ": dense layer needs out_dim > 0");
      s.out = {spec.out_dim, 1, 1};
      s.weight = static_cast<int>(params.size());
      params.push_back({prefix + ".weight", {in.size(), spec.out_dim}, in.size(), owner});
      s.bias = static_cast<int>(params.size());
      params.push_back({prefix + ".bias", {spec.out_dim}, in.size(), owner});
      break;
    }
    case LayerKind::conv2d: {
      require(spec.channels > 0 && spec.kernel > 0 && spec.stride > 0, ErrorCode::config,
              prefix + ": conv2d needs channels, kernel and stride > 0");
      std::size_t ph = in.h + 2 * spec.padding, pw = in.w + 2 * spec.padding;
      require(ph >= spec.kernel && pw >= spec.kernel, ErrorCode::dimension,
              prefix + ": conv kernel larger than padded input");
      s.out = {spec.channels, (ph - spec.kernel) / spec.stride + 1, (pw - spec.kernel) / spec.stride + 1};
      std::size_t fan = in.c * spec.kernel * spec.kernel;
      s.weight = static_cast<int>(params.size());
      params.push_back({prefix + ".weight", {spec.channels, in.c, spec.kernel, spec.kernel}, fan, owner});
      s.bias = static_cast<int>(params.size());
      params.push_back({prefix + ".bias", {spec.channels}, fan, owner});
      break;
    }
  }
  return s;
}

}  // namespace

Architecture::Architecture(std::size_t input_dim, std::vector<FeatureSlice> slices,
                           std::vector<std::vector<LayerSpec>> extractors, std::size_t d2,
                           std::vector<LayerSpec> head)
    : input_dim_(input_dim), d2_(d2), slices_(std::move(slices)) {
  require(!slices_.empty(), ErrorCode::config, "at least one worker slice is required");
  require(extractors.size() == slices_.size(), ErrorCode::config,
          "one extractor per worker is required (" + std::to_string(slices_.size()) + " workers, " +
              std::to_string(extractors.size()) + " extractors)");
  require(d2 > 0, ErrorCode::config, "d2 must be positive");
  for (std::size_t m = 0; m < slices_.size(); ++m) {
    const auto& sl = slices_[m];
    require(!sl.index.empty(), ErrorCode::config, "worker " + std::to_string(m) + " holds no features");
    require(sl.index.size() == sl.layout.size(), ErrorCode::dimension,
            "worker " + std::to_string(m) + " slice layout does not match its feature count");
    for (auto i : sl.index) require(i < input_dim, ErrorCode::dimension, "feature index out of range");
    std::vector<LayerSlot> slots;
    Shape3 cur = sl.layout;
    for (std::size_t j = 0; j < extractors[m].size(); ++j) {
      slots.push_back(make_slot(extractors[m][j], cur,
                                "ext" + std::to_string(m) + ".l" + std::to_string(j), m, params_));
      cur = slots.back().out;
    }
    h_off_.push_back(d1_);
    d1_ += cur.size();
    ext_.push_back(std::move(slots));
  }
  fc1_w_ = params_.size();
  params_.push_back({"fc1.weight", {d1_, d2_}, d1_, 0});
  fc1_b_ = params_.size();
  params_.push_back({"fc1.bias", {d2_}, d1_, 0});
  Shape3 cur{d2_, 1, 1};
  bool has_dense = false;
  for (std::size_t j = 0; j < head.size(); ++j) {
    require(head[j].kind != LayerKind::conv2d, ErrorCode::config, "conv2d is not allowed in the head");
    head_.push_back(make_slot(head[j], cur, "head.l" + std::to_string(j), 0, params_));
    cur = head_.back().out;
    has_dense = has_dense || head[j].kind == LayerKind::dense;
  }
  require(has_dense, ErrorCode::config, "head must contain a dense classifier layer");
  classes_ = cur.size();
  require(classes_ >= 2, ErrorCode::config, "classifier needs at least two classes");
}

std::size_t Architecture::param_index(const std::string& id) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].id == id) return i;
  fail(ErrorCode::invalid_argument, "unknown parameter id '" + id + "'");
}

std::size_t Architecture::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += Tensor::count(p.shape);
  return n;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams p{arch, {}};
  for (const auto& info : arch.params()) {
    Rng rng(seed, "init/" + info.id);
    double b = 1.0 / std::sqrt(static_cast<double>(info.fan_in));
    Tensor t(info.shape);
    for (auto& v : t.data()) v = rng.uniform(-b, b);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

const Tensor& GradientReport::at(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return tensors[i];
  fail(ErrorCode::invalid_argument, "gradient report has no tensor '" + id + "'");
}

namespace {

template <class T>
T relu_of(const T& a) {
  return value_of(a) > 0.0 ? a : T(0.0);
}

template <class T>
T sigmoid_of(const T& a) {
  using std::exp;
  return T(1.0) / (T(1.0) + exp(-a));
}

// One layer over a K x size activation block.
template <class T>
BasicTensor<T> layer_forward(const LayerSlot& s, const TensorList<T>& P, const BasicTensor<T>& in) {
  std::size_t K = in.rows();
  switch (s.spec.kind) {
    case LayerKind::identity:
      return in;
    case LayerKind::relu: {
      BasicTensor<T> out = in;
      for (auto& v : out.data()) v = relu_of(v);
      return out;
    }
    case LayerKind::sigmoid: {
      BasicTensor<T> out = in;
      for (auto& v : out.data()) v = sigmoid_of(v);
      return out;
    }
    case LayerKind::dense: {
      const auto& W = P[s.weight];
      const auto& b = P[s.bias];
      std::size_t I = s.in.size(), O = s.out.size();
      BasicTensor<T> out({K, O});
      for (std::size_t n = 0; n < K; ++n) {
        T* o = out.row(n);
        for (std::size_t j = 0; j < O; ++j) o[j] = b[j];
        const T* x = in.row(n);
        for (std::size_t i = 0; i < I; ++i) {
          const T* w = W.ptr() + i * O;
          for (std::size_t j = 0; j < O; ++j) o[j] += x[i] * w[j];
        }
      }
      return out;
    }
    case LayerKind::conv2d: {
      const auto& W = P[s.weight];
      const auto& b = P[s.bias];
      const std::size_t k = s.spec.kernel, st = s.spec.stride;
      const long pad = static_cast<long>(s.spec.padding);
      BasicTensor<T> out({K, s.out.size()});
      for (std::size_t n = 0; n < K; ++n) {
        const T* x = in.row(n);
        T* o = out.row(n);
        for (std::size_t oc = 0; oc < s.out.c; ++oc)
          for (std::size_t oy = 0; oy < s.out.h; ++oy)
            for (std::size_t ox = 0; ox < s.out.w; ++ox) {
              T acc = b[oc];
              for (std::size_t ic = 0; ic < s.in.c; ++ic)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  long iy = static_cast<long>(oy * st + ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(s.in.h)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    long ix = static_cast<long>(ox * st + kx) - pad;
                    if (ix < 0 || ix >= static_cast<long>(s.in.w)) continue;
                    acc += x[(ic * s.in.h + iy) * s.in.w + ix] * W[((oc * s.in.c + ic) * k + ky) * k + kx];
                  }
                }
              o[(oc * s.out.h + oy) * s.out.w + ox] = acc;
            }
      }
      return out;
    }
  }
  fail(ErrorCode::internal, "unhandled layer kind");
}

template <class T>
BasicTensor<T> layer_backward(const LayerSlot& s, const TensorList<T>& P, const BasicTensor<T>& in,
                              const BasicTensor<T>& out, const BasicTensor<T>& dout, TensorList<T>* grads) {
  std::size_t K = in.rows();
  switch (s.spec.kind) {
    case LayerKind::identity:
      return dout;
    case LayerKind::relu: {
      BasicTensor<T> din = dout;
      for (std::size_t i = 0; i < din.size(); ++i)
        if (!(value_of(in[i]) > 0.0)) din[i] = T(0.0);
      return din;
    }
    case LayerKind::sigmoid: {
      BasicTensor<T> din = dout;
      for (std::size_t i = 0; i < din.size(); ++i) din[i] = dout[i] * out[i] * (T(1.0) - out[i]);
      return din;
    }
    case LayerKind::dense: {
      const auto& W = P[s.weight];
      std::size_t I = s.in.size(), O = s.out.size();
      BasicTensor<T> din({K, I});
      for (std::size_t n = 0; n < K; ++n) {
        const T* g = dout.row(n);
        const T* x = in.row(n);
        T* d = din.row(n);
        for (std::size_t i = 0; i < I; ++i) {
          const T* w = W.ptr() + i * O;
          T acc(0.0);
          for (std::size_t j = 0; j < O; ++j) acc += g[j] * w[j];
          d[i] = acc;
        }
        if (grads) {
          auto& dW = (*grads)[s.weight];
          auto& db = (*grads)[s.bias];
          for (std::size_t j = 0; j < O; ++j) db[j] += g[j];
          for (std::size_t i = 0; i < I; ++i) {
            T* dw = dW.ptr() + i * O;
            for (std::size_t j = 0; j < O; ++j) dw[j] += x[i] * g[j];
          }
        }
      }
      return din;
    }
    case LayerKind::conv2d: {
      const auto& W = P[s.weight];
      const std::size_t k = s.spec.kernel, st = s.spec.stride;
      const long pad = static_cast<long>(s.spec.padding);
      BasicTensor<T> din({K, s.in.size()});
      for (std::size_t n = 0; n < K; ++n) {
        const T* x = in.row(n);
        const T* g = dout.row(n);
        T* d = din.row(n);
        for (std::size_t oc = 0; oc < s.out.c; ++oc)
          for (std::size_t oy = 0; oy < s.out.h; ++oy)
            for (std::size_t ox = 0; ox < s.out.w; ++ox) {
              const T& go = g[(oc * s.out.h + oy) * s.out.w + ox];
              if (grads) (*grads)[s.bias][oc] += go;
              for (std::size_t ic = 0; ic < s.in.c; ++ic)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  long iy = static_cast<long>(oy * st + ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(s.in.h)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    long ix = static_cast<long>(ox * st + kx) - pad;
                    if (ix < 0 || ix >= static_cast<long>(s.in.w)) continue;
                    std::size_t xi = (ic * s.in.h + iy) * s.in.w + ix;
                    std::size_t wi = ((oc * s.in.c + ic) * k + ky) * k + kx;
                    d[xi] += go * W[wi];
                    if (grads) (*grads)[s.weight][wi] += go * x[xi];
                  }
                }
            }
      }
      return din;
    }
  }
  fail(ErrorCode::internal, "unhandled layer kind");
}

template <class T>
struct ExtractorCache {
  // acts[m][j] is the input of layer j; acts[m].back() the worker output.
  std::vector<std::vector<BasicTensor<T>>> acts;
  BasicTensor<T> h;
};

template <class T>
ExtractorCache<T> run_extractors(const Architecture& arch, const TensorList<T>& P, const BasicTensor<T>& x) {
  require(x.rank() == 2 && x.cols() == arch.input_dim(), ErrorCode::dimension,
          "input " + shape_str(x.shape()) + " does not match feature dimension " +
              std::to_string(arch.input_dim()));
  std::size_t K = x.rows();
  ExtractorCache<T> c;
  c.h = BasicTensor<T>({K, arch.d1()});
  for (std::size_t m = 0; m < arch.workers(); ++m) {
    const auto& sl = arch.slices()[m];
    BasicTensor<T> a({K, sl.index.size()});
    for (std::size_t n = 0; n < K; ++n)
      for (std::size_t i = 0; i < sl.index.size(); ++i) a(n, i) = x(n, sl.index[i]);
    std::vector<BasicTensor<T>> acts;
    acts.push_back(std::move(a));
    for (const auto& slot : arch.extractor_slots()[m]) acts.push_back(layer_forward(slot, P, acts.back()));
    const auto& o = acts.back();
    std::size_t off = arch.h_offset(m), w = o.cols();
    for (std::size_t n = 0; n < K; ++n) std::copy(o.row(n), o.row(n) + w, c.h.row(n) + off);
    c.acts.push_back(std::move(acts));
  }
  return c;
}

template <class T>
BasicTensor<T> backprop_extractors(const Architecture& arch, const TensorList<T>& P, const ExtractorCache<T>& c,
                                   const BasicTensor<T>& dh, TensorList<T>* grads) {
  std::size_t K = dh.rows();
  BasicTensor<T> dx({K, arch.input_dim()});
  for (std::size_t m = 0; m < arch.workers(); ++m) {
    const auto& slots = arch.extractor_slots()[m];
    const auto& acts = c.acts[m];
    std::size_t off = arch.h_offset(m), w = acts.back().cols();
    BasicTensor<T> g({K, w});
    for (std::size_t n = 0; n < K; ++n) std::copy(dh.row(n) + off, dh.row(n) + off + w, g.row(n));
    for (std::size_t j = slots.size(); j-- > 0;) g = layer_backward(slots[j], P, acts[j], acts[j + 1], g, grads);
    const auto& sl = arch.slices()[m];
    for (std::size_t n = 0; n < K; ++n)
      for (std::size_t i = 0; i < sl.index.size(); ++i) dx(n, sl.index[i]) += g(n, i);
  }
  return dx;
}

template <class T>
TensorList<T> zeros_like_params(const Architecture& arch) {
  TensorList<T> g;
  for (const auto& info : arch.params()) g.emplace_back(info.shape);
  return g;
}

template <class T>
BasicTensor<T> fc1_forward(const Architecture& arch, const TensorList<T>& P, const BasicTensor<T>& h) {
  LayerSlot s{LayerSpec::dense(arch.d2()), {arch.d1(), 1, 1}, {arch.d2(), 1, 1},
              static_cast<int>(arch.fc1_weight()), static_cast<int>(arch.fc1_bias())};
  return layer_forward(s, P, h);
}

}  // namespace

template <class T>
BasicTensor<T> extractor_forward(const Architecture& arch, const TensorList<T>& params, const BasicTensor<T>& x) {
  return run_extractors(arch, params, x).h;
}

template <class T>
Pass<T> forward_backward(const Architecture& arch, const TensorList<T>& P, const BasicTensor<T>& x,
                         const BasicTensor<T>& targets) {
  using std::exp;
  using std::log;
  require(P.size() == arch.params().size(), ErrorCode::dimension, "parameter list does not match architecture");
  std::size_t K = x.rows();
  require(K >= 1, ErrorCode::invalid_argument, "empty batch");
  require(targets.rows() == K && targets.cols() == arch.classes(), ErrorCode::dimension,
          "targets " + shape_str(targets.shape()) + " do not match batch/classes");

  Pass<T> r;
  auto cache = run_extractors(arch, P, x);
  r.h = cache.h;
  LayerSlot fc1{LayerSpec::dense(arch.d2()), {arch.d1(), 1, 1}, {arch.d2(), 1, 1},
                static_cast<int>(arch.fc1_weight()), static_cast<int>(arch.fc1_bias())};
  r.u = layer_forward(fc1, P, r.h);
  std::vector<BasicTensor<T>> acts{r.u};
  for (const auto& slot : arch.head_slots()) acts.push_back(layer_forward(slot, P, acts.back()));
  const auto& z = acts.back();
  std::size_t C = arch.classes();

  const T invK(1.0 / static_cast<double>(K));
  BasicTensor<T> dz({K, C});
  r.dtarget = BasicTensor<T>({K, C});
  T loss(0.0);
  for (std::size_t n = 0; n < K; ++n) {
    const T* zr = z.row(n);
    T mx = zr[0];
    for (std::size_t c = 1; c < C; ++c)
      if (value_of(zr[c]) > value_of(mx)) mx = zr[c];
    T se(0.0);
    for (std::size_t c = 0; c < C; ++c) se += exp(zr[c] - mx);
    T lse = mx + log(se);
    T ysum(0.0);
    for (std::size_t c = 0; c < C; ++c) ysum += targets(n, c);
    for (std::size_t c = 0; c < C; ++c) {
      T logp = zr[c] - lse;
      loss -= targets(n, c) * logp;
      r.dtarget(n, c) = -logp * invK;
      dz(n, c) = (exp(logp) * ysum - targets(n, c)) * invK;
    }
  }
  r.loss = loss * invK;

  r.grads = zeros_like_params<T>(arch);
  BasicTensor<T> g = dz;
  const auto& hs = arch.head_slots();
  for (std::size_t j = hs.size(); j-- > 0;) g = layer_backward(hs[j], P, acts[j], acts[j + 1], g, &r.grads);
  r.du = g;
  BasicTensor<T> dh = layer_backward(fc1, P, r.h, r.u, r.du, &r.grads);
  r.dx = backprop_extractors(arch, P, cache, dh, &r.grads);
  return r;
}

template Pass<double> forward_backward(const Architecture&, const TensorList<double>&, const BasicTensor<double>&,
                                       const BasicTensor<double>&);
template Pass<Dual> forward_backward(const Architecture&, const TensorList<Dual>&, const BasicTensor<Dual>&,
                                     const BasicTensor<Dual>&);
template BasicTensor<double> extractor_forward(const Architecture&, const TensorList<double>&,
                                               const BasicTensor<double>&);
template BasicTensor<Dual> extractor_forward(const Architecture&, const TensorList<Dual>&, const BasicTensor<Dual>&);

Tensor extractor_vjp(const Architecture& arch, const TensorList<double>& params, const Tensor& x, const Tensor& dh) {
  require(dh.rows() == x.rows() && dh.cols() == arch.d1(), ErrorCode::dimension, "dh shape mismatch");
  auto cache = run_extractors(arch, params, x);
  return backprop_extractors<double>(arch, params, cache, dh, nullptr);
}

namespace {
Tensor as_batch(const Tensor& x, std::size_t width) {
  if (x.rank() == 2) return x;
  require(x.size() % width == 0 && !x.empty(), ErrorCode::dimension,
          "input of " + std::to_string(x.size()) + " values does not match width " + std::to_string(width));
  Tensor b = x;
  b.reshape({x.size() / width, width});
  return b;
}
}  // namespace

Tensor forward_representation(const ModelParams& p, const Tensor& x) {
  Tensor h = extractor_forward(p.arch, p.tensors, as_batch(x, p.arch.input_dim()));
  if (x.rank() != 2) h.reshape({h.size()});
  return h;
}

Tensor forward_first_fc(const ModelParams& p, const Tensor& h) {
  Tensor u = fc1_forward(p.arch, p.tensors, as_batch(h, p.arch.d1()));
  require(h.rank() != 2 || h.cols() == p.arch.d1(), ErrorCode::dimension, "h width does not match d1");
  if (h.rank() != 2) u.reshape({u.size()});
  return u;
}

Tensor forward_logits(const ModelParams& p, const Tensor& x) {
  Tensor a = fc1_forward(p.arch, p.tensors, extractor_forward(p.arch, p.tensors, as_batch(x, p.arch.input_dim())));
  for (const auto& slot : p.arch.head_slots()) a = layer_forward(slot, p.tensors, a);
  return a;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    require(labels[n] >= 0 && static_cast<std::size_t>(labels[n]) < classes, ErrorCode::invalid_argument,
            "label " + std::to_string(labels[n]) + " outside [0," + std::to_string(classes) + ")");
    t(n, labels[n]) = 1.0;
  }
  return t;
}

Tensor batch_targets(const LabeledBatch& batch, std::size_t classes) {
  if (!batch.soft.empty()) {
    require(batch.soft.rows() == batch.size() && batch.soft.cols() == classes, ErrorCode::dimension,
            "soft targets do not match batch");
    return batch.soft;
  }
  require(batch.labels.size() == batch.size(), ErrorCode::dimension, "label count does not match batch");
  return one_hot(batch.labels, classes);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  for (std::size_t n = 0; n < p.rows(); ++n) {
    double* r = p.row(n);
    double mx = *std::max_element(r, r + p.cols());
    double s = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) s += (r[c] = std::exp(r[c] - mx));
    for (std::size_t c = 0; c < p.cols(); ++c) r[c] /= s;
  }
  return p;
}

double loss_batch(const ModelParams& p, const LabeledBatch& batch) {
  require(batch.size() >= 1, ErrorCode::invalid_argument, "empty batch");
  Tensor z = forward_logits(p, batch.inputs);
  Tensor y = batch_targets(batch, p.arch.classes());
  double loss = 0.0;
  for (std::size_t n = 0; n < z.rows(); ++n) {
    const double* r = z.row(n);
    double mx = *std::max_element(r, r + z.cols());
    double se = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) se += std::exp(r[c] - mx);
    double lse = mx + std::log(se);
    for (std::size_t c = 0; c < z.cols(); ++c) loss -= y(n, c) * (r[c] - lse);
  }
  return loss / static_cast<double>(z.rows());
}

GradientReport make_report(const ModelParams& p, TensorList<double> grads, std::size_t round) {
  GradientReport g;
  g.round = round;
  for (const auto& info : p.arch.params()) g.ids.push_back(info.id);
  g.tensors = std::move(grads);
  return g;
}

GradientReport zero_report(const ModelParams& p) { return make_report(p, zeros_like_params<double>(p.arch)); }

Backward backward_full(const ModelParams& p, const LabeledBatch& batch) {
  auto pass = forward_backward(p.arch, p.tensors, batch.inputs, batch_targets(batch, p.arch.classes()));
  Backward b;
  b.loss = pass.loss;
  b.grads = make_report(p, std::move(pass.grads));
  b.h = std::move(pass.h);
  b.u = std::move(pass.u);
  b.du = std::move(pass.du);
  b.dx = std::move(pass.dx);
  b.dtarget = std::move(pass.dtarget);
  return b;
}

std::vector<double> flatten(const TensorList<double>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

double report_sq_norm(const GradientReport& g) {
  double s = 0.0;
  for (const auto& t : g.tensors) s += sum_sq(t);
  return s;
}

Architecture identity_architecture(std::size_t input_dim, std::vector<FeatureSlice> slices, std::size_t d2,
                                   std::vector<LayerSpec> head) {
  std::vector<std::vector<LayerSpec>> ext(slices.size(), {LayerSpec::identity()});
  return Architecture(input_dim, std::move(slices), std::move(ext), d2, std::move(head));
}

}  // namespace cafe
