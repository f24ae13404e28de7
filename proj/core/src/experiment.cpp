#include "cafe/experiment.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <thread>

#include "cafe/io.hpp"

#ifndef CAFE_VERSION
#define CAFE_VERSION "0.0.0"
#endif

namespace cafe {

namespace fs = std::filesystem;

std::string library_version() { return CAFE_VERSION; }

std::string ExperimentConfig::hash() const { return hash_hex(raw.canonical()); }

// ------------------------------------------------------------------ presets

namespace {

const char* kDeskCafe = R"(# CAFE against a frozen model on synthetic 8x8 blobs.
name = "desk-cafe"
seed = 1
K = 4

[dataset]
kind = "synthetic"
N = 16
height = 8
width = 8
classes = 4

[model]
M = 2
partition = "even"
extractor = "identity"
d2 = 32
activation = "relu"

[attack]
method = "cafe-single"
alpha = 0.01
beta = 1e-5
gamma = 0.001
xi_per_image = 12
lr1 = 0.5
lr2 = 0.5
lr3 = 300
T = 3000
switch1 = 1e-9
switch2 = 5e-9
gated = true
patience = 10
phi1 = 1e-9
phi2 = 5e-9

[defense]
kind = "none"

[train]
optimizer = "sgd"
lr = 0.1
rounds = 2000
attack_while_training = false
window = 200

[sweep]
axis = "gamma"
values = ["default", 0]
)";

const char* kDeskDlg = R"(# DLG on the same instance at K = 8.
name = "desk-dlg"
seed = 1
K = 8

[dataset]
kind = "synthetic"
N = 16
height = 8
width = 8
classes = 4

[model]
M = 2
partition = "even"
extractor = "identity"
d2 = 32
activation = "relu"

[attack]
method = "dlg"
lr3 = 30
T = 3000

[defense]
kind = "none"
)";

const char* kDeskDefense = R"(# CAFE against fake gradients, with the undefended run for reference.
name = "desk-defense"
seed = 1
K = 4

[dataset]
kind = "synthetic"
N = 16
height = 8
width = 8
classes = 4

[model]
M = 2
partition = "even"
extractor = "identity"
d2 = 32
activation = "relu"

[attack]
method = "cafe-single"
gated = false
T = 3000

[defense]
kind = "fake"
nu = 16
sigma2 = 1e-4
tau = 4
max_regenerations = 50
clip_norm = 3
epsilon = 1
delta = 1e-5
compare_undefended = true

[train]
optimizer = "sgd"
lr = 0.1
rounds = 2000
window = 200
)";

const char* kTheoryGrid = R"(# Hessian spectra and recovery bounds for N <= 12.
name = "theory-grid"
seed = 1

[theory]
max_N = 12
bound_sweeps = 3
)";

const std::set<std::string> kKnownKeys = {
    "name", "seed", "K",
    "dataset.kind", "dataset.N", "dataset.height", "dataset.width", "dataset.classes", "dataset.seed",
    "dataset.images", "dataset.labels",
    "model.M", "model.partition", "model.extractor", "model.conv_channels", "model.conv_kernel",
    "model.conv_stride", "model.conv_padding", "model.d2", "model.activation", "model.seed",
    "attack.method", "attack.alpha", "attack.beta", "attack.gamma", "attack.xi_per_image", "attack.lr1",
    "attack.lr2", "attack.lr3", "attack.T", "attack.switch1", "attack.switch2", "attack.gated", "attack.patience",
    "attack.phi1", "attack.phi2", "attack.psnr_target", "attack.trace_every", "attack.backtrack",
    "attack.beta_tv", "attack.kernel_width",
    "defense.kind", "defense.nu", "defense.sigma2", "defense.tau", "defense.max_regenerations",
    "defense.clip_norm", "defense.epsilon", "defense.delta", "defense.compare_undefended",
    "train.optimizer", "train.lr", "train.beta1", "train.beta2", "train.eps", "train.rounds",
    "train.attack_while_training", "train.window",
    "sweep.axis", "sweep.values",
    "theory.max_N", "theory.bound_sweeps",
};

const std::vector<std::string> kAxes = {"K", "alpha", "beta", "gamma", "xi", "M", "lr"};

std::string axis_key(const std::string& axis) {
  if (axis == "K") return "K";
  if (axis == "alpha" || axis == "beta" || axis == "gamma") return "attack." + axis;
  if (axis == "xi") return "attack.xi_per_image";
  if (axis == "M") return "model.M";
  if (axis == "lr") return "train.lr";
  fail(ErrorCode::config, "invalid sweep axis '" + axis + "' (expected K|alpha|beta|gamma|xi|M|lr)");
}

}  // namespace

std::vector<std::string> preset_names() { return {"desk-cafe", "desk-dlg", "desk-defense", "theory-grid"}; }

std::string preset_text(const std::string& name) {
  if (name == "desk-cafe") return kDeskCafe;
  if (name == "desk-dlg") return kDeskDlg;
  if (name == "desk-defense") return kDeskDefense;
  if (name == "theory-grid") return kTheoryGrid;
  fail(ErrorCode::config, "unknown preset '" + name + "'");
}

ExperimentConfig make_config(const KvConfig& kv) {
  for (const auto& [k, v] : kv.values())
    require(kKnownKeys.count(k) != 0, ErrorCode::config, "unknown config key '" + k + "'");
  ExperimentConfig c;
  c.raw = kv;
  c.name = kv.str("name", c.name);
  c.seed = kv.u64("seed", c.seed);
  c.K = kv.count("K", c.K);

  auto& d = c.dataset;
  d.kind = kv.str("dataset.kind", d.kind);
  d.N = kv.count("dataset.N", d.N);
  d.height = kv.count("dataset.height", d.height);
  d.width = kv.count("dataset.width", d.width);
  d.classes = kv.count("dataset.classes", d.classes);
  d.seed = kv.u64("dataset.seed", d.seed);
  d.images = kv.str("dataset.images", d.images);
  d.labels = kv.str("dataset.labels", d.labels);
  require(d.kind == "synthetic" || d.kind == "idx", ErrorCode::config, "dataset.kind must be synthetic or idx");

  auto& m = c.model;
  m.M = kv.count("model.M", m.M);
  m.partition = kv.str("model.partition", m.partition);
  m.extractor = kv.str("model.extractor", m.extractor);
  m.conv_channels = kv.count("model.conv_channels", m.conv_channels);
  m.conv_kernel = kv.count("model.conv_kernel", m.conv_kernel);
  m.conv_stride = kv.count("model.conv_stride", m.conv_stride);
  m.conv_padding = kv.count("model.conv_padding", m.conv_padding);
  m.d2 = kv.count("model.d2", m.d2);
  m.activation = kv.str("model.activation", m.activation);
  m.seed = kv.u64("model.seed", m.seed);
  require(m.extractor == "identity" || m.extractor == "conv", ErrorCode::config,
          "model.extractor must be identity or conv");

  c.method = kv.str("attack.method", c.method);
  require(c.method == "cafe-single" || c.method == "cafe-nested" || c.method == "dlg" || c.method == "cosine" ||
              c.method == "sapag",
          ErrorCode::config, "attack.method must be cafe-single|cafe-nested|dlg|cosine|sapag");
  auto& h = c.hyper;
  h.alpha = kv.num("attack.alpha", h.alpha);
  h.beta = kv.num("attack.beta", h.beta);
  h.gamma = kv.num("attack.gamma", h.gamma);
  h.xi_per_image = kv.num("attack.xi_per_image", h.xi_per_image);
  h.lr1 = kv.num("attack.lr1", h.lr1);
  h.lr2 = kv.num("attack.lr2", h.lr2);
  h.lr3 = kv.num("attack.lr3", h.lr3);
  h.T = kv.count("attack.T", h.T);
  h.switch1 = kv.num("attack.switch1", h.switch1);
  h.switch2 = kv.num("attack.switch2", h.switch2);
  h.gated = kv.flag("attack.gated", h.gated);
  h.patience = kv.count("attack.patience", h.patience);
  h.psnr_target = kv.num("attack.psnr_target", h.psnr_target);
  h.trace_every = kv.count("attack.trace_every", h.trace_every);
  h.backtrack = kv.count("attack.backtrack", h.backtrack);
  c.stop.phi1 = kv.num("attack.phi1", c.stop.phi1);
  c.stop.phi2 = kv.num("attack.phi2", c.stop.phi2);
  if (c.method == "dlg" || c.method == "cosine" || c.method == "sapag") c.baseline.kind = parse_baseline(c.method);
  c.baseline.beta_tv = kv.num("attack.beta_tv", c.baseline.beta_tv);
  c.baseline.kernel_width = kv.num("attack.kernel_width", c.baseline.kernel_width);
  require(h.lr1 > 0 && h.lr2 > 0 && h.lr3 > 0, ErrorCode::config, "attack step sizes must be positive");
  require(h.alpha >= 0 && h.beta >= 0 && h.gamma >= 0 && h.xi_per_image >= 0, ErrorCode::config,
          "attack weights must be non-negative");

  auto& df = c.defense;
  df.kind = parse_defense(kv.str("defense.kind", "none"));
  df.fake.nu = kv.count("defense.nu", df.fake.nu);
  df.fake.sigma2 = kv.num("defense.sigma2", df.fake.sigma2);
  df.fake.tau = kv.num("defense.tau", df.fake.tau);
  df.fake.max_regenerations = kv.count("defense.max_regenerations", df.fake.max_regenerations);
  df.dp.clip_norm = kv.num("defense.clip_norm", df.dp.clip_norm);
  df.dp.epsilon = kv.num("defense.epsilon", df.dp.epsilon);
  df.dp.delta = kv.num("defense.delta", df.dp.delta);
  c.compare_undefended = kv.flag("defense.compare_undefended", c.compare_undefended);

  auto& t = c.train;
  std::string opt = kv.str("train.optimizer", "sgd");
  require(opt == "sgd" || opt == "adam", ErrorCode::config, "train.optimizer must be sgd or adam");
  t.optimizer.kind = opt == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  t.optimizer.lr = kv.num("train.lr", t.optimizer.lr);
  t.optimizer.beta1 = kv.num("train.beta1", t.optimizer.beta1);
  t.optimizer.beta2 = kv.num("train.beta2", t.optimizer.beta2);
  t.optimizer.eps = kv.num("train.eps", t.optimizer.eps);
  t.rounds = kv.count("train.rounds", t.rounds);
  t.attack_while_training = kv.flag("train.attack_while_training", t.attack_while_training);
  t.window = kv.count("train.window", t.window);
  require(t.optimizer.lr > 0 && t.rounds >= 1 && t.window >= 1, ErrorCode::config,
          "train needs lr > 0, rounds >= 1, window >= 1");

  c.sweep_axis = kv.str("sweep.axis", "");
  c.sweep_values = kv.list("sweep.values");
  c.theory_max_n = kv.count("theory.max_N", c.theory_max_n);
  c.theory_bound_sweeps = kv.count("theory.bound_sweeps", c.theory_bound_sweeps);

  require(c.K >= 1 && c.K <= d.N, ErrorCode::config,
          "K = " + std::to_string(c.K) + " must lie in [1, N = " + std::to_string(d.N) + "]");
  if (m.d2 <= d.N)
    warn("theorem2_hypothesis", "d2 = " + std::to_string(m.d2) + " <= N = " + std::to_string(d.N) +
                                    "; step II recovery is not guaranteed");
  return c;
}

ExperimentConfig load_config(const std::string& preset, const std::string& path) {
  require(!preset.empty() || !path.empty(), ErrorCode::usage, "either --config or --preset is required");
  KvConfig kv;
  if (!preset.empty()) kv = KvConfig::parse(preset_text(preset), "preset:" + preset);
  if (!path.empty()) kv.merge(KvConfig::load(path));
  return make_config(kv);
}

ExperimentConfig with_axis(const ExperimentConfig& base, const std::string& axis, const std::string& value) {
  std::string key = axis_key(axis);
  KvConfig kv = base.raw;
  if (value != "default") kv.set(key, value);
  return make_config(kv);
}

// ------------------------------------------------------------------ data

Dataset make_synthetic(std::size_t N, std::size_t H, std::size_t W, std::size_t classes, std::uint64_t seed) {
  require(N >= 1 && H >= 1 && W >= 1 && classes >= 2, ErrorCode::config, "synthetic dataset needs N, H, W >= 1, C >= 2");
  Rng rng(seed, "data/blobs");
  Dataset d;
  d.image = {1, H, W};
  d.classes = classes;
  d.x = Tensor({N, H * W});
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t blobs = 1 + rng.below(3);
    double best_a = -1.0, best_y = 0.0, best_x = 0.0;
    for (std::size_t j = 0; j < blobs; ++j) {
      double cy = rng.uniform() * static_cast<double>(H - 1);
      double cx = rng.uniform() * static_cast<double>(W - 1);
      double s = 1.0 + 1.5 * rng.uniform();
      double a = 0.4 + 0.6 * rng.uniform();
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          d.x(i, y * W + x) += a * std::exp(-(dy * dy + dx * dx) / (2.0 * s * s));
        }
      if (a > best_a) {
        best_a = a;
        best_y = cy;
        best_x = cx;
      }
    }
    for (std::size_t k = 0; k < H * W; ++k) d.x(i, k) = std::min(1.0, d.x(i, k));
    int q = (best_y >= static_cast<double>(H) / 2.0 ? 2 : 0) + (best_x >= static_cast<double>(W) / 2.0 ? 1 : 0);
    d.y.push_back(q % static_cast<int>(classes));
  }
  return d;
}

Instance build_instance(const ExperimentConfig& cfg) {
  Dataset d;
  if (cfg.dataset.kind == "idx") {
    require(!cfg.dataset.images.empty() && !cfg.dataset.labels.empty(), ErrorCode::config,
            "dataset.kind = idx needs dataset.images and dataset.labels");
    d = load_idx(cfg.dataset.images, cfg.dataset.labels, cfg.dataset.N, cfg.dataset.classes);
    require(d.size() >= cfg.K, ErrorCode::config, "IDX file holds fewer samples than K");
  } else {
    d = make_synthetic(cfg.dataset.N, cfg.dataset.height, cfg.dataset.width, cfg.dataset.classes, cfg.data_seed());
  }
  auto pd = partition_dataset(d, cfg.model.M, parse_partition_scheme(cfg.model.partition));
  std::vector<std::vector<LayerSpec>> ext;
  for (std::size_t m = 0; m < pd.M(); ++m) {
    if (cfg.model.extractor == "conv")
      ext.push_back({LayerSpec::conv2d(cfg.model.conv_channels, cfg.model.conv_kernel, cfg.model.conv_stride,
                                       cfg.model.conv_padding)});
    else
      ext.push_back({LayerSpec::identity()});
  }
  LayerSpec act;
  act.kind = parse_layer_kind(cfg.model.activation);
  require(act.kind == LayerKind::relu || act.kind == LayerKind::sigmoid || act.kind == LayerKind::identity,
          ErrorCode::config, "model.activation must be relu, sigmoid or identity");
  Architecture arch(d.x.cols(), pd.slices, ext, cfg.model.d2, {act, LayerSpec::dense(d.classes)});
  return {std::move(pd), init_params(arch, cfg.model_seed())};
}

Simulator make_simulator(const ExperimentConfig& cfg, bool train) {
  auto inst = build_instance(cfg);
  TrainConfig tc;
  tc.optimizer = cfg.train.optimizer;
  tc.rounds = cfg.train.rounds;
  tc.seed = cfg.seed;
  tc.K = cfg.K;
  tc.train = train;
  return Simulator(std::move(inst.data), std::move(inst.params), tc);
}

// ------------------------------------------------------------------ runs

AttackRun execute_attack(const ExperimentConfig& cfg, const DefenseSpec& defense) {
  Simulator sim = make_simulator(cfg, cfg.train.attack_while_training);
  AttackRun run;
  auto audit = std::make_shared<std::vector<AuditRow>>();
  install_defense(sim, defense, cfg.seed, audit);
  run.method = cfg.method;
  if (cfg.method == "cafe-single")
    run.result = run_single_loop(sim, cfg.hyper, cfg.seed);
  else if (cfg.method == "cafe-nested")
    run.result = run_nested(sim, cfg.hyper, cfg.stop, cfg.seed);
  else
    run.result = run_baseline(sim, cfg.baseline, cfg.hyper, cfg.seed);
  run.audit = std::move(*audit);
  run.rounds = sim.log();
  return run;
}

TrainRun execute_training(const ExperimentConfig& cfg, const DefenseSpec& defense) {
  Simulator sim = make_simulator(cfg, true);
  auto audit = std::make_shared<std::vector<AuditRow>>();
  install_defense(sim, defense, cfg.seed, audit);
  TrainRun run;
  double acc = 0.0;
  std::size_t in_window = 0;
  for (std::size_t t = 0; t < cfg.train.rounds; ++t) {
    auto r = sim.step();
    acc += r.loss;
    if (++in_window == cfg.train.window) {
      run.window_means.push_back(acc / static_cast<double>(in_window));
      acc = 0.0;
      in_window = 0;
    }
  }
  if (in_window) run.window_means.push_back(acc / static_cast<double>(in_window));
  run.final_loss = sim.full_loss();
  run.rounds = sim.log();
  run.audit = std::move(*audit);
  return run;
}

std::vector<TheoryRow> theory_grid(std::size_t max_n, std::size_t bound_sweeps, std::uint64_t seed) {
  std::vector<TheoryRow> rows;
  for (std::size_t N = 2; N <= max_n; ++N)
    for (std::size_t K = 1; K <= N; ++K) {
      Rng rng(seed, "theory/" + std::to_string(N) + "/" + std::to_string(K));
      std::size_t d1 = 3, d2 = N + 3;
      Tensor Vs({N, d2}), Hs({N, d1}), G({N, d2});
      for (auto& v : Vs.data()) v = rng.normal();
      for (auto& v : Hs.data()) v = rng.uniform();
      for (auto& v : G.data()) v = rng.normal();
      TheoryRow r{N, K, min_eigenvalue(build_h11(N, K).m), min_eigenvalue(build_g11(G, N, K).m), 0.0};
      std::vector<MaskObservation> obs;
      for (const auto& m : enumerate_masks(N, K)) {
        MaskObservation o{m, Tensor({d2}), Tensor({d1, d2})};
        for (auto n : m.indices())
          for (std::size_t b = 0; b < d2; ++b) {
            o.grad_b1[b] += Vs(n, b);
            for (std::size_t a = 0; a < d1; ++a) o.grad_w1(a, b) += Hs(n, a) * Vs(n, b);
          }
        obs.push_back(std::move(o));
      }
      auto V = solve_step1(obs, N, d2, 0.5, bound_sweeps, 0.0, seed).value;
      auto H = solve_step2(obs, V, d1, 0.5, bound_sweeps, 0.0, seed).value;
      auto bc = evaluate_bound(V, Vs, H, Hs, K);
      r.bound_residual = bc.bound - bc.measured;
      rows.push_back(r);
    }
  return rows;
}

// ------------------------------------------------------------------ commands

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::io, "cannot create output directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

std::string run_id(const ExperimentConfig& cfg) { return cfg.name + "-s" + std::to_string(cfg.seed); }

Shape3 image_layout(const ExperimentConfig& cfg, const Dataset& d) {
  (void)cfg;
  return d.image.size() == d.x.cols() ? d.image : Shape3{1, 1, d.x.cols()};
}

}  // namespace

void write_manifest(const ExperimentConfig& cfg, const RunContext& ctx, const std::vector<std::string>& artifacts) {
  nlohmann::ordered_json j;
  j["command"] = ctx.command;
  j["name"] = cfg.name;
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.seed;
  j["versions"] = {{"cafe", library_version()},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"libpng", png_version()},
                   {"compiler", __VERSION__},
                   {"cxx_standard", __cplusplus}};
  j["config"] = cfg.raw.canonical();
  j["artifacts"] = artifacts;
  nlohmann::ordered_json w = nlohmann::ordered_json::array();
  for (const auto& x : peek_warnings()) w.push_back({{"code", x.code}, {"message", x.message}});
  j["warnings"] = w;
  std::ofstream f(join(ctx.out_dir, "manifest.json"));
  require(static_cast<bool>(f), ErrorCode::io, "cannot write manifest in '" + ctx.out_dir + "'");
  f << j.dump(2) << '\n';
}

int cmd_train(const ExperimentConfig& cfg, const RunContext& ctx) {
  ensure_dir(ctx.out_dir);
  std::vector<std::string> artifacts;
  std::vector<std::pair<DefenseSpec, std::string>> runs;
  if (cfg.compare_undefended && cfg.defense.kind != DefenseKind::none) runs.push_back({DefenseSpec{}, "none"});
  runs.push_back({cfg.defense, defense_name(cfg.defense.kind)});

  std::ofstream summary(join(ctx.out_dir, "train_summary.csv"));
  require(static_cast<bool>(summary), ErrorCode::io, "cannot write train summary");
  summary << "run_id,defense,final_loss,first_window,last_window\n";
  char buf[256];
  for (const auto& [spec, name] : runs) {
    auto run = execute_training(cfg, spec);
    std::string log = "round_log_" + name + ".csv";
    write_round_log(join(ctx.out_dir, log), run.rounds);
    artifacts.push_back(log);
    std::ofstream wf(join(ctx.out_dir, "train_windows_" + name + ".csv"));
    wf << "window,mean_loss\n";
    for (std::size_t i = 0; i < run.window_means.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.9e\n", i, run.window_means[i]);
      wf << buf;
    }
    artifacts.push_back("train_windows_" + name + ".csv");
    if (!run.audit.empty()) {
      write_audit(join(ctx.out_dir, "defense_audit_" + name + ".csv"), run.audit);
      artifacts.push_back("defense_audit_" + name + ".csv");
    }
    std::snprintf(buf, sizeof buf, "%s,%s,%.9e,%.9e,%.9e\n", run_id(cfg).c_str(), name.c_str(), run.final_loss,
                  run.window_means.front(), run.window_means.back());
    summary << buf;
  }
  artifacts.push_back("train_summary.csv");
  write_manifest(cfg, ctx, artifacts);
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, const RunContext& ctx) {
  ensure_dir(ctx.out_dir);
  std::vector<std::string> artifacts;
  std::vector<MetricsRow> metrics;
  std::vector<std::pair<DefenseSpec, std::string>> runs;
  if (cfg.compare_undefended && cfg.defense.kind != DefenseKind::none) runs.push_back({DefenseSpec{}, "none"});
  runs.push_back({cfg.defense, defense_name(cfg.defense.kind)});
  bool baseline = cfg.method != "cafe-single" && cfg.method != "cafe-nested";

  Dataset real = build_instance(cfg).data.data;
  Shape3 layout = image_layout(cfg, real);
  std::size_t cols = std::min<std::size_t>(8, real.size());
  save_png_grid(real.x, layout, cols, join(ctx.out_dir, "real.png"));
  artifacts.push_back("real.png");

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& [spec, name] = runs[i];
    bool primary = i + 1 == runs.size();
    std::string suffix = primary ? "" : "_" + name;
    auto run = execute_attack(cfg, spec);
    write_trace(join(ctx.out_dir, "trace" + suffix + ".csv"), run.result.trace);
    write_round_log(join(ctx.out_dir, "round_log" + suffix + ".csv"), run.rounds);
    save_png_grid(run.result.state.X, layout, cols, join(ctx.out_dir, "recovered" + suffix + ".png"));
    artifacts.insert(artifacts.end(),
                     {"trace" + suffix + ".csv", "round_log" + suffix + ".csv", "recovered" + suffix + ".png"});
    if (!run.audit.empty()) {
      write_audit(join(ctx.out_dir, "defense_audit" + suffix + ".csv"), run.audit);
      artifacts.push_back("defense_audit" + suffix + ".csv");
    }
    metrics.push_back({run_id(cfg), cfg.method + "@" + name, run.result.final_psnr, run.result.final_mse});
    if (baseline) {
      auto pm = match_best_permutation(real.x, run.result.state.X);
      metrics.push_back({run_id(cfg), cfg.method + "-matched@" + name, pm.metrics.psnr_db, pm.metrics.mse});
    }
  }
  write_metrics_csv(join(ctx.out_dir, "metrics.csv"), metrics);
  artifacts.push_back("metrics.csv");
  write_manifest(cfg, ctx, artifacts);
  return 0;
}

int cmd_verify_theory(const ExperimentConfig& cfg, const RunContext& ctx) {
  ensure_dir(ctx.out_dir);
  require(cfg.theory_max_n >= 2, ErrorCode::config, "theory.max_N must be >= 2");
  auto rows = theory_grid(cfg.theory_max_n, cfg.theory_bound_sweeps, cfg.seed);
  write_theory_csv(join(ctx.out_dir, "theory.csv"), rows);

  std::ofstream sf(join(ctx.out_dir, "spectrum.csv"));
  require(static_cast<bool>(sf), ErrorCode::io, "cannot write spectrum report");
  sf << "N,K,prefactor,max_err_scaled,max_err_unscaled\n";
  char buf[160];
  for (std::size_t N = 3; N <= cfg.theory_max_n; ++N)
    for (std::size_t K = 2; K < N; ++K) {
      auto s = h11_eigvals(N, K);
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.12e,%.3e,%.3e\n", N, K, s.prefactor, s.max_err_scaled,
                    s.max_err_unscaled);
      sf << buf;
    }
  write_manifest(cfg, ctx, {"theory.csv", "spectrum.csv"});
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const RunContext& ctx) {
  ensure_dir(ctx.out_dir);
  require(!cfg.sweep_axis.empty(), ErrorCode::config, "sweep.axis is required");
  require(std::find(kAxes.begin(), kAxes.end(), cfg.sweep_axis) != kAxes.end(), ErrorCode::config,
          "invalid sweep axis '" + cfg.sweep_axis + "' (expected K|alpha|beta|gamma|xi|M|lr)");
  require(!cfg.sweep_values.empty(), ErrorCode::config, "sweep.values is empty");
  std::vector<ExperimentConfig> points;
  for (const auto& v : cfg.sweep_values) points.push_back(with_axis(cfg, cfg.sweep_axis, v));

  std::size_t threads = 1;
  if (const char* env = std::getenv("CAFE_LAB_THREADS")) {
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    require(end && *end == '\0' && n >= 1, ErrorCode::config, "CAFE_LAB_THREADS must be a positive integer");
    threads = static_cast<std::size_t>(n);
  }
  threads = std::min(threads, points.size());

  std::vector<MetricsRow> rows(points.size());
  std::vector<std::string> errors(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < points.size();) {
      try {
        auto run = execute_attack(points[i], points[i].defense);
        rows[i] = {run_id(cfg) + "-" + cfg.sweep_axis + "=" + cfg.sweep_values[i], points[i].method,
                   run.result.final_psnr, run.result.final_mse};
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    require(errors[i].empty(), ErrorCode::phase_failure,
            "sweep point " + cfg.sweep_axis + "=" + cfg.sweep_values[i] + ": " + errors[i]);
  write_metrics_csv(join(ctx.out_dir, "sweep.csv"), rows);
  write_manifest(cfg, ctx, {"sweep.csv"});
  return 0;
}

}  // namespace cafe
