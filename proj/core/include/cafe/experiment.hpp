#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cafe/attack.hpp"
#include "cafe/baselines.hpp"
#include "cafe/config.hpp"
#include "cafe/defense.hpp"
#include "cafe/metrics.hpp"
#include "cafe/theory.hpp"
#include "cafe/vfl.hpp"

namespace cafe {

std::string library_version();

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | idx
  std::size_t N = 16, height = 8, width = 8, classes = 4;
  std::uint64_t seed = 0;          // 0: use the run seed
  std::string images, labels;
};

struct ModelSpec {
  std::size_t M = 2;
  std::string partition = "even";
  std::string extractor = "identity";  // identity | conv
  std::size_t conv_channels = 2, conv_kernel = 3, conv_stride = 1, conv_padding = 1;
  std::size_t d2 = 32;
  std::string activation = "relu";
  std::uint64_t seed = 0;
};

struct TrainSpec {
  OptimizerConfig optimizer;
  std::size_t rounds = 2000;
  bool attack_while_training = false;
  std::size_t window = 200;  // rounds per loss-average window
};

struct ExperimentConfig {
  std::string name = "custom";
  std::uint64_t seed = 1;
  std::size_t K = 4;
  DatasetSpec dataset;
  ModelSpec model;
  std::string method = "cafe-single";  // cafe-single | cafe-nested | dlg | cosine | sapag
  AttackHyper hyper;
  StopCriteria stop;
  BaselineConfig baseline;
  DefenseSpec defense;
  bool compare_undefended = false;
  TrainSpec train;
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  std::size_t theory_max_n = 12;
  std::size_t theory_bound_sweeps = 3;
  KvConfig raw;

  std::string hash() const;
  std::uint64_t data_seed() const { return dataset.seed ? dataset.seed : seed; }
  std::uint64_t model_seed() const { return model.seed ? model.seed : seed; }
};

std::vector<std::string> preset_names();
std::string preset_text(const std::string& name);
// Unknown keys are rejected.
ExperimentConfig make_config(const KvConfig& kv);
ExperimentConfig load_config(const std::string& preset, const std::string& path);
// Applies one sweep axis value ("default" keeps the base value).
ExperimentConfig with_axis(const ExperimentConfig& base, const std::string& axis, const std::string& value);

// Low-frequency Gaussian blobs; the label is the quadrant of the brightest blob.
Dataset make_synthetic(std::size_t N, std::size_t height, std::size_t width, std::size_t classes, std::uint64_t seed);

struct Instance {
  PartitionedDataset data;
  ModelParams params;
};
Instance build_instance(const ExperimentConfig& cfg);
Simulator make_simulator(const ExperimentConfig& cfg, bool train);

struct AttackRun {
  AttackResult result;
  std::string method;
  std::vector<AuditRow> audit;
  std::vector<RoundLog> rounds;
};
AttackRun execute_attack(const ExperimentConfig& cfg, const DefenseSpec& defense);

struct TrainRun {
  std::vector<RoundLog> rounds;
  std::vector<double> window_means;  // mean batch loss per window
  double final_loss = 0.0;           // full-dataset loss after training
  std::vector<AuditRow> audit;
};
TrainRun execute_training(const ExperimentConfig& cfg, const DefenseSpec& defense);

std::vector<TheoryRow> theory_grid(std::size_t max_n, std::size_t bound_sweeps, std::uint64_t seed);

struct RunContext {
  std::string out_dir;
  std::string command;
};

// Each writes its artifacts plus manifest.json into ctx.out_dir.
int cmd_train(const ExperimentConfig& cfg, const RunContext& ctx);
int cmd_attack(const ExperimentConfig& cfg, const RunContext& ctx);
int cmd_verify_theory(const ExperimentConfig& cfg, const RunContext& ctx);
int cmd_sweep(const ExperimentConfig& cfg, const RunContext& ctx);

void write_manifest(const ExperimentConfig& cfg, const RunContext& ctx, const std::vector<std::string>& artifacts);

}  // namespace cafe
