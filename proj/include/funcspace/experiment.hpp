#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "funcspace/continual.hpp"
#include "funcspace/dataset.hpp"
#include "funcspace/metrics.hpp"
#include "funcspace/network.hpp"
#include "funcspace/optim.hpp"
#include "funcspace/snapshot.hpp"

namespace funcspace {

enum class ExperimentKind {
  Train,
  Distances,
  Embed,
  Forget,
  CompareOptimizers,
  EstimatorConvergence,
};

ExperimentKind parse_experiment_kind(const std::string& name);
std::string experiment_kind_name(ExperimentKind k);

struct DatasetSpec {
  std::string source = "synth";  // synth | idx | mnist
  // synth
  std::string synth_kind = "blobs";  // blobs | permutable-grid
  long n_train = 2000;
  long n_test = 500;
  int classes = 4;
  int dim = 0;  // 0 = generator default
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // mnist: resolved under `root` (or FUNCSPACE_DATA when empty)
  std::string root;
  long subsample = 0;  // 0 = keep all training examples
};

struct OptimizerSpec {
  std::string type = "sgd";  // sgd | adam | hcgd | ngd
  SgdConfig sgd;
  AdamConfig adam;
  HcgdConfig hcgd;
  NgdConfig ngd;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Train;
  DatasetSpec data;
  std::vector<int> hidden = {100};
  Activation activation = Activation::Relu;
  OptimizerSpec optimizer;
  long epochs = 5;
  long batch_size = 128;
  long probe_size = 1024;
  long snapshot_every = 1;  // steps between probe snapshots
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";

  // multi-run kinds
  std::vector<std::uint64_t> seeds;
  // estimator-convergence
  std::vector<long> sample_sizes = {32, 64, 128, 256, 512, 1024, 2048};
  // forget
  std::vector<std::string> methods = {"adam", "adam_retrain", "l2_memory", "ewc"};
  long tasks = 8;
  long epochs_per_task = 10;
  ContinualConfig continual;

  std::string raw_json;  // config file echo for run.json
};

ExperimentConfig load_config(const std::string& path);

// Outcome summary; detailed artifacts land in out_dir as CSV/FSNP files.
struct RunLog {
  std::string kind;
  std::vector<std::string> outputs;  // emitted file names (relative to out_dir)
  double wall_clock_seconds = 0.0;
  std::string status = "ok";
};

// Runs the configured experiment and emits run.json plus kind-specific CSV
// artifacts into cfg.out_dir. On a module error the partial state is flagged
// in run.json and the error rethrown.
RunLog run_experiment(const ExperimentConfig& cfg);

// --- pieces shared between experiment kinds and the acceptance suite ---

struct StepRecord {
  long step = 0;
  long epoch = 0;
  double loss = 0.0;
  double penalty = 0.0;
  long passes = 0;
  double update_norm = 0.0;
  double probe_increment = 0.0;  // function distance from previous snapshot, at snapshot steps
};

struct TrainResult {
  std::vector<Snapshot> snapshots;  // kept only when spec.keep_snapshots
  std::vector<StepRecord> steps;
  std::vector<double> epoch_test_acc;  // accuracy at each epoch boundary
  std::vector<double> epoch_cum_sq_path;  // cumulative squared function path at boundaries
  double test_accuracy = 0.0;
  long total_passes = 0;
  Eigen::VectorXd init_params;
  Eigen::VectorXd final_params;
};

// Sentinel for TrainSpec::probe_seed: draw the probe from TrainSpec::seed.
inline constexpr std::uint64_t kProbeFollowsSeed = ~std::uint64_t{0};

struct TrainSpec {
  std::vector<int> hidden = {100};
  Activation activation = Activation::Relu;
  OptimizerSpec opt;
  long epochs = 5;
  long batch_size = 128;
  long probe_size = 1024;
  long snapshot_every = 1;
  bool keep_snapshots = true;
  bool eval_epochs = false;  // record test accuracy per epoch
  std::uint64_t seed = 1;
  // Multi-run comparisons must pin this to one value so every run records
  // outputs on the same probe batch; otherwise the probe follows `seed`.
  std::uint64_t probe_seed = kProbeFollowsSeed;
};

// Trains one network, tracking function-space movement on a fixed probe
// batch drawn from the test split at run start.
TrainResult train_run(const Dataset& train, const Dataset& test, const TrainSpec& spec);

// Probe inputs used by train_run for the given spec/seed (for oracles).
Eigen::MatrixXd probe_inputs(const Dataset& test, long probe_size, std::uint64_t seed);

// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);

// Resolves the dataset pair for a config (train, test).
std::pair<Dataset, Dataset> load_dataset_pair(const DatasetSpec& spec, std::uint64_t seed);

}  // namespace funcspace
