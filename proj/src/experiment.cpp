#include "funcspace/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>

#include "json.hpp"

#include "funcspace/csv.hpp"
#include "funcspace/errors.hpp"
#include "funcspace/fsnp.hpp"
#include "funcspace/trajectory.hpp"
#include "funcspace/version.hpp"

namespace funcspace {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "train") return ExperimentKind::Train;
  if (name == "distances") return ExperimentKind::Distances;
  if (name == "embed") return ExperimentKind::Embed;
  if (name == "forget") return ExperimentKind::Forget;
  if (name == "compare-optimizers") return ExperimentKind::CompareOptimizers;
  if (name == "estimator-convergence") return ExperimentKind::EstimatorConvergence;
  throw ConfigError("unknown experiment kind: " + name);
}

std::string experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Train: return "train";
    case ExperimentKind::Distances: return "distances";
    case ExperimentKind::Embed: return "embed";
    case ExperimentKind::Forget: return "forget";
    case ExperimentKind::CompareOptimizers: return "compare-optimizers";
    case ExperimentKind::EstimatorConvergence: return "estimator-convergence";
  }
  throw ConfigError("unknown experiment kind");
}

namespace {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation: " + name);
}

// A silently ignored typo ("data" for "dataset") would run a default
// experiment instead of the configured one, so unknown keys are fatal.
void reject_unknown_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(std::string("config: unknown key \"") + item.key() + "\" in " + where);
  }
}

DatasetSpec parse_dataset(const json& j) {
  reject_unknown_keys(j, "dataset", {"source", "synth_kind", "n_train", "n_test", "classes", "dim",
                                     "train_images", "train_labels", "test_images", "test_labels",
                                     "root", "subsample"});
  DatasetSpec d;
  d.source = j.value("source", d.source);
  d.synth_kind = j.value("synth_kind", d.synth_kind);
  d.n_train = j.value("n_train", d.n_train);
  d.n_test = j.value("n_test", d.n_test);
  d.classes = j.value("classes", d.classes);
  d.dim = j.value("dim", d.dim);
  d.train_images = j.value("train_images", std::string{});
  d.train_labels = j.value("train_labels", std::string{});
  d.test_images = j.value("test_images", std::string{});
  d.test_labels = j.value("test_labels", std::string{});
  d.root = j.value("root", std::string{});
  d.subsample = j.value("subsample", d.subsample);
  return d;
}

OptimizerSpec parse_optimizer(const json& j) {
  OptimizerSpec o;
  o.type = j.value("type", o.type);
  if (o.type == "sgd") {
    reject_unknown_keys(j, "optimizer", {"type", "lr", "momentum", "weight_decay"});
    o.sgd.lr = j.value("lr", o.sgd.lr);
    o.sgd.momentum = j.value("momentum", o.sgd.momentum);
    o.sgd.weight_decay = j.value("weight_decay", o.sgd.weight_decay);
  } else if (o.type == "adam") {
    reject_unknown_keys(j, "optimizer", {"type", "lr", "beta1", "beta2", "eps", "weight_decay"});
    o.adam.lr = j.value("lr", o.adam.lr);
    o.adam.beta1 = j.value("beta1", o.adam.beta1);
    o.adam.beta2 = j.value("beta2", o.adam.beta2);
    o.adam.eps = j.value("eps", o.adam.eps);
    o.adam.weight_decay = j.value("weight_decay", o.adam.weight_decay);
  } else if (o.type == "hcgd") {
    reject_unknown_keys(j, "optimizer", {"type", "lr", "inner_lr", "lambda", "momentum",
                                         "n_corrections", "val_batch_size", "fresh_val", "proposal"});
    o.hcgd.lr = j.value("lr", o.hcgd.lr);
    o.hcgd.inner_lr = j.value("inner_lr", o.hcgd.inner_lr);
    o.hcgd.lambda = j.value("lambda", o.hcgd.lambda);
    o.hcgd.momentum = j.value("momentum", o.hcgd.momentum);
    o.hcgd.n_corrections = j.value("n_corrections", o.hcgd.n_corrections);
    o.hcgd.val_batch_size = j.value("val_batch_size", o.hcgd.val_batch_size);
    o.hcgd.fresh_val_per_correction = j.value("fresh_val", o.hcgd.fresh_val_per_correction);
    const std::string prop = j.value("proposal", std::string("sgd"));
    if (prop == "sgd") o.hcgd.proposal = HcgdProposal::Sgd;
    else if (prop == "adam") o.hcgd.proposal = HcgdProposal::Adam;
    else throw ConfigError("unknown hcgd proposal: " + prop);
  } else if (o.type == "ngd") {
    reject_unknown_keys(j, "optimizer",
                        {"type", "inner_lr", "lambda", "n_corrections", "proposer", "proposer_lr", "fisher"});
    o.ngd.inner_lr = j.value("inner_lr", o.ngd.inner_lr);
    o.ngd.lambda = j.value("lambda", o.ngd.lambda);
    o.ngd.n_corrections = j.value("n_corrections", o.ngd.n_corrections);
    o.ngd.proposer_lr = j.value("proposer_lr", o.ngd.proposer_lr);
    const std::string prop = j.value("proposer", std::string("rmsprop"));
    if (prop == "rmsprop") o.ngd.proposer = NgdProposer::RmsProp;
    else if (prop == "adam") o.ngd.proposer = NgdProposer::Adam;
    else throw ConfigError("unknown ngd proposer: " + prop);
    const std::string fm = j.value("fisher", std::string("empirical"));
    if (fm == "empirical") o.ngd.fisher_mode = FisherMode::Empirical;
    else if (fm == "sampled") o.ngd.fisher_mode = FisherMode::Sampled;
    else throw ConfigError("unknown fisher mode: " + fm);
  } else {
    throw ConfigError("unknown optimizer type: " + o.type);
  }
  return o;
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig cfg;
  cfg.raw_json = j.dump();
  try {
    reject_unknown_keys(j, "config",
                        {"kind", "seed", "out", "dataset", "arch", "optimizer", "epochs", "batch_size",
                         "probe_size", "snapshot_every", "seeds", "sample_sizes", "methods", "tasks",
                         "epochs_per_task", "continual"});
    if (!j.contains("kind")) throw ConfigError("config: missing \"kind\"");
    cfg.kind = parse_experiment_kind(j.at("kind").get<std::string>());
    if (!j.contains("seed")) throw ConfigError("config: missing \"seed\"");
    cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();

    if (j.contains("dataset")) cfg.data = parse_dataset(j.at("dataset"));
    if (j.contains("arch")) {
      const json& a = j.at("arch");
      reject_unknown_keys(a, "arch", {"hidden", "activation"});
      if (a.contains("hidden")) cfg.hidden = a.at("hidden").get<std::vector<int>>();
      if (a.contains("activation")) cfg.activation = parse_activation(a.at("activation"));
    }
    if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j.at("optimizer"));

    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.probe_size = j.value("probe_size", cfg.probe_size);
    cfg.snapshot_every = j.value("snapshot_every", cfg.snapshot_every);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("sample_sizes")) cfg.sample_sizes = j.at("sample_sizes").get<std::vector<long>>();
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.tasks = j.value("tasks", cfg.tasks);
    cfg.epochs_per_task = j.value("epochs_per_task", cfg.epochs_per_task);
    if (j.contains("continual")) {
      const json& c = j.at("continual");
      reject_unknown_keys(c, "continual", {"capacity", "l2_lambda", "l2_squared", "ewc_lambda",
                                           "retrain_every", "fisher_samples", "adam_lr"});
      cfg.continual.capacity = c.value("capacity", cfg.continual.capacity);
      cfg.continual.l2_lambda = c.value("l2_lambda", cfg.continual.l2_lambda);
      cfg.continual.l2_squared = c.value("l2_squared", cfg.continual.l2_squared);
      cfg.continual.ewc_lambda = c.value("ewc_lambda", cfg.continual.ewc_lambda);
      cfg.continual.retrain_every = c.value("retrain_every", cfg.continual.retrain_every);
      cfg.continual.fisher_samples = c.value("fisher_samples", cfg.continual.fisher_samples);
      cfg.continual.adam_lr = c.value("adam_lr", cfg.continual.adam_lr);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }

  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.probe_size < 1 || cfg.snapshot_every < 1)
    throw ConfigError("config: epochs, batch_size, probe_size, snapshot_every must be >= 1");
  if (cfg.data.source == "idx") {
    for (const std::string* p : {&cfg.data.train_images, &cfg.data.train_labels,
                                 &cfg.data.test_images, &cfg.data.test_labels}) {
      if (p->empty()) throw ConfigError("config: idx source needs all four file paths");
      if (!fs::exists(*p)) throw ConfigError("config: missing file " + *p);
    }
  }
  for (const std::string& m : cfg.methods) parse_forget_method(m);
  return cfg;
}

std::pair<Dataset, Dataset> load_dataset_pair(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.source == "synth") {
    SynthKind kind;
    if (spec.synth_kind == "blobs") kind = SynthKind::Blobs;
    else if (spec.synth_kind == "permutable-grid") kind = SynthKind::PermutableGrid;
    else throw ConfigError("unknown synthetic kind: " + spec.synth_kind);
    Dataset train = synth_dataset(kind, spec.n_train, spec.classes, seed, spec.dim, "train");
    Dataset test = synth_dataset(kind, spec.n_test, spec.classes, seed, spec.dim, "test");
    return {std::move(train), std::move(test)};
  }
  Dataset train, test;
  if (spec.source == "idx") {
    train = load_idx(spec.train_images, spec.train_labels);
    test = load_idx(spec.test_images, spec.test_labels);
  } else if (spec.source == "mnist") {
    std::string root = spec.root;
    if (root.empty()) {
      if (const char* env = std::getenv("FUNCSPACE_DATA")) root = env;
    }
    if (root.empty())
      throw ConfigError("mnist source needs dataset.root or the FUNCSPACE_DATA environment variable");
    train = load_idx(root + "/train-images-idx3-ubyte", root + "/train-labels-idx1-ubyte");
    test = load_idx(root + "/t10k-images-idx3-ubyte", root + "/t10k-labels-idx1-ubyte");
  } else {
    throw ConfigError("unknown dataset source: " + spec.source);
  }
  train.split = "train";
  test.split = "test";
  // Classes must agree even if one split lacks the top label.
  train.num_classes = test.num_classes = std::max(train.num_classes, test.num_classes);
  if (spec.subsample > 0 && spec.subsample < train.size()) {
    int classes = train.num_classes;
    train = subset(train, spec.subsample, seed);
    train.num_classes = classes;
  }
  return {std::move(train), std::move(test)};
}

Eigen::MatrixXd probe_inputs(const Dataset& test, long probe_size, std::uint64_t seed) {
  if (probe_size >= test.size()) return test.inputs;
  Rng rng = Rng::stream(seed, streams::kProbe);
  auto idx = rng.sample_without_replacement(static_cast<std::size_t>(test.size()),
                                            static_cast<std::size_t>(probe_size));
  Eigen::MatrixXd probe(probe_size, test.inputs.cols());
  for (long i = 0; i < probe_size; ++i)
    probe.row(i) = test.inputs.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
  return probe;
}

TrainResult train_run(const Dataset& train, const Dataset& test, const TrainSpec& spec) {
  if (train.num_classes < 2) throw ConfigError("train_run: dataset needs at least 2 classes");

  std::vector<int> dims;
  dims.push_back(train.dim());
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(train.num_classes);
  std::vector<Activation> acts(dims.size() - 1, spec.activation);
  acts.back() = Activation::Identity;

  Network net = init_network(dims, acts, OutputMode::Softmax, spec.seed);
  TrainResult res;
  res.init_params = net.params();

  const Eigen::MatrixXd probe = probe_inputs(
      test, spec.probe_size, spec.probe_seed == kProbeFollowsSeed ? spec.seed : spec.probe_seed);
  BatchCycler cycler(train, spec.batch_size, spec.seed);
  BatchCycler val_cycler(train, spec.batch_size, spec.seed, streams::kValidation);

  std::unique_ptr<Sgd> sgd;
  std::unique_ptr<Adam> adam;
  std::unique_ptr<Hcgd> hcgd;
  std::unique_ptr<NgdByGd> ngd;
  const std::size_t pc = static_cast<std::size_t>(net.param_count());
  if (spec.opt.type == "sgd") sgd = std::make_unique<Sgd>(pc, spec.opt.sgd);
  else if (spec.opt.type == "adam") adam = std::make_unique<Adam>(pc, spec.opt.adam);
  else if (spec.opt.type == "hcgd")
    hcgd = std::make_unique<Hcgd>(pc, spec.opt.hcgd, [&](long n) { return val_cycler.next(n); });
  else if (spec.opt.type == "ngd") ngd = std::make_unique<NgdByGd>(pc, spec.opt.ngd, spec.seed);
  else throw ConfigError("unknown optimizer type: " + spec.opt.type);

  const long steps_per_epoch = cycler.batches_per_epoch();
  const long total_steps = spec.epochs * steps_per_epoch;

  Eigen::MatrixXd prev_out = forward(net, probe, OutputMode::Softmax);
  if (spec.keep_snapshots)
    res.snapshots.push_back(Snapshot{0, 0, net.params(), prev_out, ""});

  double cum_sq = 0.0;
  for (long step = 1; step <= total_steps; ++step) {
    Batch b = cycler.next();
    StepInfo si;
    if (sgd) si = sgd->step(net, b);
    else if (adam) si = adam->step(net, b);
    else if (hcgd) si = hcgd->step(net, b);
    else si = ngd->step(net, b);
    if (si.diverged) throw Error("optimizer diverged at step " + std::to_string(step));

    StepRecord rec;
    rec.step = step;
    rec.epoch = (step - 1) / steps_per_epoch;
    rec.loss = si.loss;
    rec.penalty = si.penalty;
    rec.passes = si.passes;
    rec.update_norm = si.update_norm;

    if (step % spec.snapshot_every == 0 || step == total_steps) {
      Eigen::MatrixXd out = forward(net, probe, OutputMode::Softmax);
      L2Estimate inc = l2_distance(prev_out, out);
      rec.probe_increment = inc.distance;
      cum_sq += inc.mean_sq;
      prev_out = std::move(out);
      if (spec.keep_snapshots)
        res.snapshots.push_back(Snapshot{step, rec.epoch, net.params(), prev_out, ""});
    }
    res.steps.push_back(rec);

    if (step % steps_per_epoch == 0) {
      res.epoch_cum_sq_path.push_back(cum_sq);
      if (spec.eval_epochs) res.epoch_test_acc.push_back(accuracy(net, test));
    }
  }

  res.test_accuracy = spec.eval_epochs && !res.epoch_test_acc.empty() ? res.epoch_test_acc.back()
                                                                      : accuracy(net, test);
  if (sgd) res.total_passes = sgd->total_passes();
  else if (adam) res.total_passes = adam->total_passes();
  else if (hcgd) res.total_passes = hcgd->total_passes();
  else res.total_passes = ngd->total_passes();
  res.final_params = net.params();
  return res;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

namespace {

void emit(RunLog& log, const std::string& out_dir, const std::string& name,
          const std::string& content) {
  write_file_atomic(out_dir + "/" + name, content);
  log.outputs.push_back(name);
}

std::string metrics_csv(const std::vector<StepRecord>& steps) {
  CsvBuilder csv;
  csv.row({"step", "epoch", "train_loss", "penalty", "passes", "update_norm",
           "probe_l2_increment"});
  for (const StepRecord& r : steps)
    csv.row({csv_num(r.step), csv_num(r.epoch), csv_num(r.loss), csv_num(r.penalty),
             csv_num(r.passes), csv_num(r.update_norm), csv_num(r.probe_increment)});
  return csv.str();
}

const char* scale_name(RatioScale s) {
  switch (s) {
    case RatioScale::BetweenUpdates: return "between_updates";
    case RatioScale::BetweenEpochs: return "between_epochs";
    case RatioScale::FromInit: return "from_init";
  }
  return "?";
}

std::string ratio_csv(const std::vector<Snapshot>& snaps) {
  CsvBuilder csv;
  csv.row({"step", "scale", "l2_param", "L2_function", "std_single", "n"});
  for (RatioScale s : {RatioScale::BetweenUpdates, RatioScale::BetweenEpochs, RatioScale::FromInit})
    for (const RatioPoint& p : ratio_series(snaps, s))
      csv.row({csv_num(p.step), scale_name(s), csv_num(p.param_dist), csv_num(p.function_dist),
               csv_num(p.std_single), csv_num(p.n)});
  return csv.str();
}

// Per-epoch means of the paired distances, the averaged variant of the
// ratio series.
std::string ratio_epoch_csv(const std::vector<Snapshot>& snaps) {
  std::map<long, long> step_epoch;
  for (const Snapshot& s : snaps) step_epoch[s.step] = s.epoch;
  CsvBuilder csv;
  csv.row({"epoch", "scale", "l2_param", "L2_function"});
  // Plain zeroed accumulators: a default-constructed Eigen vector holds
  // uninitialized coefficients, so it must not seed a running sum.
  struct EpochAcc {
    double param = 0.0, function = 0.0;
    long n = 0;
  };
  for (RatioScale s : {RatioScale::BetweenUpdates, RatioScale::FromInit}) {
    std::map<long, EpochAcc> acc;
    for (const RatioPoint& p : ratio_series(snaps, s)) {
      EpochAcc& slot = acc[step_epoch.at(p.step)];
      slot.param += p.param_dist;
      slot.function += p.function_dist;
      slot.n += 1;
    }
    for (const auto& [epoch, slot] : acc)
      csv.row({csv_num(epoch), scale_name(s), csv_num(slot.param / double(slot.n)),
               csv_num(slot.function / double(slot.n))});
  }
  return csv.str();
}

void save_snapshots_fsnp(RunLog& log, const std::string& out_dir, const std::string& name,
                         const std::vector<Snapshot>& snaps) {
  if (snaps.empty()) return;
  fsnp::File file;
  file.param_len = static_cast<std::uint64_t>(snaps.front().params.size());
  file.probe_n = static_cast<std::uint64_t>(snaps.front().probe_outputs.rows());
  file.probe_k = static_cast<std::uint64_t>(snaps.front().probe_outputs.cols());
  for (const Snapshot& s : snaps) file.records.push_back(fsnp::Record{s.params, s.probe_outputs});
  fsnp::write(out_dir + "/" + name, file);
  log.outputs.push_back(name);
}

std::vector<std::string> run_labels(const std::vector<std::vector<Snapshot>>& runs) {
  std::vector<std::string> labels;
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (const Snapshot& s : runs[r])
      labels.push_back("run" + std::to_string(r) + "_step" + std::to_string(s.step));
  return labels;
}

std::string matrix_csv(const std::vector<std::string>& labels, const Eigen::MatrixXd& values) {
  CsvBuilder csv;
  std::vector<std::string> header{"label"};
  header.insert(header.end(), labels.begin(), labels.end());
  csv.row(header);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::vector<std::string> row{labels[static_cast<std::size_t>(i)]};
    for (Eigen::Index jc = 0; jc < values.cols(); ++jc) row.push_back(csv_num(values(i, jc)));
    csv.row(row);
  }
  return csv.str();
}

TrainSpec base_train_spec(const ExperimentConfig& cfg) {
  TrainSpec ts;
  ts.hidden = cfg.hidden;
  ts.activation = cfg.activation;
  ts.opt = cfg.optimizer;
  ts.epochs = cfg.epochs;
  ts.batch_size = cfg.batch_size;
  ts.probe_size = cfg.probe_size;
  ts.snapshot_every = cfg.snapshot_every;
  ts.seed = cfg.seed;
  return ts;
}

std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& cfg, std::size_t default_count) {
  if (!cfg.seeds.empty()) return cfg.seeds;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < default_count; ++i) seeds.push_back(cfg.seed + i);
  return seeds;
}

long steps_per_epoch_of(const Dataset& train, long batch_size) {
  return (train.size() + batch_size - 1) / batch_size;
}

void run_train(const ExperimentConfig& cfg, RunLog& log, json& final) {
  auto [train, test] = load_dataset_pair(cfg.data, cfg.seed);
  TrainSpec ts = base_train_spec(cfg);
  TrainResult r = train_run(train, test, ts);

  emit(log, cfg.out_dir, "metrics.csv", metrics_csv(r.steps));
  emit(log, cfg.out_dir, "distances.csv", ratio_csv(r.snapshots));
  emit(log, cfg.out_dir, "distances_epoch.csv", ratio_epoch_csv(r.snapshots));
  save_snapshots_fsnp(log, cfg.out_dir, "snapshots.fsnp", r.snapshots);

  final["train_loss"] = r.steps.back().loss;
  final["test_accuracy"] = r.test_accuracy;
  final["total_passes"] = r.total_passes;
  final["param_distance_from_init"] = param_l2_distance(r.init_params, r.final_params);
  final["function_distance_from_init"] =
      l2_distance(r.snapshots.front().probe_outputs, r.snapshots.back().probe_outputs).distance;
}

std::vector<std::vector<Snapshot>> multi_seed_runs(const ExperimentConfig& cfg,
                                                   const Dataset& train, const Dataset& test,
                                                   const std::vector<std::uint64_t>& seeds) {
  // Epoch-boundary snapshots (plus init). Cross-run function distances are
  // only meaningful on a common input set, so the probe is pinned to the
  // experiment seed while the training seed varies.
  std::vector<std::vector<Snapshot>> runs;
  for (std::uint64_t s : seeds) {
    TrainSpec ts = base_train_spec(cfg);
    ts.snapshot_every = steps_per_epoch_of(train, cfg.batch_size);
    ts.seed = s;
    ts.probe_seed = cfg.seed;
    runs.push_back(train_run(train, test, ts).snapshots);
  }
  return runs;
}

void run_distances(const ExperimentConfig& cfg, RunLog& log, json& final,
                   std::vector<std::vector<Snapshot>>* runs_out = nullptr,
                   DistanceMatrices* mats_out = nullptr) {
  auto [train, test] = load_dataset_pair(cfg.data, cfg.seed);
  const std::vector<std::uint64_t> seeds = effective_seeds(cfg, 3);
  auto runs = multi_seed_runs(cfg, train, test, seeds);
  DistanceMatrices mats = build_distance_matrices(runs);
  const std::vector<std::string> labels = run_labels(runs);

  emit(log, cfg.out_dir, "distance_param.csv", matrix_csv(labels, mats.param.values));
  emit(log, cfg.out_dir, "distance_function.csv", matrix_csv(labels, mats.function.values));
  for (std::size_t r = 0; r < runs.size(); ++r)
    save_snapshots_fsnp(log, cfg.out_dir, "snapshots_run" + std::to_string(r) + ".fsnp", runs[r]);

  final["runs"] = seeds.size();
  final["checkpoints"] = labels.size();
  if (runs_out) *runs_out = std::move(runs);
  if (mats_out) *mats_out = std::move(mats);
}

void run_embed(const ExperimentConfig& cfg, RunLog& log, json& final) {
  std::vector<std::vector<Snapshot>> runs;
  DistanceMatrices mats;
  run_distances(cfg, log, final, &runs, &mats);

  const std::vector<std::string> labels = run_labels(runs);
  Embedding2D fn_embed = classical_mds(mats.function);
  Embedding2D par_embed = classical_mds(mats.param);

  auto embed_csv = [&](const Embedding2D& e) {
    CsvBuilder csv;
    csv.row({"label", "x", "y"});
    for (Eigen::Index i = 0; i < e.points.rows(); ++i)
      csv.row({labels[static_cast<std::size_t>(i)], csv_num(e.points(i, 0)),
               csv_num(e.points(i, 1))});
    return csv.str();
  };
  emit(log, cfg.out_dir, "embedding_function.csv", embed_csv(fn_embed));
  emit(log, cfg.out_dir, "embedding_param.csv", embed_csv(par_embed));

  final["function_stress"] = fn_embed.stress;
  final["param_stress"] = par_embed.stress;
  final["function_eigenvalues"] =
      std::vector<double>(fn_embed.eigenvalues.data(),
                          fn_embed.eigenvalues.data() + fn_embed.eigenvalues.size());
}

void run_forget(const ExperimentConfig& cfg, RunLog& log, json& final) {
  auto [train, test] = load_dataset_pair(cfg.data, cfg.seed);
  TaskSequence seq =
      make_task_sequence(std::move(train), std::move(test), cfg.tasks, cfg.epochs_per_task, cfg.seed);

  ContinualConfig ccfg = cfg.continual;
  ccfg.hidden = cfg.hidden;
  ccfg.batch_size = cfg.batch_size;
  ccfg.seed = cfg.seed;

  for (const std::string& name : cfg.methods) {
    const ForgetMethod method = parse_forget_method(name);
    ContinualResult r = run_continual(seq, method, ccfg);

    CsvBuilder csv;
    std::vector<std::string> header{"after_task"};
    for (long k = 0; k < cfg.tasks; ++k) header.push_back("task_" + std::to_string(k));
    csv.row(header);
    for (std::size_t t = 0; t < r.accuracy.size(); ++t) {
      std::vector<std::string> row{csv_num(static_cast<long>(t))};
      for (long k = 0; k < cfg.tasks; ++k)
        row.push_back(k < static_cast<long>(r.accuracy[t].size())
                          ? csv_num(r.accuracy[t][static_cast<std::size_t>(k)])
                          : std::string{});
      csv.row(row);
    }
    emit(log, cfg.out_dir, "accuracy_" + name + ".csv", csv.str());

    if (method == ForgetMethod::AdamRetrain || method == ForgetMethod::L2Memory) {
      save_memory(r.memory, cfg.out_dir + "/memory_" + name + ".fsnp");
      log.outputs.push_back("memory_" + name + ".fsnp");
      log.outputs.push_back("memory_" + name + ".fsnp.tasks");
    }

    json m;
    m["first_task_after_first"] = r.accuracy.front().front();
    m["first_task_final"] = r.accuracy.back().front();
    m["mean_final"] = [&] {
      double s = 0.0;
      for (double a : r.accuracy.back()) s += a;
      return s / double(r.accuracy.back().size());
    }();
    final[name] = std::move(m);
  }
}

void run_compare(const ExperimentConfig& cfg, RunLog& log, json& final) {
  if (cfg.optimizer.type != "hcgd")
    throw ConfigError("compare-optimizers expects an hcgd optimizer block");
  auto [train, test] = load_dataset_pair(cfg.data, cfg.seed);

  TrainSpec hc = base_train_spec(cfg);
  hc.snapshot_every = 1;
  hc.keep_snapshots = false;
  hc.eval_epochs = true;

  TrainSpec sg = hc;
  sg.opt.type = "sgd";
  sg.opt.sgd = SgdConfig{cfg.optimizer.hcgd.lr, cfg.optimizer.hcgd.momentum, 0.0};

  TrainResult r_sgd = train_run(train, test, sg);
  TrainResult r_hcgd = train_run(train, test, hc);

  CsvBuilder csv;
  csv.row({"optimizer", "epoch", "cum_sq_l2", "test_acc"});
  auto rows = [&](const char* name, const TrainResult& r) {
    for (std::size_t e = 0; e < r.epoch_cum_sq_path.size(); ++e)
      csv.row({name, csv_num(static_cast<long>(e + 1)), csv_num(r.epoch_cum_sq_path[e]),
               csv_num(r.epoch_test_acc[e])});
  };
  rows("sgd", r_sgd);
  rows("hcgd", r_hcgd);
  emit(log, cfg.out_dir, "pathlength.csv", csv.str());
  emit(log, cfg.out_dir, "metrics_sgd.csv", metrics_csv(r_sgd.steps));
  emit(log, cfg.out_dir, "metrics_hcgd.csv", metrics_csv(r_hcgd.steps));

  final["sgd_cum_sq_l2"] = r_sgd.epoch_cum_sq_path.back();
  final["hcgd_cum_sq_l2"] = r_hcgd.epoch_cum_sq_path.back();
  final["path_ratio"] = r_hcgd.epoch_cum_sq_path.back() / r_sgd.epoch_cum_sq_path.back();
  final["sgd_test_accuracy"] = r_sgd.test_accuracy;
  final["hcgd_test_accuracy"] = r_hcgd.test_accuracy;
  final["sgd_total_passes"] = r_sgd.total_passes;
  final["hcgd_total_passes"] = r_hcgd.total_passes;
}

void run_convergence(const ExperimentConfig& cfg, RunLog& log, json& final) {
  auto [train, test] = load_dataset_pair(cfg.data, cfg.seed);
  const std::vector<std::uint64_t> seeds = effective_seeds(cfg, 5);

  CsvBuilder csv;
  csv.row({"seed", "n", "estimate", "reference"});
  double worst_rel_err_512 = 0.0;
  for (std::uint64_t s : seeds) {
    TrainSpec ts = base_train_spec(cfg);
    ts.seed = s;
    ts.keep_snapshots = false;
    ts.snapshot_every = steps_per_epoch_of(train, cfg.batch_size);
    TrainResult r = train_run(train, test, ts);

    // Distance from initialization evaluated over the full training subset.
    std::vector<int> dims;
    dims.push_back(train.dim());
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(train.num_classes);
    std::vector<Activation> acts(dims.size() - 1, cfg.activation);
    acts.back() = Activation::Identity;
    Network net(dims, acts, OutputMode::Softmax);
    net.params() = r.init_params;
    Eigen::MatrixXd out_init = forward(net, train.inputs, OutputMode::Softmax);
    net.params() = r.final_params;
    Eigen::MatrixXd out_final = forward(net, train.inputs, OutputMode::Softmax);

    ConvergenceCurve curve = convergence_curve(out_init, out_final, cfg.sample_sizes,
                                               Rng::stream(s, streams::kSubsample).next_u64());
    for (std::size_t i = 0; i < curve.sample_sizes.size(); ++i) {
      csv.row({csv_num(static_cast<long>(s)), csv_num(curve.sample_sizes[i]),
               csv_num(curve.estimates[i]), csv_num(curve.reference)});
      if (curve.sample_sizes[i] == 512)
        worst_rel_err_512 =
            std::max(worst_rel_err_512,
                     std::abs(curve.estimates[i] - curve.reference) / curve.reference);
    }
  }
  emit(log, cfg.out_dir, "convergence.csv", csv.str());
  final["worst_rel_err_at_512"] = worst_rel_err_512;
}

}  // namespace

RunLog run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);

  RunLog log;
  log.kind = experiment_kind_name(cfg.kind);

  json run;
  run["version"] = kVersion;
  run["kind"] = log.kind;
  run["seed"] = cfg.seed;
  run["config"] = json::parse(cfg.raw_json.empty() ? "{}" : cfg.raw_json);
  json final = json::object();

  auto finish = [&](const std::string& status) {
    run["status"] = status;
    run["final"] = final;
    run["outputs"] = log.outputs;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run["wall_clock_seconds"] = secs;
    log.wall_clock_seconds = secs;
    log.status = status;
    write_file_atomic(cfg.out_dir + "/run.json", run.dump(2) + "\n");
  };

  try {
    switch (cfg.kind) {
      case ExperimentKind::Train: run_train(cfg, log, final); break;
      case ExperimentKind::Distances: run_distances(cfg, log, final); break;
      case ExperimentKind::Embed: run_embed(cfg, log, final); break;
      case ExperimentKind::Forget: run_forget(cfg, log, final); break;
      case ExperimentKind::CompareOptimizers: run_compare(cfg, log, final); break;
      case ExperimentKind::EstimatorConvergence: run_convergence(cfg, log, final); break;
    }
  } catch (const std::exception& e) {
    run["error"] = e.what();
    run["partial"] = true;
    finish("error");
    throw;
  }
  finish("ok");
  return log;
}

}  // namespace funcspace
