#include "funcspace/continual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "funcspace/errors.hpp"
#include "funcspace/fsnp.hpp"

namespace funcspace {

namespace {

std::vector<long> task_quotas(long capacity, int tasks_seen) {
  // Balanced split of the cache: floor share each, remainder to low task ids.
  std::vector<long> q(static_cast<std::size_t>(tasks_seen), capacity / tasks_seen);
  const long rem = capacity % tasks_seen;
  for (long i = 0; i < rem; ++i) ++q[static_cast<std::size_t>(i)];
  return q;
}

}  // namespace

void update_memory(WorkingMemory& mem, const Dataset& task_data, const Network& net, int task_id,
                   Rng& rng) {
  if (mem.capacity < 1) throw ConfigError("working memory: capacity must be >= 1");
  const int tasks_seen = task_id + 1;
  if (mem.capacity < tasks_seen)
    throw ConfigError("working memory: capacity " + std::to_string(mem.capacity) +
                      " cannot hold one example per task for " + std::to_string(tasks_seen) +
                      " tasks");
  for (int t : mem.task_ids)
    if (t >= task_id)
      throw ConfigError("working memory: task " + std::to_string(task_id) +
                        " inserted out of order");

  const std::vector<long> quota = task_quotas(mem.capacity, tasks_seen);

  // Decide survivors among the cached rows, evicting uniformly at random
  // from any task now over its quota.
  std::vector<std::vector<std::size_t>> rows_by_task(static_cast<std::size_t>(tasks_seen));
  for (std::size_t r = 0; r < mem.task_ids.size(); ++r)
    rows_by_task[static_cast<std::size_t>(mem.task_ids[r])].push_back(r);

  std::vector<std::size_t> keep;
  for (int t = 0; t < task_id; ++t) {
    auto& rows = rows_by_task[static_cast<std::size_t>(t)];
    const long q = quota[static_cast<std::size_t>(t)];
    while (static_cast<long>(rows.size()) > q) {
      const std::size_t victim = static_cast<std::size_t>(rng.below(rows.size()));
      rows.erase(rows.begin() + static_cast<std::ptrdiff_t>(victim));
    }
    keep.insert(keep.end(), rows.begin(), rows.end());
  }
  std::sort(keep.begin(), keep.end());  // preserve insertion order of survivors

  const long n_new = quota[static_cast<std::size_t>(task_id)];
  if (n_new > task_data.size())
    throw ConfigError("working memory: task dataset smaller than its cache share");
  std::vector<std::size_t> fresh = rng.sample_without_replacement(
      static_cast<std::size_t>(task_data.size()), static_cast<std::size_t>(n_new));

  const long total = static_cast<long>(keep.size()) + n_new;
  Eigen::MatrixXd inputs(total, task_data.dim());
  std::vector<int> task_ids(static_cast<std::size_t>(total));
  std::vector<int> labels(static_cast<std::size_t>(total));

  for (std::size_t i = 0; i < keep.size(); ++i) {
    inputs.row(static_cast<Eigen::Index>(i)) = mem.inputs.row(static_cast<Eigen::Index>(keep[i]));
    task_ids[i] = mem.task_ids[keep[i]];
    labels[i] = mem.labels[keep[i]];
  }
  for (long i = 0; i < n_new; ++i) {
    const std::size_t dst = keep.size() + static_cast<std::size_t>(i);
    inputs.row(static_cast<Eigen::Index>(dst)) =
        task_data.inputs.row(static_cast<Eigen::Index>(fresh[static_cast<std::size_t>(i)]));
    task_ids[dst] = task_id;
    labels[dst] = task_data.labels[fresh[static_cast<std::size_t>(i)]];
  }

  // Outputs for the fresh rows come from the network as it stands at this
  // task's end; surviving rows keep their original recordings.
  Eigen::MatrixXd outputs(total, 0);
  Eigen::MatrixXd fresh_outputs =
      forward(net, inputs.bottomRows(n_new), OutputMode::Softmax);
  outputs.resize(total, fresh_outputs.cols());
  for (std::size_t i = 0; i < keep.size(); ++i)
    outputs.row(static_cast<Eigen::Index>(i)) =
        mem.recorded_outputs.row(static_cast<Eigen::Index>(keep[i]));
  outputs.bottomRows(n_new) = fresh_outputs;

  mem.inputs = std::move(inputs);
  mem.recorded_outputs = std::move(outputs);
  mem.task_ids = std::move(task_ids);
  mem.labels = std::move(labels);
}

void save_memory(const WorkingMemory& mem, const std::string& path) {
  fsnp::File file;
  file.param_len = static_cast<std::uint64_t>(mem.inputs.cols());
  file.probe_n = 1;
  file.probe_k = static_cast<std::uint64_t>(mem.recorded_outputs.cols());
  file.records.reserve(static_cast<std::size_t>(mem.size()));
  for (long i = 0; i < mem.size(); ++i) {
    fsnp::Record rec;
    rec.params = mem.inputs.row(i).transpose();
    rec.probe_outputs = mem.recorded_outputs.row(i);
    file.records.push_back(std::move(rec));
  }
  fsnp::write(path, file);

  std::ofstream side(path + ".tasks");
  if (!side) throw IoError("cannot write " + path + ".tasks");
  side << "task_id,label\n";
  for (long i = 0; i < mem.size(); ++i)
    side << mem.task_ids[static_cast<std::size_t>(i)] << ','
         << mem.labels[static_cast<std::size_t>(i)] << '\n';
  if (!side) throw IoError("write failed for " + path + ".tasks");
}

WorkingMemory load_memory(const std::string& path) {
  fsnp::File file = fsnp::read(path);
  WorkingMemory mem;
  const long n = static_cast<long>(file.records.size());
  mem.inputs.resize(n, static_cast<Eigen::Index>(file.param_len));
  mem.recorded_outputs.resize(n, static_cast<Eigen::Index>(file.probe_k));
  for (long i = 0; i < n; ++i) {
    mem.inputs.row(i) = file.records[static_cast<std::size_t>(i)].params.transpose();
    mem.recorded_outputs.row(i) = file.records[static_cast<std::size_t>(i)].probe_outputs;
  }

  std::ifstream side(path + ".tasks");
  if (!side) throw IoError("cannot open " + path + ".tasks");
  std::string line;
  std::getline(side, line);  // header
  while (std::getline(side, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError(path + ".tasks: malformed line: " + line);
    mem.task_ids.push_back(std::stoi(line.substr(0, comma)));
    mem.labels.push_back(std::stoi(line.substr(comma + 1)));
  }
  if (static_cast<long>(mem.task_ids.size()) != n)
    throw IoError(path + ".tasks: row count does not match cache");
  mem.capacity = std::max<long>(mem.capacity, n);
  return mem;
}

MemoryLoss l2_memory_loss(const Network& net, const WorkingMemory& mem, double lambda,
                          bool squared) {
  MemoryLoss out;
  if (mem.size() == 0) {
    out.grad.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.param_count()));
    return out;
  }
  const double n = double(mem.size());
  CustomLoss res =
      custom_loss_grad(net, mem.inputs, [&](const Eigen::MatrixXd& outputs) -> OutputLoss {
        if (outputs.cols() != mem.recorded_outputs.cols())
          throw ShapeError("memory loss: output width mismatch with recordings");
        Eigen::MatrixXd diff = outputs - mem.recorded_outputs;
        const double mean_sq = diff.squaredNorm() / n;
        OutputLoss ol;
        if (squared) {
          ol.value = 0.5 * lambda * mean_sq;
          ol.grad = (lambda / n) * diff;
        } else {
          const double root = std::sqrt(mean_sq + kPenaltyEps);
          ol.value = 0.5 * lambda * root;
          ol.grad = (0.5 * lambda / (n * root)) * diff;
        }
        return ol;
      });
  out.value = res.loss;
  out.grad = std::move(res.grad);
  return out;
}

Eigen::VectorXd ewc_diag_fisher(const Network& net, const Dataset& data, long n_samples) {
  const long n = std::min(n_samples, data.size());
  if (n < 1) throw ConfigError("fisher estimate needs at least one example");
  std::vector<std::size_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Batch batch = make_batch(data, idx);
  Eigen::MatrixXd G = per_example_grads(net, batch, FisherMode::Empirical);
  return G.array().square().rowwise().mean();
}

MemoryLoss ewc_loss(const Network& net, const std::vector<EwcState>& states) {
  MemoryLoss out;
  out.grad.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.param_count()));
  for (const EwcState& st : states) {
    if (st.theta_A.size() != net.params().size() || st.fisher_diag.size() != net.params().size())
      throw ShapeError("ewc: anchor length does not match network");
    Eigen::VectorXd d = net.params() - st.theta_A;
    out.value += 0.5 * st.lambda * st.fisher_diag.dot(d.cwiseProduct(d));
    out.grad.values += st.lambda * st.fisher_diag.cwiseProduct(d);
  }
  return out;
}

bool retrain_step(Network& net, const WorkingMemory& mem, Adam& opt, long every_n, long step) {
  if (every_n < 1) throw ConfigError("retrain: every_n must be >= 1");
  if (mem.size() == 0 || step % every_n != 0) return false;
  Batch b;
  b.inputs = mem.inputs;
  b.targets = mem.labels;
  opt.step(net, b);
  return true;
}

std::vector<int> make_pixel_permutation(int dim, std::uint64_t seed) {
  std::vector<int> perm(static_cast<std::size_t>(dim));
  std::iota(perm.begin(), perm.end(), 0);
  if (seed == kIdentityPermutationSeed) return perm;
  Rng rng = Rng::stream(seed, streams::kPermutation);
  rng.shuffle(perm);
  return perm;
}

Dataset make_permuted_task(const Dataset& base, std::uint64_t seed) {
  return permute_pixels(base, make_pixel_permutation(base.dim(), seed));
}

TaskSequence make_task_sequence(Dataset train, Dataset test, long tasks, long epochs_per_task,
                                std::uint64_t seed) {
  if (tasks < 1) throw ConfigError("task sequence needs at least one task");
  if (train.dim() != test.dim()) throw ShapeError("train/test input widths differ");
  TaskSequence seq;
  seq.train = std::move(train);
  seq.test = std::move(test);
  seq.epochs_per_task = epochs_per_task;
  Rng rng = Rng::stream(seed, streams::kPermutation);
  for (long t = 0; t < tasks; ++t) {
    std::vector<int> perm(static_cast<std::size_t>(seq.train.dim()));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    seq.perms.push_back(std::move(perm));
  }
  return seq;
}

ForgetMethod parse_forget_method(const std::string& name) {
  if (name == "adam") return ForgetMethod::Adam;
  if (name == "adam_retrain") return ForgetMethod::AdamRetrain;
  if (name == "l2_memory") return ForgetMethod::L2Memory;
  if (name == "ewc") return ForgetMethod::Ewc;
  throw ConfigError("unknown forgetting method: " + name);
}

std::string forget_method_name(ForgetMethod m) {
  switch (m) {
    case ForgetMethod::Adam: return "adam";
    case ForgetMethod::AdamRetrain: return "adam_retrain";
    case ForgetMethod::L2Memory: return "l2_memory";
    case ForgetMethod::Ewc: return "ewc";
  }
  throw ConfigError("unknown forgetting method");
}

ContinualResult run_continual(const TaskSequence& seq, ForgetMethod method,
                              const ContinualConfig& cfg) {
  const long T = seq.tasks();
  if (T < 1) throw ConfigError("run_continual: empty task sequence");
  if (cfg.batch_size < 1) throw ConfigError("run_continual: batch_size must be >= 1");
  const bool uses_memory = method == ForgetMethod::AdamRetrain || method == ForgetMethod::L2Memory;
  if (uses_memory && cfg.capacity < T)
    throw ConfigError("run_continual: cache capacity below one slot per task");

  std::vector<int> dims;
  dims.push_back(seq.train.dim());
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(seq.train.num_classes);
  std::vector<Activation> acts(dims.size() - 1, Activation::Relu);
  acts.back() = Activation::Identity;
  Network net = init_network(dims, acts, OutputMode::Softmax, cfg.seed);

  Adam adam(net.param_count(), AdamConfig{.lr = cfg.adam_lr});
  WorkingMemory mem;
  mem.capacity = cfg.capacity;
  std::vector<EwcState> ewc_states;
  Rng mem_rng = Rng::stream(cfg.seed, streams::kMemory);

  // Per-task data-order seeds are drawn up front so every method sees the
  // same batch sequence for the same run seed.
  Rng order_rng = Rng::stream(cfg.seed, streams::kDataOrder);
  std::vector<std::uint64_t> order_seeds;
  for (long t = 0; t < T; ++t) order_seeds.push_back(order_rng.next_u64());

  ContinualResult result;
  long global_step = 0;
  for (long t = 0; t < T; ++t) {
    const auto& perm = seq.perms[static_cast<std::size_t>(t)];
    Dataset train_t = permute_pixels(seq.train, perm);
    BatchCycler cycler(train_t, cfg.batch_size, order_seeds[static_cast<std::size_t>(t)]);
    const long steps = seq.epochs_per_task * cycler.batches_per_epoch();

    for (long s = 0; s < steps; ++s) {
      Batch b = cycler.next();
      ++global_step;
      switch (method) {
        case ForgetMethod::Adam:
          adam.step(net, b);
          break;
        case ForgetMethod::AdamRetrain:
          adam.step(net, b);
          retrain_step(net, mem, adam, cfg.retrain_every, global_step);
          break;
        case ForgetMethod::L2Memory: {
          LossGrad lg = loss_and_grad(net, b);
          MemoryLoss reg = l2_memory_loss(net, mem, cfg.l2_lambda, cfg.l2_squared);
          adam.step_with_grad(net, lg.loss + reg.value, lg.grad.values + reg.grad.values);
          break;
        }
        case ForgetMethod::Ewc: {
          LossGrad lg = loss_and_grad(net, b);
          MemoryLoss reg = ewc_loss(net, ewc_states);
          adam.step_with_grad(net, lg.loss + reg.value, lg.grad.values + reg.grad.values);
          break;
        }
      }
    }

    if (uses_memory) update_memory(mem, train_t, net, static_cast<int>(t), mem_rng);
    if (method == ForgetMethod::Ewc) {
      EwcState st;
      st.theta_A = net.params();
      st.fisher_diag = ewc_diag_fisher(net, train_t, cfg.fisher_samples);
      st.lambda = cfg.ewc_lambda;
      ewc_states.push_back(std::move(st));
    }

    std::vector<double> row;
    for (long k = 0; k <= t; ++k) {
      Dataset test_k = permute_pixels(seq.test, seq.perms[static_cast<std::size_t>(k)]);
      row.push_back(accuracy(net, test_k));
    }
    result.accuracy.push_back(std::move(row));
  }

  result.memory = std::move(mem);
  result.final_params = net.params();
  return result;
}

}  // namespace funcspace
