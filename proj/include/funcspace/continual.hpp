#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "funcspace/dataset.hpp"
#include "funcspace/network.hpp"
#include "funcspace/optim.hpp"
#include "funcspace/rng.hpp"

namespace funcspace {

// Balanced cache of examples from past tasks. Outputs are captured once, at
// the end of each example's originating task, and never refreshed. Labels
// ride along so the retrain baseline can reuse the identical cache.
struct WorkingMemory {
  long capacity = 1024;
  Eigen::MatrixXd inputs;            // size x D
  Eigen::MatrixXd recorded_outputs;  // size x K, post-softmax
  std::vector<int> task_ids;
  std::vector<int> labels;

  long size() const { return inputs.rows(); }
};

// Evicts uniformly at random from over-represented tasks and fills the freed
// slots with fresh random examples from the finished task, recording the
// current network's outputs on them. Per-task counts stay balanced to
// within one example (extra slots go to the lowest task ids).
void update_memory(WorkingMemory& mem, const Dataset& task_data, const Network& net, int task_id,
                   Rng& rng);

void save_memory(const WorkingMemory& mem, const std::string& path);
WorkingMemory load_memory(const std::string& path);

struct MemoryLoss {
  double value = 0.0;
  GradientVector grad;
};

// Regularizer pulling current outputs toward the cached ones:
//   (lambda/2) * sqrt(mean over cache of |f(x) - recorded(x)|^2 + eps_num).
// `squared` switches to (lambda/2) * mean_sq for ablation. Empty memory
// yields zero loss and gradient.
MemoryLoss l2_memory_loss(const Network& net, const WorkingMemory& mem, double lambda = 1.3,
                          bool squared = false);

struct EwcState {
  Eigen::VectorXd theta_A;      // params at the source task's end
  Eigen::VectorXd fisher_diag;  // nonnegative, same length
  double lambda = 500.0;
};

// Diagonal Fisher estimate: coordinate-wise mean of squared per-example loss
// gradients over the first n_samples examples (deterministic subset).
Eigen::VectorXd ewc_diag_fisher(const Network& net, const Dataset& data, long n_samples);

// Quadratic anchor sum_tasks (lambda/2) sum_i F_i (theta_i - theta_A,i)^2
// with gradient lambda * F .* (theta - theta_A), accumulated over states.
MemoryLoss ewc_loss(const Network& net, const std::vector<EwcState>& states);

// Takes one optimizer step on cross-entropy over the full cache whenever
// step is a multiple of every_n. Returns whether a step was taken.
bool retrain_step(Network& net, const WorkingMemory& mem, Adam& opt, long every_n, long step);

struct TaskSequence {
  Dataset train;  // base data; tasks apply pixel permutations on top
  Dataset test;
  std::vector<std::vector<int>> perms;
  long epochs_per_task = 10;

  long tasks() const { return static_cast<long>(perms.size()); }
};

// Sentinel seed for make_permuted_task that yields the identity permutation.
inline constexpr std::uint64_t kIdentityPermutationSeed = ~std::uint64_t{0};

std::vector<int> make_pixel_permutation(int dim, std::uint64_t seed);
Dataset make_permuted_task(const Dataset& base, std::uint64_t seed);

TaskSequence make_task_sequence(Dataset train, Dataset test, long tasks, long epochs_per_task,
                                std::uint64_t seed);

enum class ForgetMethod { Adam, AdamRetrain, L2Memory, Ewc };

ForgetMethod parse_forget_method(const std::string& name);
std::string forget_method_name(ForgetMethod m);

struct ContinualConfig {
  std::vector<int> hidden = {400, 400};
  long batch_size = 128;
  double adam_lr = 0.001;
  long capacity = 1024;
  double l2_lambda = 1.3;
  bool l2_squared = false;
  double ewc_lambda = 500.0;
  long retrain_every = 10;
  long fisher_samples = 1000;
  std::uint64_t seed = 1;
};

struct ContinualResult {
  // accuracy[t][k]: test accuracy on task k after finishing task t (k <= t).
  std::vector<std::vector<double>> accuracy;
  WorkingMemory memory;  // final cache state
  Eigen::VectorXd final_params;
};

// Trains one network through the task sequence with the chosen forgetting
// defense and evaluates every seen task after each one finishes.
ContinualResult run_continual(const TaskSequence& seq, ForgetMethod method,
                              const ContinualConfig& cfg);

}  // namespace funcspace
