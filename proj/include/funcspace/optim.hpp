#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "funcspace/network.hpp"
#include "funcspace/rng.hpp"

namespace funcspace {

// Per-step report common to all optimizers. `passes` counts network
// traversals consumed by the step (a forward or a backward over one batch
// each count as one pass).
struct StepInfo {
  double loss = 0.0;         // training loss at the pre-step parameters
  double penalty = 0.0;      // function-space penalty at the accepted update (HCGD)
  long passes = 0;
  double update_norm = 0.0;  // Euclidean norm of the applied parameter change
  bool diverged = false;
};

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;      // in [0, 1)
  double weight_decay = 0.0;
};

// Momentum SGD: v <- beta*v + lr*(J + wd*theta); theta <- theta - v.
class Sgd {
 public:
  Sgd(std::size_t param_count, SgdConfig cfg);

  StepInfo step(Network& net, const Batch& batch);
  // Applies the update rule to an externally supplied gradient (no passes
  // are counted); lets toy problems drive the same state machine.
  StepInfo step_with_grad(Network& net, double loss, const Eigen::VectorXd& grad);

  long total_passes() const { return total_passes_; }
  const Eigen::VectorXd& velocity() const { return velocity_; }

 private:
  SgdConfig cfg_;
  Eigen::VectorXd velocity_;
  long total_passes_ = 0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(std::size_t param_count, AdamConfig cfg);

  StepInfo step(Network& net, const Batch& batch);
  StepInfo step_with_grad(Network& net, double loss, const Eigen::VectorXd& grad);

  long total_passes() const { return total_passes_; }

 private:
  AdamConfig cfg_;
  Eigen::VectorXd m_, u_;
  long t_ = 0;
  long total_passes_ = 0;
};

// Value and gradient of the function-space penalty
//   lambda * sqrt( (1/N) sum_i |f_ref(x_i) - f_net(x_i)|^2 + eps_num )
// where f_ref is frozen (ref_outputs) and the gradient flows through the
// network only. eps_num smooths the sqrt kink at zero functional change.
inline constexpr double kPenaltyEps = 1e-12;

struct Penalty {
  double value = 0.0;     // lambda * sqrt(mean_sq + eps_num)
  double distance = 0.0;  // sqrt(mean_sq), the raw function-space distance
  GradientVector grad;    // w.r.t. the proposal displacement
};

Penalty l2_penalty_grad(const Network& net_at_proposal, const Eigen::MatrixXd& ref_outputs,
                        const Eigen::MatrixXd& val_inputs, double lambda);

enum class HcgdProposal { Sgd, Adam };

struct HcgdConfig {
  double lr = 0.1;          // overall learning rate (epsilon)
  double inner_lr = 0.02;   // corrective step size (eta)
  double lambda = 0.5;      // penalty weight
  double momentum = 0.9;    // beta, SGD proposal only
  long n_corrections = 1;
  long val_batch_size = 256;
  bool fresh_val_per_correction = true;
  HcgdProposal proposal = HcgdProposal::Sgd;
};

// Supplies validation batches of a requested size; expected to cycle over
// the training distribution (e.g. backed by a BatchCycler).
using ValSource = std::function<Batch(long)>;

// Gradient descent with the update pulled back toward the current function:
// propose delta from momentum (or Adam), then correct it n times against the
// function-space penalty measured on validation batches. The momentum buffer
// tracks the negated final update, so corrections feed back into the next
// proposal. Corrections after the first re-add the cost gradient so the
// descent continues while the penalty term is refined.
//
// Pass cost per step: 2 + 3n with fresh validation batches per correction,
// 2n + 3 when one validation batch is reused within the step.
class Hcgd {
 public:
  Hcgd(std::size_t param_count, HcgdConfig cfg, ValSource val_source);

  StepInfo step(Network& net, const Batch& train_batch);

  long total_passes() const { return total_passes_; }
  const Eigen::VectorXd& velocity() const { return velocity_; }

 private:
  HcgdConfig cfg_;
  ValSource val_source_;
  Eigen::VectorXd velocity_;     // SGD proposal
  Eigen::VectorXd m_, u_;        // Adam proposal moments
  long adam_t_ = 0;
  long total_passes_ = 0;
};

// Matrix-free Fisher information operator F = G G^T / N for a matrix G of
// per-example gradients (P x N). apply() never materializes the P x P matrix.
class FisherOperator {
 public:
  FisherOperator(Eigen::MatrixXd per_example_grads, FisherMode mode);
  static FisherOperator from_batch(const Network& net, const Batch& batch, FisherMode mode,
                                   std::uint64_t seed = 0);

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

  long param_count() const { return G_.rows(); }
  long example_count() const { return G_.cols(); }
  const Eigen::MatrixXd& grads() const { return G_; }
  FisherMode mode() const { return mode_; }

 private:
  Eigen::MatrixXd G_;
  FisherMode mode_;
};

Eigen::VectorXd fisher_vector_product(const FisherOperator& fisher, const Eigen::VectorXd& v);

struct NgdCorrection {
  Eigen::VectorXd delta;
  bool diverged = false;
};

// Runs n corrective iterations delta <- delta - eta*(J + lambda*F*delta),
// whose fixed point is -(1/lambda) F^{-1} J. Reports divergence when the
// iterates blow up (eta beyond the stable range for F's spectrum).
NgdCorrection ngd_correct(const Eigen::VectorXd& grad, const FisherOperator& fisher,
                          Eigen::VectorXd delta0, double eta, double lambda, long n);

enum class NgdProposer { RmsProp, Adam };

struct NgdConfig {
  double inner_lr = 0.01;     // eta for the corrective loop
  double lambda = 1.0;
  long n_corrections = 1;     // may be 0 (pure proposer)
  NgdProposer proposer = NgdProposer::RmsProp;
  double proposer_lr = 0.001;
  double rms_decay = 0.9;
  double beta1 = 0.9;         // Adam proposer
  double beta2 = 0.999;
  double eps = 1e-8;
  FisherMode fisher_mode = FisherMode::Empirical;
};

// Natural-gradient-flavored optimizer: a diagonal method proposes the update
// and a short matrix-free loop bends it toward the natural gradient using
// Fisher-vector products from the current batch. A diverged correction is
// reported and the parameters are left untouched.
class NgdByGd {
 public:
  NgdByGd(std::size_t param_count, NgdConfig cfg, std::uint64_t seed = 0);

  StepInfo step(Network& net, const Batch& batch);

  long total_passes() const { return total_passes_; }

 private:
  NgdConfig cfg_;
  Eigen::VectorXd m_, u_;
  long t_ = 0;
  Rng fisher_rng_;
  long total_passes_ = 0;
};

}  // namespace funcspace
