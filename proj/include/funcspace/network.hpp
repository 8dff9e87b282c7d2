#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "funcspace/errors.hpp"

namespace funcspace {

enum class Activation { Relu, Tanh, Identity };
enum class OutputMode { Softmax, Raw };

// A batch of examples. Targets may be empty for inference-only use.
struct Batch {
  Eigen::MatrixXd inputs;    // N x D
  std::vector<int> targets;  // N class labels, or empty

  long size() const { return inputs.rows(); }
  bool has_targets() const { return !targets.empty(); }
};

// Flat gradient with the same length and ordering as Network::params().
struct GradientVector {
  Eigen::VectorXd values;
};

// Dense feedforward network over a single flat float64 parameter vector.
//
// Canonical parameter layout, layer-major: for each layer l the weight block
// W_l (dims[l] x dims[l+1], column-major) followed by the bias block b_l
// (dims[l+1]). The flat layout makes parameter-space distances well-defined
// across checkpoints.
class Network {
 public:
  Network(std::vector<int> layer_dims, std::vector<Activation> activations, OutputMode output_mode);

  const std::vector<int>& layer_dims() const { return dims_; }
  const std::vector<Activation>& activations() const { return acts_; }
  OutputMode output_mode() const { return mode_; }
  void set_output_mode(OutputMode mode) { mode_ = mode; }

  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  long param_count() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weights(int layer);
  Eigen::Map<const Eigen::MatrixXd> weights(int layer) const;
  Eigen::Map<Eigen::VectorXd> biases(int layer);
  Eigen::Map<const Eigen::VectorXd> biases(int layer) const;

 private:
  std::vector<int> dims_;
  std::vector<Activation> acts_;
  OutputMode mode_;
  std::vector<long> weight_offsets_;
  std::vector<long> bias_offsets_;
  Eigen::VectorXd params_;
};

// Builds a network with parameters drawn from the scaled uniform
// initialization, bound sqrt(6 / (fan_in + fan_out)) per layer. Identical
// seeds give bit-identical parameter vectors.
Network init_network(const std::vector<int>& layer_dims, const std::vector<Activation>& activations,
                     OutputMode output_mode, std::uint64_t seed);

// Forward pass; rows of the result are per-example outputs (probability rows
// in softmax mode). The mode override computes outputs in a representation
// other than the network's own.
Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs);
Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs, OutputMode mode);
Eigen::MatrixXd forward(const Network& net, const Batch& batch);

struct LossGrad {
  double loss;
  GradientVector grad;
};

// Mean cross-entropy over the batch and its exact parameter gradient.
// Cross-entropy always applies softmax to the final activations, independent
// of the network's output mode.
LossGrad loss_and_grad(const Network& net, const Batch& batch);

enum class FisherMode { Empirical, Sampled };

// Per-example loss gradients as the columns of a P x N matrix. In empirical
// mode column i is the cross-entropy gradient of example i at its true
// label; the column mean equals the loss_and_grad gradient. In sampled mode
// each example is relabeled with one draw from the network's own predictive
// distribution (seeded).
Eigen::MatrixXd per_example_grads(const Network& net, const Batch& batch, FisherMode mode,
                                  std::uint64_t seed = 0);

// A differentiable scalar of the network outputs: value plus d(value)/d(outputs).
struct OutputLoss {
  double value;
  Eigen::MatrixXd grad;  // N x K
};
using OutputLossFn = std::function<OutputLoss(const Eigen::MatrixXd&)>;

struct CustomLoss {
  double loss;
  GradientVector grad;
};

// Exact parameter gradient of an arbitrary differentiable loss on the
// network outputs for the given inputs. Outputs are in the network's output
// mode; any reference outputs captured by the callable are constants.
CustomLoss custom_loss_grad(const Network& net, const Eigen::MatrixXd& inputs, const OutputLossFn& loss_fn);

}  // namespace funcspace
