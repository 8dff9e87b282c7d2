#include "funcspace/network.hpp"

#include <cmath>
#include <string>

#include "funcspace/rng.hpp"

namespace funcspace {

namespace {

void apply_activation(Eigen::MatrixXd& z, Activation act) {
  switch (act) {
    case Activation::Relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::Identity:
      break;
  }
}

// Derivative of the activation expressed through its own output value.
Eigen::MatrixXd activation_deriv(const Eigen::MatrixXd& activated, Activation act) {
  switch (act) {
    case Activation::Relu:
      return (activated.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh:
      return (1.0 - activated.array().square()).matrix();
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(activated.rows(), activated.cols());
  }
  return {};
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  return p;
}

// Activations after every layer: trace[0] is the input, trace[l+1] the
// output of layer l before any softmax.
std::vector<Eigen::MatrixXd> forward_trace(const Network& net, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != net.input_dim()) {
    throw ShapeError("forward: batch width " + std::to_string(inputs.cols()) +
                     " does not match network input width " + std::to_string(net.input_dim()));
  }
  std::vector<Eigen::MatrixXd> trace;
  trace.reserve(net.num_layers() + 1);
  trace.push_back(inputs);
  for (int l = 0; l < net.num_layers(); ++l) {
    Eigen::MatrixXd z = trace.back() * net.weights(l);
    z.rowwise() += net.biases(l).transpose();
    apply_activation(z, net.activations()[l]);
    trace.push_back(std::move(z));
  }
  return trace;
}

// Backpropagates d(loss)/d(final activation) through the affine layers.
// When per_layer_delta is non-null the per-example delta matrices are kept;
// otherwise gradients are accumulated into grad (summed over the batch).
void backward_from_final(const Network& net, const std::vector<Eigen::MatrixXd>& trace,
                         Eigen::MatrixXd delta, Eigen::VectorXd* grad,
                         std::vector<Eigen::MatrixXd>* per_layer_delta) {
  const int L = net.num_layers();
  if (per_layer_delta) per_layer_delta->resize(L);
  for (int l = L - 1; l >= 0; --l) {
    delta.array() *= activation_deriv(trace[l + 1], net.activations()[l]).array();
    if (per_layer_delta) (*per_layer_delta)[l] = delta;
    if (grad) {
      const auto& a_prev = trace[l];
      long w_off = 0;
      for (int k = 0; k < l; ++k) {
        w_off += static_cast<long>(net.layer_dims()[k]) * net.layer_dims()[k + 1] + net.layer_dims()[k + 1];
      }
      const long rows = net.layer_dims()[l];
      const long cols = net.layer_dims()[l + 1];
      Eigen::Map<Eigen::MatrixXd>(grad->data() + w_off, rows, cols).noalias() += a_prev.transpose() * delta;
      Eigen::Map<Eigen::VectorXd>(grad->data() + w_off + rows * cols, cols) += delta.colwise().sum().transpose();
    }
    if (l > 0) delta = (delta * net.weights(l).transpose()).eval();
  }
}

// d(loss)/d(final activation) given d(loss)/d(outputs), chaining through the
// softmax when the outputs are probabilities.
Eigen::MatrixXd chain_output_grad(const Eigen::MatrixXd& out_grad, const Eigen::MatrixXd& probs,
                                  OutputMode mode) {
  if (mode == OutputMode::Raw) return out_grad;
  Eigen::MatrixXd g(out_grad.rows(), out_grad.cols());
  for (long i = 0; i < out_grad.rows(); ++i) {
    const double dot = out_grad.row(i).dot(probs.row(i));
    g.row(i) = probs.row(i).cwiseProduct(out_grad.row(i)) - dot * probs.row(i);
  }
  return g;
}

}  // namespace

Network::Network(std::vector<int> layer_dims, std::vector<Activation> activations, OutputMode output_mode)
    : dims_(std::move(layer_dims)), acts_(std::move(activations)), mode_(output_mode) {
  if (dims_.size() < 2) throw ConfigError("network needs at least input and output widths");
  for (int d : dims_) {
    if (d <= 0) throw ConfigError("layer widths must be positive");
  }
  if (acts_.size() != dims_.size() - 1) {
    throw ConfigError("need one activation per layer (" + std::to_string(dims_.size() - 1) + ")");
  }
  long total = 0;
  weight_offsets_.resize(num_layers());
  bias_offsets_.resize(num_layers());
  for (int l = 0; l < num_layers(); ++l) {
    weight_offsets_[l] = total;
    total += static_cast<long>(dims_[l]) * dims_[l + 1];
    bias_offsets_[l] = total;
    total += dims_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(total);
}

Eigen::Map<Eigen::MatrixXd> Network::weights(int layer) {
  return {params_.data() + weight_offsets_[layer], dims_[layer], dims_[layer + 1]};
}

Eigen::Map<const Eigen::MatrixXd> Network::weights(int layer) const {
  return {params_.data() + weight_offsets_[layer], dims_[layer], dims_[layer + 1]};
}

Eigen::Map<Eigen::VectorXd> Network::biases(int layer) {
  return {params_.data() + bias_offsets_[layer], dims_[layer + 1]};
}

Eigen::Map<const Eigen::VectorXd> Network::biases(int layer) const {
  return {params_.data() + bias_offsets_[layer], dims_[layer + 1]};
}

Network init_network(const std::vector<int>& layer_dims, const std::vector<Activation>& activations,
                     OutputMode output_mode, std::uint64_t seed) {
  Network net(layer_dims, activations, output_mode);
  Rng rng = Rng::stream(seed, streams::kInit);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / (layer_dims[l] + layer_dims[l + 1]));
    auto w = net.weights(l);
    for (long c = 0; c < w.cols(); ++c) {
      for (long r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
    }
    auto b = net.biases(l);
    for (long i = 0; i < b.size(); ++i) b(i) = rng.uniform(-bound, bound);
  }
  return net;
}

Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs, OutputMode mode) {
  auto trace = forward_trace(net, inputs);
  if (mode == OutputMode::Softmax) return softmax_rows(trace.back());
  return trace.back();
}

Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs) {
  return forward(net, inputs, net.output_mode());
}

Eigen::MatrixXd forward(const Network& net, const Batch& batch) { return forward(net, batch.inputs); }

LossGrad loss_and_grad(const Network& net, const Batch& batch) {
  if (!batch.has_targets()) throw UsageError("loss_and_grad: batch has no targets");
  const long n = batch.size();
  if (static_cast<long>(batch.targets.size()) != n) {
    throw ShapeError("loss_and_grad: targets length does not match batch size");
  }
  auto trace = forward_trace(net, batch.inputs);
  const Eigen::MatrixXd& logits = trace.back();
  const int k = net.output_dim();

  double loss = 0.0;
  Eigen::MatrixXd delta = softmax_rows(logits);
  for (long i = 0; i < n; ++i) {
    const int y = batch.targets[i];
    if (y < 0 || y >= k) throw ShapeError("loss_and_grad: label out of range");
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += lse - logits(i, y);
    delta(i, y) -= 1.0;
  }
  loss /= static_cast<double>(n);
  delta /= static_cast<double>(n);

  LossGrad out;
  out.loss = loss;
  out.grad.values = Eigen::VectorXd::Zero(net.param_count());
  backward_from_final(net, trace, std::move(delta), &out.grad.values, nullptr);
  return out;
}

Eigen::MatrixXd per_example_grads(const Network& net, const Batch& batch, FisherMode mode,
                                  std::uint64_t seed) {
  if (mode == FisherMode::Empirical && !batch.has_targets()) {
    throw UsageError("per_example_grads: empirical mode needs targets");
  }
  const long n = batch.size();
  const int k = net.output_dim();
  auto trace = forward_trace(net, batch.inputs);
  Eigen::MatrixXd probs = softmax_rows(trace.back());

  // Per-example cross-entropy delta at the final activations.
  Eigen::MatrixXd delta = probs;
  if (mode == FisherMode::Empirical) {
    for (long i = 0; i < n; ++i) delta(i, batch.targets[i]) -= 1.0;
  } else {
    Rng rng(seed);
    for (long i = 0; i < n; ++i) {
      Eigen::RowVectorXd row = probs.row(i);
      delta(i, rng.categorical(row.data(), k)) -= 1.0;
    }
  }

  std::vector<Eigen::MatrixXd> deltas;
  backward_from_final(net, trace, std::move(delta), nullptr, &deltas);

  Eigen::MatrixXd g(net.param_count(), n);
  for (long i = 0; i < n; ++i) {
    long off = 0;
    for (int l = 0; l < net.num_layers(); ++l) {
      const long rows = net.layer_dims()[l];
      const long cols = net.layer_dims()[l + 1];
      Eigen::Map<Eigen::MatrixXd>(g.col(i).data() + off, rows, cols).noalias() =
          trace[l].row(i).transpose() * deltas[l].row(i);
      off += rows * cols;
      g.col(i).segment(off, cols) = deltas[l].row(i).transpose();
      off += cols;
    }
  }
  return g;
}

CustomLoss custom_loss_grad(const Network& net, const Eigen::MatrixXd& inputs, const OutputLossFn& loss_fn) {
  auto trace = forward_trace(net, inputs);
  Eigen::MatrixXd probs;
  Eigen::MatrixXd outputs;
  if (net.output_mode() == OutputMode::Softmax) {
    probs = softmax_rows(trace.back());
    outputs = probs;
  } else {
    outputs = trace.back();
  }
  OutputLoss ol = loss_fn(outputs);
  if (ol.grad.rows() != outputs.rows() || ol.grad.cols() != outputs.cols()) {
    throw ShapeError("custom_loss_grad: loss gradient shape does not match outputs");
  }
  CustomLoss out;
  out.loss = ol.value;
  out.grad.values = Eigen::VectorXd::Zero(net.param_count());
  Eigen::MatrixXd delta = chain_output_grad(ol.grad, probs, net.output_mode());
  backward_from_final(net, trace, std::move(delta), &out.grad.values, nullptr);
  return out;
}

}  // namespace funcspace
