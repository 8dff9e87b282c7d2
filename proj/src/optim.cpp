#include "funcspace/optim.hpp"

#include <cmath>

#include "funcspace/errors.hpp"

namespace funcspace {

namespace {

void check_param_len(const Eigen::VectorXd& state, const Network& net, const char* who) {
  if (state.size() != static_cast<Eigen::Index>(net.param_count()))
    throw ShapeError(std::string(who) + ": state sized for " + std::to_string(state.size()) +
                     " params, network has " + std::to_string(net.param_count()));
}

}  // namespace

Sgd::Sgd(std::size_t param_count, SgdConfig cfg) : cfg_(cfg) {
  if (cfg_.lr < 0.0) throw ConfigError("sgd: lr must be >= 0");
  if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0,1)");
  if (cfg_.weight_decay < 0.0) throw ConfigError("sgd: weight_decay must be >= 0");
  velocity_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count));
}

StepInfo Sgd::step(Network& net, const Batch& batch) {
  LossGrad lg = loss_and_grad(net, batch);
  StepInfo info = step_with_grad(net, lg.loss, lg.grad.values);
  info.passes = 2;
  total_passes_ += 2;
  return info;
}

StepInfo Sgd::step_with_grad(Network& net, double loss, const Eigen::VectorXd& grad) {
  check_param_len(velocity_, net, "sgd");
  if (grad.size() != velocity_.size()) throw ShapeError("sgd: gradient length mismatch");
  Eigen::VectorXd g = grad;
  if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * net.params();
  velocity_ = cfg_.momentum * velocity_ + cfg_.lr * g;
  net.params() -= velocity_;
  StepInfo info;
  info.loss = loss;
  info.update_norm = velocity_.norm();
  info.diverged = !net.params().allFinite();
  return info;
}

Adam::Adam(std::size_t param_count, AdamConfig cfg) : cfg_(cfg) {
  if (cfg_.lr < 0.0) throw ConfigError("adam: lr must be >= 0");
  m_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count));
  u_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count));
}

StepInfo Adam::step(Network& net, const Batch& batch) {
  LossGrad lg = loss_and_grad(net, batch);
  StepInfo info = step_with_grad(net, lg.loss, lg.grad.values);
  info.passes = 2;
  total_passes_ += 2;
  return info;
}

StepInfo Adam::step_with_grad(Network& net, double loss, const Eigen::VectorXd& grad) {
  check_param_len(m_, net, "adam");
  if (grad.size() != m_.size()) throw ShapeError("adam: gradient length mismatch");
  Eigen::VectorXd g = grad;
  if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * net.params();
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
  u_ = cfg_.beta2 * u_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  Eigen::VectorXd update =
      cfg_.lr * (m_ / bc1).cwiseQuotient(((u_ / bc2).cwiseSqrt().array() + cfg_.eps).matrix());
  net.params() -= update;
  StepInfo info;
  info.loss = loss;
  info.update_norm = update.norm();
  info.diverged = !net.params().allFinite();
  return info;
}

Penalty l2_penalty_grad(const Network& net_at_proposal, const Eigen::MatrixXd& ref_outputs,
                        const Eigen::MatrixXd& val_inputs, double lambda) {
  const Eigen::Index n = val_inputs.rows();
  if (ref_outputs.rows() != n)
    throw ShapeError("penalty: reference outputs for " + std::to_string(ref_outputs.rows()) +
                     " examples, validation batch has " + std::to_string(n));
  double mean_sq = 0.0;
  CustomLoss res = custom_loss_grad(
      net_at_proposal, val_inputs, [&](const Eigen::MatrixXd& out) -> OutputLoss {
        if (out.cols() != ref_outputs.cols())
          throw ShapeError("penalty: output width mismatch with reference");
        Eigen::MatrixXd diff = out - ref_outputs;
        mean_sq = diff.squaredNorm() / double(n);
        const double root = std::sqrt(mean_sq + kPenaltyEps);
        OutputLoss ol;
        ol.value = lambda * root;
        ol.grad = (lambda / (double(n) * root)) * diff;
        return ol;
      });
  Penalty p;
  p.value = res.loss;
  p.distance = std::sqrt(mean_sq);
  p.grad = std::move(res.grad);
  return p;
}

Hcgd::Hcgd(std::size_t param_count, HcgdConfig cfg, ValSource val_source)
    : cfg_(cfg), val_source_(std::move(val_source)) {
  if (cfg_.lr <= 0.0) throw ConfigError("hcgd: lr must be > 0");
  if (cfg_.inner_lr < 0.0) throw ConfigError("hcgd: inner_lr must be >= 0");
  if (cfg_.lambda < 0.0) throw ConfigError("hcgd: lambda must be >= 0");
  if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0) throw ConfigError("hcgd: momentum must be in [0,1)");
  if (cfg_.n_corrections < 1) throw ConfigError("hcgd: need at least one correction");
  if (cfg_.val_batch_size < 1) throw ConfigError("hcgd: val_batch_size must be >= 1");
  if (!val_source_) throw ConfigError("hcgd: missing validation batch source");
  const Eigen::Index p = static_cast<Eigen::Index>(param_count);
  velocity_ = Eigen::VectorXd::Zero(p);
  m_ = Eigen::VectorXd::Zero(p);
  u_ = Eigen::VectorXd::Zero(p);
}

StepInfo Hcgd::step(Network& net, const Batch& train_batch) {
  check_param_len(velocity_, net, "hcgd");
  StepInfo info;

  LossGrad lg = loss_and_grad(net, train_batch);
  info.loss = lg.loss;
  info.passes += 2;
  const Eigen::VectorXd& J = lg.grad.values;

  Eigen::VectorXd delta;
  if (cfg_.proposal == HcgdProposal::Sgd) {
    velocity_ = cfg_.momentum * velocity_ + cfg_.lr * J;
    delta = -velocity_;
  } else {
    // Adam proposal: moments are driven by the raw gradient and are not
    // touched by the corrections below.
    ++adam_t_;
    m_ = 0.9 * m_ + 0.1 * J;
    u_ = 0.999 * u_ + 0.001 * J.cwiseProduct(J);
    const double bc1 = 1.0 - std::pow(0.9, double(adam_t_));
    const double bc2 = 1.0 - std::pow(0.999, double(adam_t_));
    delta = -cfg_.lr * (m_ / bc1).cwiseQuotient(((u_ / bc2).cwiseSqrt().array() + 1e-8).matrix());
  }

  const Eigen::VectorXd theta_t = net.params();
  Batch val;
  Eigen::MatrixXd ref;
  for (long j = 1; j <= cfg_.n_corrections; ++j) {
    if (j == 1 || cfg_.fresh_val_per_correction) {
      val = val_source_(cfg_.val_batch_size);
      net.params() = theta_t;
      ref = forward(net, val.inputs);  // frozen reference outputs
      info.passes += 1;
    }
    net.params() = theta_t + delta;
    Penalty pen = l2_penalty_grad(net, ref, val.inputs, cfg_.lambda);
    info.passes += 2;
    info.penalty = pen.value;
    Eigen::VectorXd g = std::move(pen.grad.values);
    if (j >= 2) g += J;  // later corrections keep descending the cost too
    delta -= cfg_.inner_lr * g;
    if (cfg_.proposal == HcgdProposal::Sgd) velocity_ += cfg_.inner_lr * g;
  }

  net.params() = theta_t + delta;
  info.update_norm = delta.norm();
  info.diverged = !net.params().allFinite();
  total_passes_ += info.passes;
  return info;
}

FisherOperator::FisherOperator(Eigen::MatrixXd per_example_grads, FisherMode mode)
    : G_(std::move(per_example_grads)), mode_(mode) {
  if (G_.cols() < 1) throw ShapeError("fisher: need at least one example column");
}

FisherOperator FisherOperator::from_batch(const Network& net, const Batch& batch, FisherMode mode,
                                          std::uint64_t seed) {
  return FisherOperator(per_example_grads(net, batch, mode, seed), mode);
}

Eigen::VectorXd FisherOperator::apply(const Eigen::VectorXd& v) const {
  if (v.size() != G_.rows())
    throw ShapeError("fisher: vector length " + std::to_string(v.size()) + " != param count " +
                     std::to_string(G_.rows()));
  // Right-to-left keeps everything O(P*N); the P x P matrix never exists.
  return G_ * (G_.transpose() * v) / double(G_.cols());
}

Eigen::VectorXd fisher_vector_product(const FisherOperator& fisher, const Eigen::VectorXd& v) {
  return fisher.apply(v);
}

NgdCorrection ngd_correct(const Eigen::VectorXd& grad, const FisherOperator& fisher,
                          Eigen::VectorXd delta0, double eta, double lambda, long n) {
  if (grad.size() != fisher.param_count()) throw ShapeError("ngd: gradient length mismatch");
  if (delta0.size() != grad.size()) throw ShapeError("ngd: proposal length mismatch");
  NgdCorrection out;
  out.delta = std::move(delta0);
  const double scale = out.delta.norm() + eta * grad.norm() + 1e-30;
  for (long i = 0; i < n; ++i) {
    out.delta -= eta * (grad + lambda * fisher.apply(out.delta));
    if (!out.delta.allFinite() || out.delta.norm() > 1e9 * scale) {
      out.diverged = true;
      break;
    }
  }
  return out;
}

NgdByGd::NgdByGd(std::size_t param_count, NgdConfig cfg, std::uint64_t seed)
    : cfg_(cfg), fisher_rng_(Rng::stream(seed, streams::kFisherSampling)) {
  if (cfg_.inner_lr < 0.0) throw ConfigError("ngd: inner_lr must be >= 0");
  if (cfg_.lambda <= 0.0) throw ConfigError("ngd: lambda must be > 0");
  if (cfg_.n_corrections < 0) throw ConfigError("ngd: n_corrections must be >= 0");
  if (cfg_.proposer_lr <= 0.0) throw ConfigError("ngd: proposer_lr must be > 0");
  const Eigen::Index p = static_cast<Eigen::Index>(param_count);
  m_ = Eigen::VectorXd::Zero(p);
  u_ = Eigen::VectorXd::Zero(p);
}

StepInfo NgdByGd::step(Network& net, const Batch& batch) {
  check_param_len(u_, net, "ngd");
  StepInfo info;

  LossGrad lg = loss_and_grad(net, batch);
  info.loss = lg.loss;
  info.passes += 2;
  const Eigen::VectorXd& J = lg.grad.values;

  Eigen::VectorXd delta;
  if (cfg_.proposer == NgdProposer::RmsProp) {
    u_ = cfg_.rms_decay * u_ + (1.0 - cfg_.rms_decay) * J.cwiseProduct(J);
    delta = -cfg_.proposer_lr * J.cwiseQuotient((u_.cwiseSqrt().array() + cfg_.eps).matrix());
  } else {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * J;
    u_ = cfg_.beta2 * u_ + (1.0 - cfg_.beta2) * J.cwiseProduct(J);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    delta = -cfg_.proposer_lr *
            (m_ / bc1).cwiseQuotient(((u_ / bc2).cwiseSqrt().array() + cfg_.eps).matrix());
  }

  if (cfg_.n_corrections > 0) {
    FisherOperator fisher =
        FisherOperator::from_batch(net, batch, cfg_.fisher_mode, fisher_rng_.next_u64());
    info.passes += 2;
    NgdCorrection corr =
        ngd_correct(J, fisher, std::move(delta), cfg_.inner_lr, cfg_.lambda, cfg_.n_corrections);
    if (corr.diverged) {
      // Leave the parameters alone rather than applying a blown-up update.
      info.diverged = true;
      total_passes_ += info.passes;
      return info;
    }
    delta = std::move(corr.delta);
  }

  net.params() += delta;
  info.update_norm = delta.norm();
  info.diverged = !net.params().allFinite();
  total_passes_ += info.passes;
  return info;
}

}  // namespace funcspace
