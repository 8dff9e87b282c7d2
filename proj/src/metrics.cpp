#include "funcspace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "funcspace/errors.hpp"
#include "funcspace/rng.hpp"

namespace funcspace {

namespace {

L2Estimate estimate_from_sq(Eigen::VectorXd per_example_sq) {
  L2Estimate e;
  e.n = per_example_sq.size();
  e.per_example_sq = std::move(per_example_sq);
  e.mean_sq = e.per_example_sq.mean();
  e.distance = std::sqrt(e.mean_sq);
  if (e.n > 1) {
    const double var =
        (e.per_example_sq.array() - e.mean_sq).square().sum() / static_cast<double>(e.n - 1);
    e.std_single = std::sqrt(var);
  }
  const double half_width = 1.96 * e.std_single / std::sqrt(static_cast<double>(e.n));
  e.ci95_low = std::sqrt(std::max(0.0, e.mean_sq - half_width));
  e.ci95_high = std::sqrt(e.mean_sq + half_width);
  return e;
}

Eigen::VectorXd squared_row_diffs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("l2_distance: output shapes differ");
  }
  if (a.rows() == 0) throw ShapeError("l2_distance: empty batch");
  return (a - b).rowwise().squaredNorm();
}

}  // namespace

L2Estimate l2_distance(const Eigen::MatrixXd& outputs_a, const Eigen::MatrixXd& outputs_b) {
  return estimate_from_sq(squared_row_diffs(outputs_a, outputs_b));
}

double param_l2_distance(const Eigen::VectorXd& params_a, const Eigen::VectorXd& params_b) {
  if (params_a.size() != params_b.size()) {
    throw ShapeError("param_l2_distance: vector lengths differ");
  }
  return (params_a - params_b).norm();
}

ConvergenceCurve convergence_curve(const Eigen::MatrixXd& outputs_a, const Eigen::MatrixXd& outputs_b,
                                   std::vector<long> sample_sizes, std::uint64_t seed) {
  const long n = outputs_a.rows();
  Eigen::VectorXd sq = squared_row_diffs(outputs_a, outputs_b);
  std::sort(sample_sizes.begin(), sample_sizes.end());

  ConvergenceCurve curve;
  // Sequential accumulation, matching the subsample loop below so the
  // full-size estimate reproduces the reference bit-exactly.
  double total = 0.0;
  for (long i = 0; i < n; ++i) total += sq(i);
  curve.reference = std::sqrt(total / static_cast<double>(n));
  Rng rng(seed);
  for (long size : sample_sizes) {
    if (size < 1 || size > n) {
      throw ShapeError("convergence_curve: sample size " + std::to_string(size) +
                       " outside [1, " + std::to_string(n) + "]");
    }
    // Ascending indices, so the full-size subsample reduces to the identity
    // order and reproduces the reference exactly.
    auto idx = rng.sample_without_replacement(static_cast<std::size_t>(n), static_cast<std::size_t>(size));
    double acc = 0.0;
    for (auto i : idx) acc += sq(static_cast<long>(i));
    curve.sample_sizes.push_back(size);
    curve.estimates.push_back(std::sqrt(acc / static_cast<double>(size)));
  }
  return curve;
}

std::vector<double> cumulative_path_length(const std::vector<Eigen::MatrixXd>& probe_outputs) {
  if (probe_outputs.size() < 2) {
    throw ShapeError("cumulative_path_length: need at least 2 checkpoints");
  }
  std::vector<double> cum;
  cum.reserve(probe_outputs.size() - 1);
  double acc = 0.0;
  for (std::size_t t = 1; t < probe_outputs.size(); ++t) {
    if (probe_outputs[t].rows() != probe_outputs[0].rows() ||
        probe_outputs[t].cols() != probe_outputs[0].cols()) {
      throw ShapeError("cumulative_path_length: probe output shape drifts at checkpoint " +
                       std::to_string(t));
    }
    acc += squared_row_diffs(probe_outputs[t], probe_outputs[t - 1]).mean();
    cum.push_back(acc);
  }
  return cum;
}

std::vector<RatioPoint> ratio_series(const std::vector<Snapshot>& snapshots, RatioScale scale) {
  if (snapshots.size() < 2) throw ShapeError("ratio_series: need at least 2 snapshots");

  auto point = [](const Snapshot& ref, const Snapshot& s) {
    L2Estimate e = l2_distance(ref.probe_outputs, s.probe_outputs);
    RatioPoint p;
    p.step = s.step;
    p.param_dist = param_l2_distance(ref.params, s.params);
    p.function_dist = e.distance;
    p.std_single = e.std_single;
    p.n = e.n;
    return p;
  };

  std::vector<RatioPoint> series;
  switch (scale) {
    case RatioScale::FromInit:
      for (const auto& s : snapshots) series.push_back(point(snapshots.front(), s));
      break;
    case RatioScale::BetweenUpdates:
      for (std::size_t t = 1; t < snapshots.size(); ++t) {
        series.push_back(point(snapshots[t - 1], snapshots[t]));
      }
      break;
    case RatioScale::BetweenEpochs: {
      // Last snapshot of each epoch, then consecutive pairs.
      std::vector<const Snapshot*> ends;
      for (std::size_t t = 0; t < snapshots.size(); ++t) {
        if (t + 1 == snapshots.size() || snapshots[t + 1].epoch != snapshots[t].epoch) {
          ends.push_back(&snapshots[t]);
        }
      }
      for (std::size_t t = 1; t < ends.size(); ++t) series.push_back(point(*ends[t - 1], *ends[t]));
      break;
    }
  }
  return series;
}

}  // namespace funcspace
