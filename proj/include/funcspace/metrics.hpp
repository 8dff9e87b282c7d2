#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "funcspace/snapshot.hpp"

namespace funcspace {

// Empirical function distance between two output matrices, with per-example
// statistics for uncertainty quantification. The distance is the square
// root of the mean per-example squared output difference; the squared form
// is kept separately because path lengths sum squared distances.
struct L2Estimate {
  double distance = 0.0;            // sqrt(mean_sq)
  double mean_sq = 0.0;             // mean of per_example_sq
  Eigen::VectorXd per_example_sq;   // N squared output differences
  double std_single = 0.0;          // sample std of per_example_sq
  long n = 0;
  double ci95_low = 0.0;            // normal-approximation bounds on mean_sq,
  double ci95_high = 0.0;           // clamped at 0 and mapped through sqrt
};

L2Estimate l2_distance(const Eigen::MatrixXd& outputs_a, const Eigen::MatrixXd& outputs_b);

// Euclidean distance between two flat parameter vectors.
double param_l2_distance(const Eigen::VectorXd& params_a, const Eigen::VectorXd& params_b);

struct ConvergenceCurve {
  std::vector<long> sample_sizes;   // strictly increasing
  std::vector<double> estimates;    // distance at each subsample size
  double reference = 0.0;           // full-set distance
};

// Distance estimates on seeded random subsamples (without replacement) of
// increasing size, against the full-set reference.
ConvergenceCurve convergence_curve(const Eigen::MatrixXd& outputs_a, const Eigen::MatrixXd& outputs_b,
                                   std::vector<long> sample_sizes, std::uint64_t seed);

// Running sum of squared distances between consecutive probe outputs;
// entry t covers checkpoints 0..t+1. Nondecreasing by construction.
std::vector<double> cumulative_path_length(const std::vector<Eigen::MatrixXd>& probe_outputs);

enum class RatioScale { BetweenUpdates, BetweenEpochs, FromInit };

// One checkpoint's paired parameter/function distances against the
// reference implied by the scale.
struct RatioPoint {
  long step = 0;
  double param_dist = 0.0;
  double function_dist = 0.0;
  double std_single = 0.0;
  long n = 0;
};

// Paired parameter-space and function-space distances at one of three
// scales: consecutive snapshots, consecutive epoch-end snapshots, or every
// snapshot against the first.
std::vector<RatioPoint> ratio_series(const std::vector<Snapshot>& snapshots, RatioScale scale);

}  // namespace funcspace
