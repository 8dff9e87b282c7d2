#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "funcspace/snapshot.hpp"

namespace funcspace {

// Symmetric pairwise distances across checkpoints, possibly spanning runs.
struct DistanceMatrix {
  std::vector<std::pair<int, long>> labels;  // (run_id, epoch)
  Eigen::MatrixXd values;                    // M x M, zero diagonal
};

struct DistanceMatrices {
  DistanceMatrix param;
  DistanceMatrix function;
};

// Pairwise parameter and function distance matrices over the snapshots of
// one or more runs. All runs must share the parameter length and the probe
// batch (checked by probe output shape) for the cross-run function matrix
// to be meaningful.
DistanceMatrices build_distance_matrices(const std::vector<std::vector<Snapshot>>& runs);

// 2-D coordinates recovered by classical multidimensional scaling.
struct Embedding2D {
  Eigen::MatrixXd points;       // M x dims, centered at the origin
  Eigen::VectorXd eigenvalues;  // the top eigenvalues used (clamped at 0)
  double stress = 0.0;          // relative residual of pairwise distances
};

// Torgerson scaling: double-center the squared distances, eigensolve, and
// keep the top `dims` components. Negative eigenvalues are clamped to zero,
// so non-Euclidean inputs embed with nonzero stress rather than failing.
Embedding2D classical_mds(const DistanceMatrix& d, int dims = 2);

}  // namespace funcspace
