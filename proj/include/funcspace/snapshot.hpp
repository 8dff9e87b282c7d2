#pragma once

#include <Eigen/Dense>
#include <string>

#include "funcspace/network.hpp"

namespace funcspace {

// Per-checkpoint record of a training run: the flattened parameters plus the
// outputs on a fixed probe batch, so parameter-space and function-space
// distances can both be computed between any two checkpoints.
struct Snapshot {
  long step = 0;
  long epoch = 0;
  Eigen::VectorXd params;
  Eigen::MatrixXd probe_outputs;  // probe_n x K
  std::string wall_note;
};

// Captures a deep copy of the parameters and the probe outputs (always
// computed in softmax mode). The probe batch must stay fixed for the run.
Snapshot record_snapshot(const Network& net, const Batch& probe, long step, long epoch);

}  // namespace funcspace
