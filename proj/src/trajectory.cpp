#include "funcspace/trajectory.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "funcspace/errors.hpp"
#include "funcspace/metrics.hpp"

namespace funcspace {

Snapshot record_snapshot(const Network& net, const Batch& probe, long step, long epoch) {
  Snapshot s;
  s.step = step;
  s.epoch = epoch;
  s.params = net.params();
  s.probe_outputs = forward(net, probe.inputs, OutputMode::Softmax);
  return s;
}

DistanceMatrices build_distance_matrices(const std::vector<std::vector<Snapshot>>& runs) {
  std::vector<const Snapshot*> all;
  std::vector<std::pair<int, long>> labels;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (const auto& s : runs[r]) {
      all.push_back(&s);
      labels.emplace_back(static_cast<int>(r), s.epoch);
    }
  }
  const long m = static_cast<long>(all.size());
  if (m < 2) throw ShapeError("build_distance_matrices: need at least 2 snapshots");
  for (const auto* s : all) {
    if (s->params.size() != all[0]->params.size()) {
      throw ShapeError("build_distance_matrices: parameter length differs across snapshots");
    }
    if (s->probe_outputs.rows() != all[0]->probe_outputs.rows() ||
        s->probe_outputs.cols() != all[0]->probe_outputs.cols()) {
      throw ShapeError("build_distance_matrices: probe batch differs across runs");
    }
  }

  DistanceMatrices out;
  out.param.labels = labels;
  out.function.labels = labels;
  out.param.values = Eigen::MatrixXd::Zero(m, m);
  out.function.values = Eigen::MatrixXd::Zero(m, m);
  for (long i = 0; i < m; ++i) {
    for (long j = i + 1; j < m; ++j) {
      const double dp = param_l2_distance(all[i]->params, all[j]->params);
      const double df = l2_distance(all[i]->probe_outputs, all[j]->probe_outputs).distance;
      out.param.values(i, j) = out.param.values(j, i) = dp;
      out.function.values(i, j) = out.function.values(j, i) = df;
    }
  }
  return out;
}

Embedding2D classical_mds(const DistanceMatrix& d, int dims) {
  const long m = d.values.rows();
  if (d.values.cols() != m) throw ShapeError("classical_mds: distance matrix not square");
  if (m < dims + 1) throw ShapeError("classical_mds: need at least dims+1 points");
  if (!d.values.isApprox(d.values.transpose(), 1e-12)) {
    throw ShapeError("classical_mds: distance matrix not symmetric");
  }

  // B = -1/2 J D^2 J with J the centering projector.
  Eigen::MatrixXd sq = d.values.array().square().matrix();
  Eigen::VectorXd row_mean = sq.rowwise().mean();
  const double total_mean = sq.mean();
  Eigen::MatrixXd b(m, m);
  for (long i = 0; i < m; ++i) {
    for (long j = 0; j < m; ++j) {
      b(i, j) = -0.5 * (sq(i, j) - row_mean(i) - row_mean(j) + total_mean);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(b);
  if (solver.info() != Eigen::Success) throw Error("classical_mds: eigensolve failed");

  Embedding2D e;
  e.points = Eigen::MatrixXd::Zero(m, dims);
  e.eigenvalues = Eigen::VectorXd::Zero(dims);
  // Eigenvalues come back ascending; take the top `dims`, clamped at zero.
  for (int c = 0; c < dims; ++c) {
    const long idx = m - 1 - c;
    const double ev = std::max(0.0, solver.eigenvalues()(idx));
    e.eigenvalues(c) = ev;
    e.points.col(c) = solver.eigenvectors().col(idx) * std::sqrt(ev);
  }
  // Double-centering already centers the configuration; remove residual
  // rounding drift so the centroid is exact.
  e.points.rowwise() -= e.points.colwise().mean();

  double ss_resid = 0.0, ss_total = 0.0;
  for (long i = 0; i < m; ++i) {
    for (long j = i + 1; j < m; ++j) {
      const double dhat = (e.points.row(i) - e.points.row(j)).norm();
      ss_resid += (d.values(i, j) - dhat) * (d.values(i, j) - dhat);
      ss_total += d.values(i, j) * d.values(i, j);
    }
  }
  e.stress = ss_total > 0.0 ? std::sqrt(ss_resid / ss_total) : 0.0;
  return e;
}

}  // namespace funcspace
