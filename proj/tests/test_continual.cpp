#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <unistd.h>
#include <vector>

#include "funcspace/continual.hpp"
#include "funcspace/dataset.hpp"
#include "funcspace/network.hpp"
#include "funcspace/rng.hpp"

using namespace funcspace;
namespace fs = std::filesystem;

namespace {

Dataset manual_dataset(long n, int dim, int classes, std::uint64_t seed, const char* name) {
  Rng rng(seed);
  Dataset d;
  d.inputs.resize(n, dim);
  for (long r = 0; r < n; ++r)
    for (int c = 0; c < dim; ++c) d.inputs(r, c) = rng.uniform();
  d.labels.resize(static_cast<std::size_t>(n));
  for (long r = 0; r < n; ++r) d.labels[static_cast<std::size_t>(r)] = static_cast<int>(r % classes);
  d.num_classes = classes;
  d.split = "train";
  d.name = name;
  return d;
}

Network small_net(int dim, int classes, std::uint64_t seed) {
  return init_network({dim, 10, classes}, {Activation::Relu, Activation::Identity},
                      OutputMode::Softmax, seed);
}

std::vector<long> task_counts(const WorkingMemory& mem, int tasks) {
  std::vector<long> counts(static_cast<std::size_t>(tasks), 0);
  for (int t : mem.task_ids) ++counts[static_cast<std::size_t>(t)];
  return counts;
}

// True if row r of (inputs, outputs) appears bit-exactly in prev.
bool row_was_cached(const WorkingMemory& prev, const WorkingMemory& cur, long r) {
  for (long p = 0; p < prev.size(); ++p) {
    if ((prev.inputs.row(p) - cur.inputs.row(r)).cwiseAbs().maxCoeff() == 0.0 &&
        (prev.recorded_outputs.row(p) - cur.recorded_outputs.row(r)).cwiseAbs().maxCoeff() == 0.0 &&
        prev.task_ids[static_cast<std::size_t>(p)] == cur.task_ids[static_cast<std::size_t>(r)] &&
        prev.labels[static_cast<std::size_t>(p)] == cur.labels[static_cast<std::size_t>(r)]) {
      return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("pixel permutations are seeded bijections") {
  std::vector<int> p1 = make_pixel_permutation(64, 7);
  std::vector<int> p2 = make_pixel_permutation(64, 7);
  CHECK(p1 == p2);
  std::vector<int> p3 = make_pixel_permutation(64, 8);
  CHECK(p1 != p3);

  std::vector<int> sorted = p1;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> iota(64);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);

  CHECK(make_pixel_permutation(64, kIdentityPermutationSeed) == iota);
}

TEST_CASE("permuted tasks shuffle pixels consistently and keep labels") {
  Dataset base = manual_dataset(6, 9, 3, 11, "base");
  Dataset task = make_permuted_task(base, 21);
  CHECK(task.labels == base.labels);
  CHECK(task.num_classes == base.num_classes);

  // Each row holds the same multiset of values.
  for (long r = 0; r < base.size(); ++r) {
    Eigen::VectorXd a = base.inputs.row(r).transpose();
    Eigen::VectorXd b = task.inputs.row(r).transpose();
    std::sort(a.data(), a.data() + a.size());
    std::sort(b.data(), b.data() + b.size());
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }

  // The same permutation applies to every row: infer it from row 0 (values
  // are almost surely distinct) and check it reproduces the rest.
  std::vector<int> perm(9, -1);
  for (int j = 0; j < 9; ++j) {
    for (int k = 0; k < 9; ++k) {
      if (task.inputs(0, j) == base.inputs(0, k)) {
        perm[static_cast<std::size_t>(j)] = k;
        break;
      }
    }
  }
  for (long r = 0; r < base.size(); ++r)
    for (int j = 0; j < 9; ++j)
      CHECK(task.inputs(r, j) == base.inputs(r, perm[static_cast<std::size_t>(j)]));

  Dataset same = make_permuted_task(base, kIdentityPermutationSeed);
  CHECK((same.inputs - base.inputs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("task sequences are deterministic and distinct per task") {
  Dataset train = manual_dataset(20, 16, 4, 13, "train");
  Dataset test = manual_dataset(8, 16, 4, 14, "test");
  TaskSequence a = make_task_sequence(train, test, 5, 2, 99);
  TaskSequence b = make_task_sequence(train, test, 5, 2, 99);
  CHECK(a.tasks() == 5);
  CHECK(a.epochs_per_task == 2);
  for (long t = 0; t < 5; ++t) CHECK(a.perms[static_cast<std::size_t>(t)] == b.perms[static_cast<std::size_t>(t)]);
  for (long t = 1; t < 5; ++t) CHECK(a.perms[0] != a.perms[static_cast<std::size_t>(t)]);

  CHECK_THROWS_AS(make_task_sequence(train, test, 0, 2, 1), std::runtime_error);
  Dataset wrong = manual_dataset(8, 9, 4, 15, "wrong");
  CHECK_THROWS_AS(make_task_sequence(train, wrong, 2, 2, 1), std::runtime_error);
}

TEST_CASE("working memory stays balanced through a task sequence") {
  const int dim = 5, classes = 3;
  Network net = small_net(dim, classes, 3);
  Rng rng(42);
  WorkingMemory mem;
  mem.capacity = 10;

  Dataset d0 = manual_dataset(40, dim, classes, 101, "t0");
  Dataset d1 = manual_dataset(40, dim, classes, 102, "t1");
  Dataset d2 = manual_dataset(40, dim, classes, 103, "t2");

  update_memory(mem, d0, net, 0, rng);
  CHECK(mem.size() == 10);
  CHECK(task_counts(mem, 1) == std::vector<long>{10});
  // Fresh rows carry the network's current outputs on the cached inputs.
  Eigen::MatrixXd expect = forward(net, mem.inputs, OutputMode::Softmax);
  CHECK((mem.recorded_outputs - expect).cwiseAbs().maxCoeff() == 0.0);
  WorkingMemory after0 = mem;

  // Change the network so stale recordings would be detectable.
  net.params() *= 1.5;
  update_memory(mem, d1, net, 1, rng);
  CHECK(mem.size() == 10);
  CHECK(task_counts(mem, 2) == std::vector<long>{5, 5});
  WorkingMemory after1 = mem;

  net.params() *= 0.5;
  update_memory(mem, d2, net, 2, rng);
  CHECK(mem.size() == 10);
  CHECK(task_counts(mem, 3) == std::vector<long>{4, 3, 3});

  // Survivors keep their original recordings verbatim.
  for (long r = 0; r < mem.size(); ++r) {
    const int t = mem.task_ids[static_cast<std::size_t>(r)];
    if (t == 0) CHECK(row_was_cached(after0, mem, r));
    if (t == 1) CHECK(row_was_cached(after1, mem, r));
  }
  // Fresh rows sit at the bottom with outputs from the network as it stands.
  Eigen::MatrixXd fresh = forward(net, mem.inputs.bottomRows(3), OutputMode::Softmax);
  CHECK((mem.recorded_outputs.bottomRows(3) - fresh).cwiseAbs().maxCoeff() == 0.0);

  // Cached inputs come from the originating task's dataset.
  for (long r = 0; r < mem.size(); ++r) {
    const Dataset& src = mem.task_ids[static_cast<std::size_t>(r)] == 0   ? d0
                         : mem.task_ids[static_cast<std::size_t>(r)] == 1 ? d1
                                                                          : d2;
    bool found = false;
    for (long i = 0; i < src.size() && !found; ++i)
      found = (src.inputs.row(i) - mem.inputs.row(r)).cwiseAbs().maxCoeff() == 0.0;
    CHECK(found);
  }
}

TEST_CASE("working memory validates its inputs") {
  const int dim = 4, classes = 2;
  Network net = small_net(dim, classes, 4);
  Rng rng(1);
  Dataset d = manual_dataset(20, dim, classes, 104, "d");

  WorkingMemory mem;
  mem.capacity = 2;
  update_memory(mem, d, net, 0, rng);
  update_memory(mem, d, net, 1, rng);
  // Three tasks cannot share two slots.
  CHECK_THROWS_AS(update_memory(mem, d, net, 2, rng), std::runtime_error);

  WorkingMemory order;
  order.capacity = 8;
  update_memory(order, d, net, 1, rng);
  // Task ids must arrive in increasing order.
  CHECK_THROWS_AS(update_memory(order, d, net, 1, rng), std::runtime_error);
  CHECK_THROWS_AS(update_memory(order, d, net, 0, rng), std::runtime_error);

  WorkingMemory big;
  big.capacity = 64;
  Dataset tiny = manual_dataset(10, dim, classes, 105, "tiny");
  // The task's quota (64) exceeds what the task can supply.
  CHECK_THROWS_AS(update_memory(big, tiny, net, 0, rng), std::runtime_error);
}

TEST_CASE("memory loss is zero at capture and matches finite differences") {
  const int dim = 6, classes = 4;
  Network net = small_net(dim, classes, 5);
  Rng rng(7);
  Dataset d = manual_dataset(30, dim, classes, 106, "d");
  WorkingMemory mem;
  mem.capacity = 12;
  update_memory(mem, d, net, 0, rng);

  SUBCASE("empty memory contributes nothing") {
    WorkingMemory empty;
    MemoryLoss ml = l2_memory_loss(net, empty, 1.3, false);
    CHECK(ml.value == 0.0);
    CHECK(ml.grad.values.size() == net.param_count());
    CHECK(ml.grad.values.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("at the capture point the pull vanishes") {
    MemoryLoss ml = l2_memory_loss(net, mem, 1.3, false);
    CHECK(ml.value == doctest::Approx(0.5 * 1.3 * 1e-6).epsilon(1e-10));  // (lambda/2)*sqrt(eps)
    CHECK(ml.grad.values.cwiseAbs().maxCoeff() == 0.0);
    MemoryLoss sq = l2_memory_loss(net, mem, 1.3, true);
    CHECK(sq.value == 0.0);
    CHECK(sq.grad.values.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("gradients match central differences after drift") {
    net.params() += 0.08 * Eigen::VectorXd::Random(net.param_count());
    for (bool squared : {false, true}) {
      MemoryLoss ml = l2_memory_loss(net, mem, 1.3, squared);
      const double h = 1e-6;
      double worst = 0.0;
      for (long i = 0; i < net.param_count(); ++i) {
        const double saved = net.params()(i);
        net.params()(i) = saved + h;
        const double up = l2_memory_loss(net, mem, 1.3, squared).value;
        net.params()(i) = saved - h;
        const double down = l2_memory_loss(net, mem, 1.3, squared).value;
        net.params()(i) = saved;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - ml.grad.values(i)) / std::max(1.0, std::abs(fd)));
      }
      CHECK(worst < 1e-5);
    }
  }

  SUBCASE("loss scales linearly in lambda") {
    net.params() += 0.05 * Eigen::VectorXd::Random(net.param_count());
    MemoryLoss a = l2_memory_loss(net, mem, 1.0, false);
    MemoryLoss b = l2_memory_loss(net, mem, 2.6, false);
    CHECK(b.value == doctest::Approx(2.6 * a.value).epsilon(1e-13));
    CHECK((b.grad.values - 2.6 * a.grad.values).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("memory cache round-trips through disk") {
  const int dim = 7, classes = 3;
  Network net = small_net(dim, classes, 6);
  Rng rng(9);
  Dataset d = manual_dataset(25, dim, classes, 107, "d");
  WorkingMemory mem;
  mem.capacity = 9;
  update_memory(mem, d, net, 0, rng);

  const std::string path =
      (fs::temp_directory_path() / ("memcache-" + std::to_string(::getpid()) + ".fsnp")).string();
  save_memory(mem, path);
  WorkingMemory back = load_memory(path);
  CHECK(back.size() == mem.size());
  CHECK((back.inputs - mem.inputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.recorded_outputs - mem.recorded_outputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.task_ids == mem.task_ids);
  CHECK(back.labels == mem.labels);
  fs::remove(path);
  fs::remove(path + ".tasks");
}

TEST_CASE("diagonal fisher equals the per-example mean of squared gradients") {
  const int dim = 5, classes = 3;
  Network net = small_net(dim, classes, 8);
  Dataset d = manual_dataset(12, dim, classes, 108, "d");

  const long n = 7;
  Eigen::VectorXd fisher = ewc_diag_fisher(net, d, n);
  CHECK(fisher.size() == net.param_count());
  CHECK(fisher.minCoeff() >= 0.0);

  // Oracle: one single-example backward pass per example.
  Eigen::VectorXd oracle = Eigen::VectorXd::Zero(net.param_count());
  for (long i = 0; i < n; ++i) {
    Batch single;
    single.inputs = d.inputs.row(i);
    single.targets = {d.labels[static_cast<std::size_t>(i)]};
    Eigen::VectorXd g = loss_and_grad(net, single).grad.values;
    oracle += g.cwiseProduct(g);
  }
  oracle /= double(n);
  CHECK((fisher - oracle).cwiseAbs().maxCoeff() < 1e-12);

  // Requesting more samples than the dataset holds clamps to the dataset.
  Eigen::VectorXd all = ewc_diag_fisher(net, d, 1000);
  Eigen::VectorXd exact = ewc_diag_fisher(net, d, d.size());
  CHECK((all - exact).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a perfectly confident correct network has zero fisher") {
  Network net({1, 2}, {Activation::Identity}, OutputMode::Softmax);
  net.params().setZero();
  net.weights(0) << 1000.0, 0.0;  // logits (1000, 0): softmax underflows to (1, 0)
  Dataset d;
  d.inputs.resize(2, 1);
  d.inputs << 1.0, 1.0;
  d.labels = {0, 0};
  d.num_classes = 2;
  Eigen::VectorXd fisher = ewc_diag_fisher(net, d, 2);
  CHECK(fisher.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ewc anchor behaves like the quadratic it claims to be") {
  const int dim = 4, classes = 3;
  Network net = small_net(dim, classes, 10);
  const long p = net.param_count();

  EwcState st;
  st.theta_A = net.params();
  st.fisher_diag = Eigen::VectorXd::Ones(p);
  st.lambda = 2.0;

  SUBCASE("zero at the anchor") {
    MemoryLoss ml = ewc_loss(net, {st});
    CHECK(ml.value == 0.0);
    CHECK(ml.grad.values.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("identity fisher with lambda 2 gives the squared distance") {
    Eigen::VectorXd d = Eigen::VectorXd::Random(p) * 0.3;
    net.params() += d;
    MemoryLoss ml = ewc_loss(net, {st});
    CHECK(ml.value == doctest::Approx(d.squaredNorm()).epsilon(1e-13));
    CHECK((ml.grad.values - 2.0 * d).cwiseAbs().maxCoeff() < 1e-13);
  }

  SUBCASE("value scales quadratically with the displacement") {
    Eigen::VectorXd d = Eigen::VectorXd::Random(p) * 0.2;
    net.params() = st.theta_A + d;
    const double v1 = ewc_loss(net, {st}).value;
    net.params() = st.theta_A + 3.0 * d;
    const double v3 = ewc_loss(net, {st}).value;
    CHECK(v3 == doctest::Approx(9.0 * v1).epsilon(1e-12));
  }

  SUBCASE("states accumulate additively") {
    net.params() += Eigen::VectorXd::Random(p) * 0.1;
    MemoryLoss one = ewc_loss(net, {st});
    MemoryLoss two = ewc_loss(net, {st, st});
    CHECK(two.value == doctest::Approx(2.0 * one.value).epsilon(1e-13));
    CHECK((two.grad.values - 2.0 * one.grad.values).cwiseAbs().maxCoeff() < 1e-13);
  }

  SUBCASE("gradient matches central differences for a random fisher") {
    EwcState rnd = st;
    rnd.fisher_diag = Eigen::VectorXd::Random(p).cwiseAbs();
    rnd.lambda = 3.5;
    net.params() += Eigen::VectorXd::Random(p) * 0.2;
    MemoryLoss ml = ewc_loss(net, {rnd});
    const double h = 1e-5;
    double worst = 0.0;
    for (long i = 0; i < p; ++i) {
      const double saved = net.params()(i);
      net.params()(i) = saved + h;
      const double up = ewc_loss(net, {rnd}).value;
      net.params()(i) = saved - h;
      const double down = ewc_loss(net, {rnd}).value;
      net.params()(i) = saved;
      worst = std::max(worst, std::abs((up - down) / (2.0 * h) - ml.grad.values(i)));
    }
    CHECK(worst < 1e-8);  // quadratic: central differences are near-exact
  }

  SUBCASE("length mismatches are rejected") {
    EwcState bad = st;
    bad.theta_A = Eigen::VectorXd::Zero(p + 1);
    CHECK_THROWS_AS(ewc_loss(net, {bad}), std::runtime_error);
  }
}

TEST_CASE("retraining fires on schedule and only with a non-empty cache") {
  const int dim = 4, classes = 2;
  Network net = small_net(dim, classes, 12);
  Adam opt(static_cast<std::size_t>(net.param_count()), AdamConfig{});

  WorkingMemory empty;
  for (long s = 1; s <= 20; ++s) CHECK_FALSE(retrain_step(net, empty, opt, 10, s));

  Dataset d = manual_dataset(20, dim, classes, 109, "d");
  WorkingMemory mem;
  mem.capacity = 8;
  Rng rng(3);
  update_memory(mem, d, net, 0, rng);

  int fired = 0;
  for (long s = 1; s <= 100; ++s) {
    const Eigen::VectorXd before = net.params();
    const bool took = retrain_step(net, mem, opt, 10, s);
    if (took) {
      ++fired;
      CHECK(s % 10 == 0);
      CHECK((net.params() - before).cwiseAbs().maxCoeff() > 0.0);
    } else {
      CHECK((net.params() - before).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  CHECK(fired == 10);
  CHECK_THROWS_AS(retrain_step(net, mem, opt, 0, 1), std::runtime_error);
}

TEST_CASE("forgetting method names round-trip") {
  for (ForgetMethod m : {ForgetMethod::Adam, ForgetMethod::AdamRetrain, ForgetMethod::L2Memory,
                         ForgetMethod::Ewc}) {
    CHECK(parse_forget_method(forget_method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_forget_method("dropout"), std::runtime_error);
}

TEST_CASE("with a single task every defense degenerates to plain adam") {
  Dataset train = synth_dataset(SynthKind::Blobs, 90, 3, 77, 8, "train");
  Dataset test = synth_dataset(SynthKind::Blobs, 45, 3, 77, 8, "test");
  TaskSequence seq = make_task_sequence(train, test, 1, 1, 5);

  ContinualConfig cfg;
  cfg.hidden = {12};
  cfg.batch_size = 32;
  cfg.capacity = 30;
  cfg.fisher_samples = 50;
  cfg.seed = 4;

  ContinualResult ref = run_continual(seq, ForgetMethod::Adam, cfg);
  REQUIRE(ref.accuracy.size() == 1);
  REQUIRE(ref.accuracy[0].size() == 1);
  for (ForgetMethod m : {ForgetMethod::AdamRetrain, ForgetMethod::L2Memory, ForgetMethod::Ewc}) {
    ContinualResult r = run_continual(seq, m, cfg);
    CHECK(r.accuracy[0][0] == ref.accuracy[0][0]);
    CHECK((r.final_params - ref.final_params).cwiseAbs().maxCoeff() == 0.0);
  }

  // Memory methods leave a balanced cache behind even for one task.
  ContinualResult mem_run = run_continual(seq, ForgetMethod::L2Memory, cfg);
  CHECK(mem_run.memory.size() == cfg.capacity);
  CHECK(task_counts(mem_run.memory, 1) == std::vector<long>{cfg.capacity});
}

TEST_CASE("the memory defense softens forgetting on a small task sequence") {
  Dataset train = synth_dataset(SynthKind::PermutableGrid, 600, 4, 3, 64, "train");
  Dataset test = synth_dataset(SynthKind::PermutableGrid, 240, 4, 3, 64, "test");
  TaskSequence seq = make_task_sequence(train, test, 3, 3, 11);

  ContinualConfig cfg;
  cfg.hidden = {48};
  cfg.batch_size = 64;
  cfg.capacity = 150;
  cfg.seed = 2;

  ContinualResult adam = run_continual(seq, ForgetMethod::Adam, cfg);
  ContinualResult l2 = run_continual(seq, ForgetMethod::L2Memory, cfg);

  // Shapes: lower-triangular accuracy table.
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(adam.accuracy[t].size() == t + 1);
    CHECK(l2.accuracy[t].size() == t + 1);
  }

  const double adam_drop = adam.accuracy[0][0] - adam.accuracy[2][0];
  const double l2_drop = l2.accuracy[0][0] - l2.accuracy[2][0];
  CHECK(l2_drop < adam_drop);
  CHECK(l2.accuracy[2][0] > adam.accuracy[2][0]);
}
