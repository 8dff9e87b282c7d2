#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "funcspace/network.hpp"
#include "funcspace/rng.hpp"

namespace funcspace {

// A labeled dataset with inputs scaled to [0, 1].
struct Dataset {
  Eigen::MatrixXd inputs;  // N x D
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;  // "train" or "test"
  std::string name;

  long size() const { return inputs.rows(); }
  int dim() const { return static_cast<int>(inputs.cols()); }
};

// Parses IDX image/label files (big-endian magic 0x00000803 / 0x00000801,
// u8 payloads). Pixels are scaled by 1/255 and images flattened row-major.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Emits a dataset back to the IDX pair; pixel values are rounded to u8.
// Images are written as N x side x side where side = sqrt(D).
void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path);

enum class SynthKind { Blobs, PermutableGrid };

// Deterministic synthetic datasets. Blobs: well-separated Gaussian clusters
// in [0,1]^D (default D=2). PermutableGrid: sparse images of Gaussian bumps
// on a side x side grid (default D=64), suitable for pixel-permutation task
// sequences. The class structure depends only on (classes, dim, seed), so
// "train" and "test" splits of the same seed share one distribution.
Dataset synth_dataset(SynthKind kind, long n, int classes, std::uint64_t seed, int dim = 0,
                      const std::string& split = "train");

// Seeded uniform subsample without replacement, preserving example order.
Dataset subset(const Dataset& data, long n, std::uint64_t seed);

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);
Batch full_batch(const Dataset& data);

// Applies a pixel permutation: output column j is input column perm[j].
Dataset permute_pixels(const Dataset& data, const std::vector<int>& perm);

// Fraction of examples whose argmax output matches the label.
double accuracy(const Network& net, const Dataset& data, long eval_batch = 2048);

// Seeded shuffling batch provider. Reshuffles whenever the pass over the
// data wraps, so it never exhausts.
class BatchCycler {
 public:
  BatchCycler(const Dataset& data, long batch_size, std::uint64_t seed,
              std::uint64_t stream = streams::kDataOrder);

  Batch next();
  Batch next(long n);  // batch of an explicit size, same cycling order

  long batches_per_epoch() const;

 private:
  void refill();

  const Dataset* data_;
  long batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace funcspace
