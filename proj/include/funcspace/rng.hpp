#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace funcspace {

// Deterministic xoshiro256** generator with splitmix64 seeding.
//
// All randomness in the library flows through this type so that a run is a
// pure function of its seed on any platform; the std:: distributions are
// implementation-defined and are not used. Independent streams derived from
// one top-level seed via stream() let components (init, data order,
// validation draws, ...) be perturbed independently.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  // Derives an independent generator for (seed, stream_id).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(seed ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Marsaglia polar method.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  // k indices sampled without replacement from [0, n), in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    auto p = permutation(n);
    p.resize(k);
    std::sort(p.begin(), p.end());
    return p;
  }

  // Draw from a categorical distribution given row probabilities.
  int categorical(const double* probs, int k) {
    double u = uniform();
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return k - 1;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stream ids for the per-component generators split off one experiment seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kDataOrder = 2;
inline constexpr std::uint64_t kValidation = 3;
inline constexpr std::uint64_t kPermutation = 4;
inline constexpr std::uint64_t kFisherSampling = 5;
inline constexpr std::uint64_t kMemory = 6;
inline constexpr std::uint64_t kSubsample = 7;
inline constexpr std::uint64_t kProbe = 8;
inline constexpr std::uint64_t kSynthProto = 9;
inline constexpr std::uint64_t kSynthTrain = 10;
inline constexpr std::uint64_t kSynthTest = 11;
}  // namespace streams

}  // namespace funcspace
