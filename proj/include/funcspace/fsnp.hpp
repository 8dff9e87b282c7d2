#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace funcspace::fsnp {

// Versioned binary container for checkpoint-style records. Layout:
// magic "FSNP", u32 version, u64 param_len, u64 probe_n, u64 probe_k
// (all little-endian), then per record param_len float64 values followed by
// probe_n*probe_k float64 values in row-major order.
inline constexpr std::uint32_t kVersion = 1;

struct Record {
  Eigen::VectorXd params;         // param_len
  Eigen::MatrixXd probe_outputs;  // probe_n x probe_k
};

struct File {
  std::uint32_t version = kVersion;
  std::uint64_t param_len = 0;
  std::uint64_t probe_n = 0;
  std::uint64_t probe_k = 0;
  std::vector<Record> records;
};

void write(const std::string& path, const File& file);
File read(const std::string& path);

}  // namespace funcspace::fsnp
