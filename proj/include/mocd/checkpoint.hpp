#pragma once

// Flat binary parameter container.
//
//   "MOCD" | u32 version | u32 scalar count | { u32 len, name, f64 }...
//          | u32 array count | { u32 len, name, u64 rows, u64 cols, f64[rows*cols] }...
//
// All integers and floats little-endian; array payloads are row-major.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mocd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Eigen::MatrixXd values;
};

struct Checkpoint {
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<NamedArray> arrays;

  double scalar(const std::string& name) const;
  const Eigen::MatrixXd& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mocd
