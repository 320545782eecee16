#include "mocd/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mocd {
namespace {

template <class T>
void put(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) {
    throw std::runtime_error(path.string() + ": truncated checkpoint");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

void put_name(std::ostream& os, const std::string& name) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string get_name(std::istream& is, const std::filesystem::path& path) {
  const auto len = get<std::uint32_t>(is, path);
  if (len > (1u << 16)) throw std::runtime_error(path.string() + ": implausible name length");
  std::string name(len, '\0');
  if (!is.read(name.data(), len)) throw std::runtime_error(path.string() + ": truncated name");
  return name;
}

}  // namespace

double Checkpoint::scalar(const std::string& name) const {
  for (const auto& [key, value] : scalars) {
    if (key == name) return value;
  }
  throw std::runtime_error("checkpoint has no scalar '" + name + "'");
}

const Eigen::MatrixXd& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.values;
  }
  throw std::runtime_error("checkpoint has no array '" + name + "'");
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("MOCD", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.scalars.size()));
  for (const auto& [name, value] : ckpt.scalars) {
    put_name(os, name);
    put<double>(os, value);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    put_name(os, a.name);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(a.values.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(a.values.cols()));
    for (Eigen::Index r = 0; r < a.values.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.values.cols(); ++c) put<double>(os, a.values(r, c));
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MOCD", 4) != 0) {
    throw std::runtime_error(path.string() + ": bad magic");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_scalars = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_scalars; ++i) {
    auto name = get_name(is, path);
    ckpt.scalars.emplace_back(std::move(name), get<double>(is, path));
  }
  const auto n_arrays = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = get_name(is, path);
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    if (rows > (1ull << 32) || cols > (1ull << 32)) {
      throw std::runtime_error(path.string() + ": implausible shape for " + a.name);
    }
    a.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < a.values.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.values.cols(); ++c) a.values(r, c) = get<double>(is, path);
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace mocd
