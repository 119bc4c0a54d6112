#pragma once

// Binary parameter checkpoints.
//
// Layout (little-endian):
//   "ADVDCKPT" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u64 rows, u64 cols, f64[rows*cols])
// where str is u32 length followed by bytes. Tensor data is row-major.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advdiff/nn/autodiff.hpp"

namespace advdiff::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;
};

Checkpoint snapshot(std::span<Parameter* const> params,
                    std::map<std::string, std::string> meta = {});

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into params by position. Throws ShapeError on a name,
/// count or shape mismatch.
void restore(const Checkpoint& ckpt, std::span<Parameter* const> params);

}  // namespace advdiff::nn
