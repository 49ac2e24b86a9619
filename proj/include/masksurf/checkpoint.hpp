#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "masksurf/network.hpp"

namespace masksurf {

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

/// Model parameters, optimizer moments, resolved config and progress
/// counters. Stored as: 8-byte magic, u32 format version, u64 manifest
/// length, JSON manifest (name -> offset -> shape for every array), then the
/// arrays as little-endian 64-bit floats.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;  // pretrain | finetune | probe
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> metadata;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t optimizer_step = 0;
  std::string rng_state;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> optimizer;  // "m:<param>" and "v:<param>"

  const NamedArray* find_parameter(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws DataError on a bad magic, version, truncated blob or shape mismatch.
Checkpoint read_checkpoint(const std::string& path);

std::vector<NamedArray> snapshot(const std::vector<NamedTensor>& tensors);
/// Copies every array whose name matches a model parameter; shape must agree.
/// Returns the number of arrays copied.
std::size_t restore_parameters(MaskSurfModel& model, const std::vector<NamedArray>& arrays);

/// FNV-1a over the raw bytes of the named parameters' values, for freeze checks.
std::uint64_t parameter_checksum(const std::vector<NamedTensor>& tensors);

}  // namespace masksurf
