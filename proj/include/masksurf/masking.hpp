#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "masksurf/common.hpp"

namespace masksurf {

enum class MaskStrategy { random, block };

MaskStrategy parse_mask_strategy(const std::string& name);
const char* to_string(MaskStrategy s);

/// Which of N patches are hidden from the encoder.
struct MaskPartition {
  std::vector<std::uint8_t> masked;  // 1 = masked
  double ratio = 0.0;
  MaskStrategy strategy = MaskStrategy::random;

  std::size_t size() const { return masked.size(); }
  std::size_t masked_count() const;
  /// Patch positions in original order.
  std::vector<std::size_t> masked_indices() const;
  std::vector<std::size_t> visible_indices() const;
};

/// round-half-up(ratio * n); throws InvalidArgument unless the result lies in
/// [1, n-1] and 0 < ratio < 1.
std::size_t masked_count_for(std::size_t n, double ratio);

/// Masks exactly round(ratio*n) patches chosen uniformly without replacement.
MaskPartition random_mask(std::size_t n, double ratio, std::uint64_t seed);

/// Masks a seed center drawn uniformly plus its round(ratio*N)-1 nearest
/// centers.
MaskPartition block_mask(std::span<const Vec3> centers, double ratio,
                         std::uint64_t seed);
MaskPartition block_mask_from(std::span<const Vec3> centers, double ratio,
                              std::size_t seed_center);

/// Patch-wise split of a flat N*K array, preserving patch order inside
/// each group. The same partition applied to points, normals and centers
/// yields index-consistent triples.
struct PatchSplit {
  std::vector<std::size_t> visible_ids;
  std::vector<std::size_t> masked_ids;
  std::vector<Vec3> visible;  // V*K
  std::vector<Vec3> masked;   // mN*K
};

PatchSplit split_by_mask(std::span<const Vec3> patches, std::size_t patch_size,
                         const MaskPartition& partition);

/// Rows of a flat array of `row_size`-sized rows selected by `ids`.
std::vector<Vec3> select_patches(std::span<const Vec3> values, std::size_t row_size,
                                 std::span<const std::size_t> ids);

}  // namespace masksurf
