#include "masksurf/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "masksurf/geometry.hpp"

namespace masksurf {

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "random") return MaskStrategy::random;
  if (name == "block") return MaskStrategy::block;
  throw InvalidArgument("unknown mask strategy '" + name + "' (random|block)");
}

const char* to_string(MaskStrategy s) {
  return s == MaskStrategy::random ? "random" : "block";
}

std::size_t MaskPartition::masked_count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), 1));
}

std::vector<std::size_t> MaskPartition::masked_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (masked[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> MaskPartition::visible_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (!masked[i]) out.push_back(i);
  return out;
}

std::size_t masked_count_for(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw InvalidArgument("mask ratio " + std::to_string(ratio) + " not in (0, 1)");
  }
  const auto count = static_cast<std::size_t>(std::floor(ratio * double(n) + 0.5));
  if (count < 1 || count + 1 > n) {
    throw InvalidArgument("mask ratio " + std::to_string(ratio) + " over " +
                          std::to_string(n) + " patches masks " +
                          std::to_string(count) + "; need 1..n-1");
  }
  return count;
}

MaskPartition random_mask(std::size_t n, double ratio, std::uint64_t seed) {
  const std::size_t count = masked_count_for(n, ratio);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  MaskPartition p;
  p.ratio = ratio;
  p.strategy = MaskStrategy::random;
  p.masked.assign(n, 0);
  for (std::size_t i = 0; i < count; ++i) p.masked[order[i]] = 1;
  return p;
}

MaskPartition block_mask_from(std::span<const Vec3> centers, double ratio,
                              std::size_t seed_center) {
  const std::size_t n = centers.size();
  const std::size_t count = masked_count_for(n, ratio);
  if (seed_center >= n) throw InvalidArgument("block_mask: seed center out of range");
  MaskPartition p;
  p.ratio = ratio;
  p.strategy = MaskStrategy::block;
  p.masked.assign(n, 0);
  p.masked[seed_center] = 1;
  std::size_t taken = 1;
  // Nearest-first order; the seed itself is skipped if it ties with others.
  for (auto idx : nearest_indices(centers, centers[seed_center], n)) {
    if (taken == count) break;
    if (idx == seed_center) continue;
    p.masked[idx] = 1;
    ++taken;
  }
  return p;
}

MaskPartition block_mask(std::span<const Vec3> centers, double ratio,
                         std::uint64_t seed) {
  if (centers.empty()) throw InvalidArgument("block_mask: no centers");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
  return block_mask_from(centers, ratio, pick(rng));
}

std::vector<Vec3> select_patches(std::span<const Vec3> values, std::size_t row_size,
                                 std::span<const std::size_t> ids) {
  std::vector<Vec3> out;
  out.reserve(ids.size() * row_size);
  for (auto id : ids) {
    if ((id + 1) * row_size > values.size()) {
      throw InvalidArgument("select_patches: patch " + std::to_string(id) + " out of range");
    }
    out.insert(out.end(), values.begin() + static_cast<std::ptrdiff_t>(id * row_size),
               values.begin() + static_cast<std::ptrdiff_t>((id + 1) * row_size));
  }
  return out;
}

PatchSplit split_by_mask(std::span<const Vec3> patches, std::size_t patch_size,
                         const MaskPartition& partition) {
  if (patch_size == 0 || patches.size() != partition.size() * patch_size) {
    throw InvalidArgument("split_by_mask: " + std::to_string(patches.size()) +
                          " rows do not form " + std::to_string(partition.size()) +
                          " patches of " + std::to_string(patch_size));
  }
  PatchSplit s;
  s.visible_ids = partition.visible_indices();
  s.masked_ids = partition.masked_indices();
  s.visible = select_patches(patches, patch_size, s.visible_ids);
  s.masked = select_patches(patches, patch_size, s.masked_ids);
  return s;
}

}  // namespace masksurf
