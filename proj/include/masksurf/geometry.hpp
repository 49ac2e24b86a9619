#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "masksurf/common.hpp"

namespace masksurf {

/// M x 3 coordinates, M >= 1, all finite.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  /// Throws DataError on an empty cloud or a non-finite coordinate.
  void validate() const;
};

/// Per-point unit normals. Orientation carries no meaning.
struct NormalCloud {
  std::vector<Vec3> normals;

  std::size_t size() const { return normals.size(); }
};

/// Positions paired row-for-row with normals.
struct SurfelCloud {
  PointCloud positions;
  NormalCloud normals;

  std::size_t size() const { return positions.size(); }
  void validate() const;
};

/// N patches of K points each around FPS centers.
struct PatchGrouping {
  std::size_t patch_size = 0;   // K
  std::size_t source_size = 0;  // M of the grouped cloud
  std::vector<Vec3> centers;           // N
  std::vector<std::size_t> indices;    // N*K, row-major, into the source
  std::vector<Vec3> patches;           // N*K, source point minus its center

  std::size_t patch_count() const { return centers.size(); }
  std::size_t index(std::size_t patch, std::size_t j) const {
    return indices[patch * patch_size + j];
  }
  const Vec3& patch_point(std::size_t patch, std::size_t j) const {
    return patches[patch * patch_size + j];
  }
};

struct FpsResult {
  std::vector<Vec3> centers;
  std::vector<std::size_t> indices;
};

/// Greedy farthest point sampling under squared Euclidean distance. The first
/// index is drawn uniformly from the cloud with `seed`; ties in the argmax go
/// to the lowest index. Returns n distinct indices.
FpsResult farthest_point_sample(const PointCloud& cloud, std::size_t n,
                                std::uint64_t seed);
/// Same with an explicit first index.
FpsResult farthest_point_sample_from(const PointCloud& cloud, std::size_t n,
                                     std::size_t first);

/// For each center, the k nearest source points (squared distance, ties by
/// ascending index), ordered nearest first, plus center-normalized coordinates.
PatchGrouping knn_group(const PointCloud& cloud, std::span<const Vec3> centers,
                        std::size_t k);

/// Gathers per-point values (normals) with a grouping's indices, without any
/// center subtraction. Result is N*K rows.
std::vector<Vec3> group_by_indices(std::span<const Vec3> values,
                                   const PatchGrouping& grouping);

struct NormalEstimate {
  NormalCloud normals;
  // Neighborhoods whose covariance had rank < 2; those rows hold (0,0,1).
  std::size_t degenerate_count = 0;
};

/// PCA tangent-plane normals from the k nearest neighbors (self included).
NormalEstimate estimate_normals(const PointCloud& cloud, std::size_t k);

/// Indices of the k nearest cloud points to `query`, nearest first, ties by
/// index. Shared by KNN grouping, normal estimation and block masking.
std::vector<std::size_t> nearest_indices(std::span<const Vec3> points,
                                         const Vec3& query, std::size_t k);

}  // namespace masksurf
