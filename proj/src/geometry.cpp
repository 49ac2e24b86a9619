#include "masksurf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>

namespace masksurf {

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

void PointCloud::validate() const {
  if (points.empty()) throw DataError("point cloud is empty");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!finite(points[i])) {
      throw DataError("point " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
}

void SurfelCloud::validate() const {
  positions.validate();
  if (normals.size() != positions.size()) {
    throw DataError("surfel cloud has " + std::to_string(positions.size()) +
                    " positions but " + std::to_string(normals.size()) + " normals");
  }
  for (std::size_t i = 0; i < normals.size(); ++i) {
    if (!finite(normals.normals[i])) {
      throw DataError("normal " + std::to_string(i) + " is not finite");
    }
  }
}

FpsResult farthest_point_sample_from(const PointCloud& cloud, std::size_t n,
                                     std::size_t first) {
  const std::size_t m = cloud.size();
  if (n < 1 || n > m) {
    throw InvalidArgument("farthest_point_sample: n=" + std::to_string(n) +
                          " must be in [1, " + std::to_string(m) + "]");
  }
  cloud.validate();
  if (first >= m) throw InvalidArgument("farthest_point_sample: first index out of range");

  FpsResult out;
  out.indices.reserve(n);
  std::vector<double> min_dist(m, std::numeric_limits<double>::infinity());
  std::vector<char> selected(m, 0);
  std::size_t last = first;
  for (std::size_t step = 0; step < n; ++step) {
    out.indices.push_back(last);
    selected[last] = 1;
    if (step + 1 == n) break;
    std::size_t best = m;
    double best_dist = -1.0;
    const Vec3& c = cloud.points[last];
    for (std::size_t i = 0; i < m; ++i) {
      const double d = (cloud.points[i] - c).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (!selected[i] && min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    last = best;
  }
  out.centers.reserve(n);
  for (auto i : out.indices) out.centers.push_back(cloud.points[i]);
  return out;
}

FpsResult farthest_point_sample(const PointCloud& cloud, std::size_t n,
                                std::uint64_t seed) {
  if (cloud.size() == 0) throw DataError("farthest_point_sample: empty cloud");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  return farthest_point_sample_from(cloud, n, pick(rng));
}

std::vector<std::size_t> nearest_indices(std::span<const Vec3> points,
                                         const Vec3& query, std::size_t k) {
  if (k > points.size()) {
    throw InvalidArgument("nearest_indices: k=" + std::to_string(k) +
                          " exceeds " + std::to_string(points.size()) + " points");
  }
  std::vector<std::pair<double, std::size_t>> d(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    d[i] = {(points[i] - query).squaredNorm(), i};
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = d[j].second;
  return out;
}

PatchGrouping knn_group(const PointCloud& cloud, std::span<const Vec3> centers,
                        std::size_t k) {
  if (k > cloud.size()) {
    throw InvalidArgument("knn_group: k=" + std::to_string(k) + " exceeds M=" +
                          std::to_string(cloud.size()));
  }
  if (k == 0) throw InvalidArgument("knn_group: k must be positive");
  for (const auto& c : centers) {
    if (!finite(c)) throw DataError("knn_group: non-finite center");
  }
  PatchGrouping g;
  g.patch_size = k;
  g.source_size = cloud.size();
  g.centers.assign(centers.begin(), centers.end());
  g.indices.reserve(centers.size() * k);
  g.patches.reserve(centers.size() * k);
  for (const auto& c : centers) {
    for (auto idx : nearest_indices(cloud.points, c, k)) {
      g.indices.push_back(idx);
      g.patches.push_back(cloud.points[idx] - c);
    }
  }
  return g;
}

std::vector<Vec3> group_by_indices(std::span<const Vec3> values,
                                   const PatchGrouping& grouping) {
  if (values.size() != grouping.source_size) {
    throw InvalidArgument("group_by_indices: " + std::to_string(values.size()) +
                          " values for a grouping over " +
                          std::to_string(grouping.source_size) + " points");
  }
  std::vector<Vec3> out;
  out.reserve(grouping.indices.size());
  for (auto idx : grouping.indices) out.push_back(values[idx]);
  return out;
}

NormalEstimate estimate_normals(const PointCloud& cloud, std::size_t k) {
  if (k < 3) throw InvalidArgument("estimate_normals: k must be at least 3");
  if (cloud.size() < k) {
    throw InvalidArgument("estimate_normals: cloud has fewer than k points");
  }
  cloud.validate();
  NormalEstimate est;
  est.normals.normals.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const auto nbrs = nearest_indices(cloud.points, p, k);
    Vec3 mean = Vec3::Zero();
    for (auto i : nbrs) mean += cloud.points[i];
    mean /= static_cast<double>(k);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto i : nbrs) {
      const Vec3 d = cloud.points[i] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    const Vec3 ev = solver.eigenvalues();  // ascending
    // Rank < 2: the second-largest spread is negligible against the largest.
    if (!(ev[2] > 0.0) || ev[1] <= 1e-10 * ev[2]) {
      est.normals.normals.emplace_back(0.0, 0.0, 1.0);
      ++est.degenerate_count;
      continue;
    }
    est.normals.normals.push_back(solver.eigenvectors().col(0).normalized());
  }
  return est;
}

}  // namespace masksurf
