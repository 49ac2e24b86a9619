#pragma once

// Brute-force reference implementations used as test oracles. They share no
// code with the library: plain loops over std::array points.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using P3 = std::array<double, 3>;

inline double sq_dist(const P3& a, const P3& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double dot(const P3& a, const P3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline double norm(const P3& a) { return std::sqrt(dot(a, a)); }

/// Index of the nearest point in `set` to `q`, lowest index on ties.
inline std::size_t nearest(const std::vector<P3>& set, const P3& q) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = sq_dist(set[i], q);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

/// (1/K) sum_k min_k' |a_k - b_k'|^2 + (1/K) sum_k min_k' |b_k - a_k'|^2.
inline double chamfer(const std::vector<P3>& a, const std::vector<P3>& b) {
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& q : b) m = std::min(m, sq_dist(p, q));
    ab += m;
  }
  for (const auto& p : b) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& q : a) m = std::min(m, sq_dist(p, q));
    ba += m;
  }
  return ab / double(a.size()) + ba / double(b.size());
}

inline double normal_distance(const P3& n, const P3& m, bool oriented) {
  const double c = dot(n, m) / (std::max(norm(n), 1e-8) * std::max(norm(m), 1e-8));
  return 1.0 - (oriented ? c : std::abs(c));
}

/// Position-indexed normal distance for one patch.
inline double pind(const std::vector<P3>& p, const std::vector<P3>& n, const std::vector<P3>& ph,
                   const std::vector<P3>& nh, bool oriented) {
  double a = 0.0, b = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    a += normal_distance(n[k], nh[nearest(ph, p[k])], oriented);
  }
  for (std::size_t k = 0; k < ph.size(); ++k) {
    b += normal_distance(nh[k], n[nearest(p, ph[k])], oriented);
  }
  return a / double(p.size()) + b / double(ph.size());
}

/// True iff every pick after the first maximizes the minimum squared distance
/// to the picks before it over all points (lowest index among maximizers).
inline bool fps_is_greedy(const std::vector<P3>& pts, const std::vector<std::size_t>& picks) {
  for (std::size_t t = 1; t < picks.size(); ++t) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < t; ++s) m = std::min(m, sq_dist(pts[i], pts[picks[s]]));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    if (arg != picks[t]) return false;
  }
  return true;
}

/// k nearest indices by full sort on (squared distance, index).
inline std::vector<std::size_t> knn_scan(const std::vector<P3>& pts, const P3& c, std::size_t k) {
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return sq_dist(pts[a], c) < sq_dist(pts[b], c);
  });
  idx.resize(k);
  return idx;
}

inline std::vector<P3> random_points(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<P3> v(n);
  for (auto& p : v) p = {u(rng), u(rng), u(rng)};
  return v;
}

inline std::vector<P3> sphere_points(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<P3> v(n);
  for (auto& p : v) {
    P3 q{g(rng), g(rng), g(rng)};
    const double r = norm(q);
    p = {q[0] / r, q[1] / r, q[2] / r};
  }
  return v;
}

/// Row-major C = A(m x k) B(k x n).
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

}  // namespace oracle
