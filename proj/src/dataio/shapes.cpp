#include <cmath>
#include <numbers>
#include <random>

#include "masksurf/dataio.hpp"

namespace masksurf {

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "box") return ShapeKind::box;
  if (name == "cylinder") return ShapeKind::cylinder;
  if (name == "torus") return ShapeKind::torus;
  if (name == "cone") return ShapeKind::cone;
  throw InvalidArgument("unknown shape kind '" + name + "' (sphere|box|cylinder|torus|cone)");
}

const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cone: return "cone";
  }
  return "?";
}

void ShapeSpec::validate() const {
  std::size_t want = 0;
  switch (kind) {
    case ShapeKind::sphere: want = 1; break;
    case ShapeKind::box: want = 3; break;
    case ShapeKind::cylinder:
    case ShapeKind::torus:
    case ShapeKind::cone: want = 2; break;
  }
  if (params.size() != want) {
    throw InvalidArgument(std::string(to_string(kind)) + " needs " + std::to_string(want) +
                          " parameters, got " + std::to_string(params.size()));
  }
  for (double p : params) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw InvalidArgument(std::string(to_string(kind)) + " dimensions must be positive");
    }
  }
  if (kind == ShapeKind::torus && !(params[1] < params[0])) {
    throw InvalidArgument("torus tube radius must be below the ring radius");
  }
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Emitter {
  SurfelCloud& cloud;
  Vec3 center;
  double inv_radius;

  void operator()(const Vec3& p, const Vec3& n) const {
    cloud.positions.points.push_back((p - center) * inv_radius);
    cloud.normals.normals.push_back(n);
  }
};

}  // namespace

SurfelCloud synth_shape(const ShapeSpec& spec, std::size_t m, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& q = spec.params;

  SurfelCloud cloud;
  cloud.positions.points.reserve(m);
  cloud.normals.normals.reserve(m);
  Emitter emit{cloud, Vec3::Zero(), 1.0};

  switch (spec.kind) {
    case ShapeKind::sphere: {
      emit.inv_radius = 1.0 / q[0];
      for (std::size_t i = 0; i < m; ++i) {
        Vec3 d;
        do {
          d = Vec3(gauss(rng), gauss(rng), gauss(rng));
        } while (d.norm() < 1e-12);
        d.normalize();
        emit(q[0] * d, d);
      }
      break;
    }
    case ShapeKind::box: {
      const Vec3 half(q[0] / 2, q[1] / 2, q[2] / 2);
      emit.inv_radius = 1.0 / half.norm();
      // Faces come in +/- pairs normal to axis a; area = product of the other two sides.
      const double ax = q[1] * q[2], ay = q[0] * q[2], az = q[0] * q[1];
      std::discrete_distribution<int> face({ax, ax, ay, ay, az, az});
      for (std::size_t i = 0; i < m; ++i) {
        const int f = face(rng);
        const int axis = f / 2;
        const double sign = (f % 2 == 0) ? 1.0 : -1.0;
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = (2.0 * unit(rng) - 1.0) * half[a];
        p[axis] = sign * half[axis];
        Vec3 n = Vec3::Zero();
        n[axis] = sign;
        emit(p, n);
      }
      break;
    }
    case ShapeKind::cylinder: {
      const double r = q[0], h = q[1];
      emit.inv_radius = 1.0 / std::sqrt(r * r + h * h / 4);
      const double side = 2 * kPi * r * h, cap = kPi * r * r;
      std::discrete_distribution<int> part({side, cap, cap});
      for (std::size_t i = 0; i < m; ++i) {
        const int s = part(rng);
        const double phi = 2 * kPi * unit(rng);
        if (s == 0) {
          const double z = (unit(rng) - 0.5) * h;
          emit(Vec3(r * std::cos(phi), r * std::sin(phi), z),
               Vec3(std::cos(phi), std::sin(phi), 0.0));
        } else {
          const double rho = r * std::sqrt(unit(rng));
          const double sign = s == 1 ? 1.0 : -1.0;
          emit(Vec3(rho * std::cos(phi), rho * std::sin(phi), sign * h / 2),
               Vec3(0.0, 0.0, sign));
        }
      }
      break;
    }
    case ShapeKind::torus: {
      const double big = q[0], r = q[1];
      emit.inv_radius = 1.0 / (big + r);
      for (std::size_t i = 0; i < m; ++i) {
        // Area element is proportional to (R + r cos theta); reject to match it.
        double theta = 0.0;
        do {
          theta = 2 * kPi * unit(rng);
        } while (unit(rng) * (big + r) > big + r * std::cos(theta));
        const double phi = 2 * kPi * unit(rng);
        const double ring = big + r * std::cos(theta);
        emit(Vec3(ring * std::cos(phi), ring * std::sin(phi), r * std::sin(theta)),
             Vec3(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi),
                  std::sin(theta)));
      }
      break;
    }
    case ShapeKind::cone: {
      const double r = q[0], h = q[1];
      const double slant = std::sqrt(r * r + h * h);
      emit.inv_radius = 1.0 / std::sqrt(r * r + h * h / 4);
      std::discrete_distribution<int> part({kPi * r * slant, kPi * r * r});
      for (std::size_t i = 0; i < m; ++i) {
        const double phi = 2 * kPi * unit(rng);
        const double t = std::sqrt(unit(rng));  // fraction of the way from apex
        if (part(rng) == 0) {
          const double rho = r * t;
          emit(Vec3(rho * std::cos(phi), rho * std::sin(phi), h / 2 - t * h),
               Vec3(h * std::cos(phi), h * std::sin(phi), r) / slant);
        } else {
          const double rho = r * t;
          emit(Vec3(rho * std::cos(phi), rho * std::sin(phi), -h / 2), Vec3(0.0, 0.0, -1.0));
        }
      }
      break;
    }
  }
  return cloud;
}

ShapeSpec random_shape_spec(ShapeKind kind, std::size_t label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  ShapeSpec s;
  s.kind = kind;
  s.label = label;
  switch (kind) {
    case ShapeKind::sphere: s.params = {1.0}; break;
    case ShapeKind::box: s.params = {u(0.5, 1.5), u(0.5, 1.5), u(0.5, 1.5)}; break;
    case ShapeKind::cylinder: s.params = {u(0.3, 0.8), u(0.8, 2.0)}; break;
    case ShapeKind::torus: s.params = {1.0, u(0.2, 0.45)}; break;
    case ShapeKind::cone: s.params = {u(0.4, 1.0), u(0.8, 2.0)}; break;
  }
  return s;
}

void AugmentConfig::validate() const {
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) {
    throw InvalidArgument("augment scale range must satisfy 0 < lo <= hi");
  }
  if (!(translate >= 0.0)) throw InvalidArgument("augment translate must be >= 0");
}

AugmentDraw draw_augment(const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  AugmentDraw d;
  d.scale = cfg.scale_lo == cfg.scale_hi
                ? cfg.scale_lo
                : std::uniform_real_distribution<double>(cfg.scale_lo, cfg.scale_hi)(rng);
  if (cfg.translate > 0.0) {
    std::uniform_real_distribution<double> t(-cfg.translate, cfg.translate);
    for (int a = 0; a < 3; ++a) d.translation[a] = t(rng);
  }
  return d;
}

SurfelCloud apply_augment(const SurfelCloud& cloud, const AugmentDraw& draw) {
  SurfelCloud out = cloud;
  for (auto& p : out.positions.points) p = draw.scale * p + draw.translation;
  return out;
}

SurfelCloud augment(const SurfelCloud& cloud, const AugmentConfig& cfg, std::uint64_t seed) {
  return apply_augment(cloud, draw_augment(cfg, seed));
}

}  // namespace masksurf
