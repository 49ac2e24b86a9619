#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "masksurf/geometry.hpp"

namespace masksurf {

// ---------------------------------------------------------------- meshes

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;

  /// Throws DataError on an out-of-range index or non-finite vertex.
  void validate() const;
};

/// Surfels plus the face each one was drawn from.
struct MeshSample {
  SurfelCloud cloud;
  std::vector<std::size_t> face_ids;
  std::size_t skipped_faces = 0;  // zero-area faces
};

/// Area-weighted face choice, uniform barycentric point, unit face normal.
/// Zero-area faces are skipped with a warning on stderr; a mesh with no
/// usable face is a DataError.
MeshSample sample_mesh(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed);
SurfelCloud sample_mesh_surfels(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed);

/// OFF or OBJ by extension. Polygons are fan-triangulated, OBJ indices may be
/// 1-based or negative, vn/vt records are ignored.
TriangleMesh read_mesh_file(const std::string& path);
TriangleMesh read_off(std::istream& in);
TriangleMesh read_obj(std::istream& in);

// ---------------------------------------------------------------- shapes

enum class ShapeKind { sphere, box, cylinder, torus, cone };

ShapeKind parse_shape_kind(const std::string& name);
const char* to_string(ShapeKind k);

/// params by kind: sphere {r}; box {x, y, z}; cylinder {r, h};
/// torus {R, r} with R > r; cone {r, h}.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  std::vector<double> params;
  std::size_t label = 0;

  void validate() const;
};

/// Uniform surface sample with analytic normals, centered on the shape's
/// bounding-box center and scaled so the farthest surface point has norm 1.
SurfelCloud synth_shape(const ShapeSpec& spec, std::size_t m, std::uint64_t seed);

// ---------------------------------------------------------------- augmentation

struct AugmentConfig {
  double scale_lo = 0.8;
  double scale_hi = 1.25;
  double translate = 0.1;  // per-axis offset drawn from [-translate, translate]

  void validate() const;
};

struct AugmentDraw {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
};

AugmentDraw draw_augment(const AugmentConfig& cfg, std::uint64_t seed);
/// p -> scale * p + translation; normals untouched.
SurfelCloud apply_augment(const SurfelCloud& cloud, const AugmentDraw& draw);
SurfelCloud augment(const SurfelCloud& cloud, const AugmentConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------- point files

/// .xyz: 3 numbers per line. .xyzn: 6 numbers per line. .ply: ASCII PLY with
/// x, y, z and optional nx, ny, nz vertex properties. '#' starts a comment in
/// the text formats.
PointCloud read_point_file(const std::string& path);
/// As read_point_file but normals are required (DataError otherwise).
SurfelCloud read_surfel_file(const std::string& path);

/// Format follows the extension; .xyz drops normals.
void write_point_file(const PointCloud& cloud, const std::string& path);
void write_surfel_file(const SurfelCloud& cloud, const std::string& path);

struct PlyScalar {
  std::string name;
  std::vector<double> values;
};

/// ASCII PLY with optional normals, extra per-vertex scalars and uchar colors.
struct PlyVertexData {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;  // empty or one per position
  std::vector<PlyScalar> scalars;
  std::vector<std::array<std::uint8_t, 3>> colors;  // empty or one per position
};

void write_ply(const PlyVertexData& data, const std::string& path);

// ---------------------------------------------------------------- datasets

enum class NormalSource { ground_truth, estimated };

NormalSource parse_normal_source(const std::string& name);
const char* to_string(NormalSource s);

struct DatasetManifest {
  // Shape class names (sphere, box, cylinder, torus, cone). Ignored when
  // mesh_dir is set; then every subdirectory of mesh_dir holding .off/.obj
  // files is a class, in sorted order.
  std::vector<std::string> classes = {"sphere", "box", "cylinder", "torus", "cone"};
  std::size_t samples_per_class = 200;
  std::size_t points = 1024;
  double split = 0.8;  // train fraction per class
  std::uint64_t seed = 0;
  NormalSource normal_source = NormalSource::ground_truth;
  std::size_t normal_k = 16;
  std::string mesh_dir;

  void validate() const;
};

struct Sample {
  SurfelCloud cloud;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> train;
  std::vector<Sample> test;

  std::size_t num_classes() const { return class_names.size(); }
};

/// Pure function of the manifest. Each class contributes
/// round(split * samples_per_class) training samples (at least one sample on
/// each side when samples_per_class >= 2).
Dataset build_dataset(const DatasetManifest& manifest);

/// Per-class draw of shape dimensions for generated datasets.
ShapeSpec random_shape_spec(ShapeKind kind, std::size_t label, std::uint64_t seed);

}  // namespace masksurf
