#include <algorithm>
#include <cmath>
#include <filesystem>

#include "masksurf/dataio.hpp"
#include "masksurf/rng.hpp"

namespace masksurf {

namespace fs = std::filesystem;

NormalSource parse_normal_source(const std::string& name) {
  if (name == "ground_truth") return NormalSource::ground_truth;
  if (name == "estimated") return NormalSource::estimated;
  throw InvalidArgument("unknown normal source '" + name + "' (ground_truth|estimated)");
}

const char* to_string(NormalSource s) {
  return s == NormalSource::ground_truth ? "ground_truth" : "estimated";
}

void DatasetManifest::validate() const {
  if (mesh_dir.empty() && classes.empty()) throw DataError("dataset has no classes");
  if (samples_per_class == 0) throw DataError("empty class: samples_per_class is 0");
  if (points == 0) throw InvalidArgument("data.points must be positive");
  if (!(split > 0.0 && split <= 1.0)) throw InvalidArgument("data.split must be in (0, 1]");
  if (normal_source == NormalSource::estimated && (normal_k < 3 || normal_k > points)) {
    throw InvalidArgument("normal estimation needs 3 <= k <= points");
  }
}

namespace {

std::vector<std::string> mesh_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".off" || ext == ".obj") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t train_count(std::size_t n, double split) {
  auto t = static_cast<std::size_t>(std::floor(split * double(n) + 0.5));
  if (n >= 2 && split < 1.0) t = std::clamp<std::size_t>(t, 1, n - 1);
  return std::min(t, n);
}

}  // namespace

Dataset build_dataset(const DatasetManifest& manifest) {
  manifest.validate();
  Dataset ds;

  std::vector<std::vector<SurfelCloud>> per_class;
  if (!manifest.mesh_dir.empty()) {
    if (!fs::is_directory(manifest.mesh_dir)) {
      throw DataError("mesh_dir '" + manifest.mesh_dir + "' is not a directory");
    }
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(manifest.mesh_dir)) {
      if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      const auto files = mesh_files(d);
      if (files.empty()) throw DataError("empty class: no .off/.obj files in " + d.string());
      const std::size_t label = ds.class_names.size();
      ds.class_names.push_back(d.filename().string());
      std::vector<TriangleMesh> meshes;
      for (const auto& f : files) meshes.push_back(read_mesh_file(f));
      std::vector<SurfelCloud> clouds;
      for (std::size_t i = 0; i < manifest.samples_per_class; ++i) {
        const auto seed = derive_seed(manifest.seed, {label, i});
        SurfelCloud c = sample_mesh_surfels(meshes[i % meshes.size()], manifest.points, seed);
        // Same normalization as generated shapes: centroid to origin, max radius 1.
        Vec3 mean = Vec3::Zero();
        for (const auto& p : c.positions.points) mean += p;
        mean /= double(c.size());
        double r = 0.0;
        for (auto& p : c.positions.points) {
          p -= mean;
          r = std::max(r, p.norm());
        }
        if (r > 0.0) {
          for (auto& p : c.positions.points) p /= r;
        }
        clouds.push_back(std::move(c));
      }
      per_class.push_back(std::move(clouds));
    }
    if (ds.class_names.empty()) throw DataError("mesh_dir has no class subdirectories");
  } else {
    for (std::size_t label = 0; label < manifest.classes.size(); ++label) {
      const ShapeKind kind = parse_shape_kind(manifest.classes[label]);
      ds.class_names.push_back(manifest.classes[label]);
      std::vector<SurfelCloud> clouds;
      for (std::size_t i = 0; i < manifest.samples_per_class; ++i) {
        const auto seed = derive_seed(manifest.seed, {label, i});
        const ShapeSpec spec = random_shape_spec(kind, label, seed);
        clouds.push_back(synth_shape(spec, manifest.points, splitmix64(seed)));
      }
      per_class.push_back(std::move(clouds));
    }
  }

  const std::size_t n_train = train_count(manifest.samples_per_class, manifest.split);
  for (std::size_t label = 0; label < per_class.size(); ++label) {
    auto& clouds = per_class[label];
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      Sample s;
      s.label = label;
      s.cloud = std::move(clouds[i]);
      if (manifest.normal_source == NormalSource::estimated) {
        s.cloud.normals = estimate_normals(s.cloud.positions, manifest.normal_k).normals;
      }
      s.cloud.validate();
      (i < n_train ? ds.train : ds.test).push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace masksurf
