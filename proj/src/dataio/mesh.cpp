#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "masksurf/dataio.hpp"
#include "text_util.hpp"

namespace masksurf {

void TriangleMesh::validate() const {
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    if (!vertices[v].allFinite()) {
      throw DataError("mesh vertex " + std::to_string(v) + " is not finite");
    }
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (auto idx : faces[f]) {
      if (idx >= vertices.size()) {
        throw DataError("mesh face " + std::to_string(f) + " references vertex " +
                        std::to_string(idx) + " of " + std::to_string(vertices.size()));
      }
    }
  }
}

MeshSample sample_mesh(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed) {
  mesh.validate();
  std::vector<double> areas(mesh.faces.size(), 0.0);
  std::vector<Vec3> face_normals(mesh.faces.size(), Vec3::Zero());
  MeshSample out;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    const Vec3 c = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                       .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    const double twice = c.norm();
    if (!(twice > 0.0)) {
      ++out.skipped_faces;
      continue;
    }
    areas[f] = 0.5 * twice;
    face_normals[f] = c / twice;
  }
  if (out.skipped_faces == mesh.faces.size()) {
    throw DataError("mesh has no face with nonzero area");
  }
  if (out.skipped_faces > 0) {
    std::cerr << "warning: skipped " << out.skipped_faces << " zero-area face(s)\n";
  }

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.cloud.positions.points.reserve(m);
  out.cloud.normals.normals.reserve(m);
  out.face_ids.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t f = pick(rng);
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const auto& t = mesh.faces[f];
    const Vec3 p = (1.0 - r1) * mesh.vertices[t[0]] + r1 * (1.0 - r2) * mesh.vertices[t[1]] +
                   r1 * r2 * mesh.vertices[t[2]];
    out.cloud.positions.points.push_back(p);
    out.cloud.normals.normals.push_back(face_normals[f]);
    out.face_ids.push_back(f);
  }
  return out;
}

SurfelCloud sample_mesh_surfels(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed) {
  return sample_mesh(mesh, m, seed).cloud;
}

namespace {

// Reads the next line that is neither blank nor a comment. Returns false at EOF.
bool next_content_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

Vec3 parse_vertex(std::istringstream& ss, std::size_t line_no) {
  Vec3 v;
  if (!detail::read_double(ss, v.x()) || !detail::read_double(ss, v.y()) ||
      !detail::read_double(ss, v.z())) {
    throw ParseError("malformed vertex", line_no);
  }
  if (!v.allFinite()) throw DataError("non-finite vertex (line " + std::to_string(line_no) + ")");
  return v;
}

void add_fan(TriangleMesh& mesh, const std::vector<std::size_t>& poly) {
  for (std::size_t j = 1; j + 1 < poly.size(); ++j) {
    mesh.faces.push_back({poly[0], poly[j], poly[j + 1]});
  }
}

}  // namespace

TriangleMesh read_off(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_content_line(in, line, line_no)) throw ParseError("empty OFF file", 1);
  std::istringstream header(line);
  std::string magic;
  header >> magic;
  if (magic != "OFF") throw ParseError("missing OFF header", line_no);
  std::size_t nv = 0, nf = 0;
  // Counts may follow the magic on the same line.
  if (!(header >> nv >> nf)) {
    if (!next_content_line(in, line, line_no)) throw ParseError("missing OFF counts", line_no);
    std::istringstream counts(line);
    if (!(counts >> nv >> nf)) throw ParseError("malformed OFF counts", line_no);
  }
  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    if (!next_content_line(in, line, line_no)) throw ParseError("truncated vertex list", line_no);
    std::istringstream ss(line);
    mesh.vertices.push_back(parse_vertex(ss, line_no));
  }
  for (std::size_t f = 0; f < nf; ++f) {
    if (!next_content_line(in, line, line_no)) throw ParseError("truncated face list", line_no);
    std::istringstream ss(line);
    std::size_t n = 0;
    if (!(ss >> n) || n < 3) throw ParseError("face " + std::to_string(f) + " malformed", line_no);
    std::vector<std::size_t> poly(n);
    for (auto& idx : poly) {
      long long raw = 0;
      if (!(ss >> raw)) throw ParseError("face " + std::to_string(f) + " malformed", line_no);
      if (raw < 0 || static_cast<std::size_t>(raw) >= nv) {
        throw ParseError("face " + std::to_string(f) + " index " + std::to_string(raw) +
                             " out of range [0, " + std::to_string(nv) + ")",
                         line_no);
      }
      idx = static_cast<std::size_t>(raw);
    }
    add_fan(mesh, poly);
  }
  return mesh;
}

TriangleMesh read_obj(std::istream& in) {
  TriangleMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  std::size_t face_no = 0;
  while (next_content_line(in, line, line_no)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      mesh.vertices.push_back(parse_vertex(ss, line_no));
    } else if (tag == "f") {
      std::vector<std::size_t> poly;
      std::string tok;
      while (ss >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        long long raw = 0;
        try {
          std::size_t used = 0;
          raw = std::stoll(head, &used);
          if (used != head.size()) throw std::invalid_argument(head);
        } catch (const std::exception&) {
          throw ParseError("face " + std::to_string(face_no) + " has bad index '" + tok + "'",
                           line_no);
        }
        const auto nv = static_cast<long long>(mesh.vertices.size());
        const long long idx = raw > 0 ? raw - 1 : nv + raw;
        if (raw == 0 || idx < 0 || idx >= nv) {
          throw ParseError("face " + std::to_string(face_no) + " index " + std::to_string(raw) +
                               " out of range for " + std::to_string(nv) + " vertices",
                           line_no);
        }
        poly.push_back(static_cast<std::size_t>(idx));
      }
      if (poly.size() < 3) {
        throw ParseError("face " + std::to_string(face_no) + " has fewer than 3 vertices",
                         line_no);
      }
      add_fan(mesh, poly);
      ++face_no;
    }
    // vn, vt, o, g, s, usemtl, mtllib: ignored
  }
  if (mesh.faces.empty()) throw ParseError("OBJ file has no faces", line_no);
  return mesh;
}

TriangleMesh read_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file '" + path + "'");
  std::string ext = path.substr(path.find_last_of('.') + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == "off") return read_off(in);
  if (ext == "obj") return read_obj(in);
  throw InvalidArgument("unsupported mesh extension '." + ext + "' (off|obj)");
}

}  // namespace masksurf
