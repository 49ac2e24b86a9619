#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "masksurf/dataio.hpp"
#include "text_util.hpp"

namespace masksurf {

namespace {

std::string extension(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext;
}

struct RawPoints {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  bool has_normals = false;
  std::string missing;  // names of absent normal properties
};

void check_finite(const Vec3& v, std::size_t line_no) {
  if (!v.allFinite()) {
    throw DataError("non-finite coordinate (line " + std::to_string(line_no) + ")");
  }
}

RawPoints read_columns(std::istream& in, std::size_t columns) {
  RawPoints raw;
  raw.has_normals = columns == 6;
  if (!raw.has_normals) raw.missing = "nx, ny, nz";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      if (!detail::parse_double(tok, v)) throw ParseError("bad number '" + tok + "'", line_no);
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (vals.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " values, got " +
                           std::to_string(vals.size()),
                       line_no);
    }
    const Vec3 p(vals[0], vals[1], vals[2]);
    check_finite(p, line_no);
    raw.positions.push_back(p);
    if (raw.has_normals) {
      const Vec3 n(vals[3], vals[4], vals[5]);
      check_finite(n, line_no);
      raw.normals.push_back(n);
    }
  }
  if (raw.positions.empty()) throw ParseError("no points in file", std::max<std::size_t>(line_no, 1));
  return raw;
}

RawPoints read_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(std::string("unexpected end of file in ") + what, line_no + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next("header");
  if (line != "ply") throw ParseError("missing 'ply' magic", line_no);

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool has_list = false;
  };
  std::vector<Element> elements;
  bool ascii = false;
  for (;;) {
    next("header");
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key.empty() || key == "comment" || key == "obj_info") continue;
    if (key == "end_header") break;
    if (key == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") throw ParseError("only ASCII PLY is supported, got '" + fmt + "'", line_no);
      ascii = true;
    } else if (key == "element") {
      Element e;
      if (!(ss >> e.name >> e.count)) throw ParseError("malformed element line", line_no);
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) throw ParseError("property before any element", line_no);
      std::string type, name;
      ss >> type;
      if (type == "list") {
        elements.back().has_list = true;
        std::string count_type, item_type;
        ss >> count_type >> item_type;
      }
      if (!(ss >> name)) throw ParseError("malformed property line", line_no);
      elements.back().properties.push_back(name);
    } else {
      throw ParseError("unknown header keyword '" + key + "'", line_no);
    }
  }
  if (!ascii) throw ParseError("PLY header has no format line", line_no);

  RawPoints raw;
  bool found = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) next("element data");
      continue;
    }
    found = true;
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < e.properties.size(); ++i) col[e.properties[i]] = i;
    for (const char* c : {"x", "y", "z"}) {
      if (!col.count(c)) throw DataError(std::string("PLY vertex element lacks property ") + c);
    }
    std::string missing;
    for (const char* c : {"nx", "ny", "nz"}) {
      if (!col.count(c)) missing += (missing.empty() ? "" : ", ") + std::string(c);
    }
    raw.has_normals = missing.empty();
    raw.missing = missing;
    for (std::size_t i = 0; i < e.count; ++i) {
      next("vertex data");
      std::istringstream ss(line);
      std::vector<double> vals;
      std::string tok;
      while (ss >> tok) {
        double v = 0.0;
        if (!detail::parse_double(tok, v)) throw ParseError("bad number '" + tok + "'", line_no);
        vals.push_back(v);
      }
      if (vals.size() < e.properties.size()) {
        throw ParseError("vertex has " + std::to_string(vals.size()) + " values, expected " +
                             std::to_string(e.properties.size()),
                         line_no);
      }
      const Vec3 p(vals[col["x"]], vals[col["y"]], vals[col["z"]]);
      check_finite(p, line_no);
      raw.positions.push_back(p);
      if (raw.has_normals) {
        const Vec3 n(vals[col["nx"]], vals[col["ny"]], vals[col["nz"]]);
        check_finite(n, line_no);
        raw.normals.push_back(n);
      }
    }
    break;
  }
  if (!found) throw DataError("PLY file has no vertex element");
  if (raw.positions.empty()) throw ParseError("PLY vertex element is empty", line_no);
  return raw;
}

RawPoints read_any(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open point file '" + path + "'");
  const std::string ext = extension(path);
  if (ext == "xyz") return read_columns(in, 3);
  if (ext == "xyzn") return read_columns(in, 6);
  if (ext == "ply") return read_ply(in);
  throw InvalidArgument("unsupported point file extension '." + ext + "' (xyz|xyzn|ply)");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

void write_rows(std::ostream& out, const std::vector<Vec3>& p, const std::vector<Vec3>* n) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    out << p[i].x() << ' ' << p[i].y() << ' ' << p[i].z();
    if (n) out << ' ' << (*n)[i].x() << ' ' << (*n)[i].y() << ' ' << (*n)[i].z();
    out << '\n';
  }
}

}  // namespace

PointCloud read_point_file(const std::string& path) {
  PointCloud c;
  c.points = read_any(path).positions;
  return c;
}

SurfelCloud read_surfel_file(const std::string& path) {
  RawPoints raw = read_any(path);
  if (!raw.has_normals) {
    throw DataError("'" + path + "' has no normals (missing " + raw.missing + ")");
  }
  SurfelCloud c;
  c.positions.points = std::move(raw.positions);
  c.normals.normals = std::move(raw.normals);
  return c;
}

void write_point_file(const PointCloud& cloud, const std::string& path) {
  const std::string ext = extension(path);
  if (ext == "xyzn") throw InvalidArgument("'.xyzn' needs normals; use write_surfel_file");
  if (ext == "ply") {
    PlyVertexData d;
    d.positions = cloud.points;
    write_ply(d, path);
    return;
  }
  if (ext != "xyz") throw InvalidArgument("unsupported point file extension '." + ext + "'");
  auto out = open_out(path);
  write_rows(out, cloud.points, nullptr);
}

void write_surfel_file(const SurfelCloud& cloud, const std::string& path) {
  cloud.validate();
  const std::string ext = extension(path);
  if (ext == "ply") {
    PlyVertexData d;
    d.positions = cloud.positions.points;
    d.normals = cloud.normals.normals;
    write_ply(d, path);
    return;
  }
  if (ext != "xyz" && ext != "xyzn") {
    throw InvalidArgument("unsupported point file extension '." + ext + "'");
  }
  auto out = open_out(path);
  write_rows(out, cloud.positions.points, ext == "xyzn" ? &cloud.normals.normals : nullptr);
}

void write_ply(const PlyVertexData& d, const std::string& path) {
  const std::size_t n = d.positions.size();
  if (!d.normals.empty() && d.normals.size() != n) {
    throw InvalidArgument("write_ply: normal count differs from position count");
  }
  if (!d.colors.empty() && d.colors.size() != n) {
    throw InvalidArgument("write_ply: color count differs from position count");
  }
  for (const auto& s : d.scalars) {
    if (s.values.size() != n) throw InvalidArgument("write_ply: scalar '" + s.name + "' size");
  }
  auto out = open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << n << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  if (!d.normals.empty()) out << "property double nx\nproperty double ny\nproperty double nz\n";
  for (const auto& s : d.scalars) out << "property double " << s.name << '\n';
  if (!d.colors.empty()) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = d.positions[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (!d.normals.empty()) {
      const Vec3& q = d.normals[i];
      out << ' ' << q.x() << ' ' << q.y() << ' ' << q.z();
    }
    for (const auto& s : d.scalars) out << ' ' << s.values[i];
    if (!d.colors.empty()) {
      out << ' ' << int(d.colors[i][0]) << ' ' << int(d.colors[i][1]) << ' ' << int(d.colors[i][2]);
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace masksurf
