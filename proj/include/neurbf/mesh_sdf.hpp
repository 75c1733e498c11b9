#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "neurbf/error.hpp"
#include "neurbf/geometry.hpp"
#include "neurbf/rng.hpp"

namespace neurbf {

struct Box3 {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};

  void expand(const Vec3& p) {
    for (int j = 0; j < 3; ++j) {
      lo[j] = std::min(lo[j], p[j]);
      hi[j] = std::max(hi[j], p[j]);
    }
  }
  void expand(const Box3& b) {
    expand(b.lo);
    expand(b.hi);
  }
  double diagonal() const { return std::sqrt(squared_distance<3>(lo, hi)); }

  /// Squared distance from p to the box (0 inside).
  double distance2(const Vec3& p) const {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double d = std::max({lo[j] - p[j], 0.0, p[j] - hi[j]});
      s += d * d;
    }
    return s;
  }
};

/// Uniform scale + offset mapping world coordinates into the unit training box.
struct BoxTransform {
  double scale = 1.0;
  Vec3 offset{0.0, 0.0, 0.0};

  Vec3 to_domain(const Vec3& x) const { return {x[0] * scale + offset[0], x[1] * scale + offset[1], x[2] * scale + offset[2]}; }
  Vec3 to_world(const Vec3& u) const {
    return {(u[0] - offset[0]) / scale, (u[1] - offset[1]) / scale, (u[2] - offset[2]) / scale};
  }

  /// Fits `bounds` into [margin, 1 - margin]^3, centered, preserving aspect ratio.
  static BoxTransform fit(const Box3& bounds, double margin = 0.05) {
    double extent = 0.0;
    for (int j = 0; j < 3; ++j) extent = std::max(extent, bounds.hi[j] - bounds.lo[j]);
    require(extent > 0.0 && std::isfinite(extent), ErrorKind::config, "cannot normalize a degenerate bounding box");
    BoxTransform t;
    t.scale = (1.0 - 2.0 * margin) / extent;
    for (int j = 0; j < 3; ++j) t.offset[j] = 0.5 - 0.5 * (bounds.lo[j] + bounds.hi[j]) * t.scale;
    return t;
  }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  Box3 bounds() const {
    Box3 b;
    for (const auto& v : vertices) b.expand(v);
    return b;
  }

  void validate() const {
    require(!triangles.empty(), ErrorKind::mesh, "mesh has no triangles");
    for (std::size_t t = 0; t < triangles.size(); ++t)
      for (auto i : triangles[t])
        require(i < vertices.size(), ErrorKind::mesh, "triangle " + std::to_string(t) + " has an invalid vertex index");
    for (const auto& v : vertices)
      for (double c : v) require(std::isfinite(c), ErrorKind::mesh, "mesh has a non-finite vertex");
  }

  /// Every undirected edge is shared by exactly two triangles.
  bool is_watertight() const {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
    for (const auto& t : triangles)
      for (int e = 0; e < 3; ++e) {
        std::uint32_t a = t[static_cast<std::size_t>(e)], b = t[static_cast<std::size_t>((e + 1) % 3)];
        if (a > b) std::swap(a, b);
        ++edges[{a, b}];
      }
    return std::all_of(edges.begin(), edges.end(), [](const auto& kv) { return kv.second == 2; });
  }

  double triangle_area(std::size_t t) const {
    const auto& tri = triangles[t];
    const Vec3 n = cross(vertices[tri[1]] - vertices[tri[0]], vertices[tri[2]] - vertices[tri[0]]);
    return 0.5 * std::sqrt(dot(n, n));
  }
};

/// Icosahedron refined `subdivisions` times with vertices projected onto the sphere.
inline TriangleMesh make_icosphere(int subdivisions, double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  auto project = [radius](Vec3 v) {
    const double n = std::sqrt(dot(v, v));
    return Vec3{v[0] / n * radius, v[1] / n * radius, v[2] / n * radius};
  };
  for (auto& v : m.vertices) v = project(v);
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const auto id = static_cast<std::uint32_t>(m.vertices.size());
      m.vertices.push_back(project(0.5 * (m.vertices[a] + m.vertices[b])));
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& tri : m.triangles) {
      const auto a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  return m;
}

namespace detail {

inline std::string lower_ext(const std::string& path) {
  const auto dot_pos = path.find_last_of('.');
  std::string ext = dot_pos == std::string::npos ? "" : path.substr(dot_pos + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

inline void add_polygon(TriangleMesh& m, const std::vector<std::int64_t>& poly, const std::string& path) {
  require(poly.size() >= 3, ErrorKind::mesh, "'" + path + "': face with fewer than 3 vertices");
  for (std::size_t i = 1; i + 1 < poly.size(); ++i)
    m.triangles.push_back({static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[i]),
                           static_cast<std::uint32_t>(poly[i + 1])});
}

}  // namespace detail

/// Wavefront OBJ: `v` and `f` records (polygons fan-triangulated, negative indices allowed).
inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open mesh '" + path + "'");
  TriangleMesh m;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v{};
      require(static_cast<bool>(ss >> v[0] >> v[1] >> v[2]), ErrorKind::io, "'" + path + "': malformed vertex");
      m.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::int64_t> poly;
      std::string tok;
      while (ss >> tok) {
        const std::int64_t i = std::stoll(tok.substr(0, tok.find('/')));
        poly.push_back(i < 0 ? static_cast<std::int64_t>(m.vertices.size()) + i : i - 1);
        require(poly.back() >= 0, ErrorKind::mesh, "'" + path + "': invalid face index");
      }
      detail::add_polygon(m, poly, path);
    }
  }
  m.validate();
  return m;
}

/// PLY (ascii, binary_little_endian, binary_big_endian) with x/y/z vertex properties and a face index list.
inline TriangleMesh load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open mesh '" + path + "'");
  std::string line;
  std::getline(in, line);
  require(line.rfind("ply", 0) == 0, ErrorKind::io, "'" + path + "' is not a PLY file");

  struct Property {
    std::string name, type, count_type;
    bool list = false;
  };
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
  };
  std::vector<Element> elements;
  std::string format;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      ss >> format;
    } else if (tag == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      require(!elements.empty(), ErrorKind::io, "'" + path + "': property before element");
      Property p;
      ss >> p.type;
      if (p.type == "list") {
        p.list = true;
        ss >> p.count_type >> p.type;
      }
      ss >> p.name;
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  require(format == "ascii" || format == "binary_little_endian" || format == "binary_big_endian", ErrorKind::io,
          "'" + path + "': unsupported PLY format '" + format + "'");
  const bool ascii = format == "ascii";
  const bool swap = format == "binary_big_endian";

  auto type_size = [&](const std::string& t) -> std::size_t {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    fail(ErrorKind::io, "'" + path + "': unknown PLY type '" + t + "'");
  };
  auto read_value = [&](const std::string& t) -> double {
    if (ascii) {
      double v;
      require(static_cast<bool>(in >> v), ErrorKind::io, "'" + path + "': truncated PLY data");
      return v;
    }
    const std::size_t n = type_size(t);
    unsigned char buf[8];
    require(static_cast<bool>(in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))), ErrorKind::io,
            "'" + path + "': truncated PLY data");
    if (swap) std::reverse(buf, buf + n);
    if (t == "char" || t == "int8") return static_cast<std::int8_t>(buf[0]);
    if (t == "uchar" || t == "uint8") return buf[0];
    if (t == "short" || t == "int16") { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
    if (t == "ushort" || t == "uint16") { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
    if (t == "int" || t == "int32") { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
    if (t == "uint" || t == "uint32") { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
    if (t == "float" || t == "float32") { float v; std::memcpy(&v, buf, 4); return v; }
    double v;
    std::memcpy(&v, buf, 8);
    return v;
  };

  TriangleMesh m;
  for (const auto& e : elements) {
    for (std::size_t r = 0; r < e.count; ++r) {
      Vec3 v{};
      for (const auto& p : e.props) {
        if (p.list) {
          const auto n = static_cast<std::size_t>(read_value(p.count_type));
          std::vector<std::int64_t> poly(n);
          for (auto& i : poly) i = static_cast<std::int64_t>(read_value(p.type));
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index"))
            detail::add_polygon(m, poly, path);
        } else {
          const double val = read_value(p.type);
          if (e.name == "vertex") {
            if (p.name == "x") v[0] = val;
            if (p.name == "y") v[1] = val;
            if (p.name == "z") v[2] = val;
          }
        }
      }
      if (e.name == "vertex") m.vertices.push_back(v);
    }
  }
  m.validate();
  return m;
}

inline TriangleMesh load_mesh(const std::string& path) {
  const std::string ext = detail::lower_ext(path);
  if (ext == "obj") return load_obj(path);
  if (ext == "ply") return load_ply(path);
  fail(ErrorKind::io, "'" + path + "': unsupported mesh format (expected .obj or .ply)");
}

/// Closest point on triangle abc to p.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + (vb * denom) * ab + (vc * denom) * ac;
}

inline double point_triangle_distance2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  return squared_distance<3>(p, closest_point_on_triangle(p, a, b, c));
}

/// Signed distance to a watertight triangle mesh: BVH nearest-triangle search for the magnitude,
/// ray-crossing parity for the sign (negative inside).
class MeshSdf {
 public:
  explicit MeshSdf(TriangleMesh mesh) : mesh_(std::move(mesh)) {
    mesh_.validate();
    require(mesh_.is_watertight(), ErrorKind::mesh, "mesh is not watertight (every edge must be shared by 2 triangles)");
    order_.resize(mesh_.triangles.size());
    for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
    tri_boxes_.resize(mesh_.triangles.size());
    centroids_.resize(mesh_.triangles.size());
    for (std::size_t t = 0; t < mesh_.triangles.size(); ++t) {
      for (auto v : mesh_.triangles[t]) tri_boxes_[t].expand(mesh_.vertices[v]);
      const auto& tri = mesh_.triangles[t];
      centroids_[t] = (1.0 / 3.0) * (mesh_.vertices[tri[0]] + mesh_.vertices[tri[1]] + mesh_.vertices[tri[2]]);
    }
    build(0, static_cast<std::uint32_t>(order_.size()));
  }

  const TriangleMesh& mesh() const noexcept { return mesh_; }

  double unsigned_distance(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (n.box.distance2(p) > best) continue;
      if (n.left == 0) {
        for (std::uint32_t i = n.begin; i < n.end; ++i) best = std::min(best, triangle_distance2(p, order_[i]));
        continue;
      }
      const double dl = nodes_[n.left].box.distance2(p), dr = nodes_[n.right].box.distance2(p);
      // Push the farther child first so the nearer one is explored first.
      if (dl <= dr) {
        if (dr <= best) stack[top++] = n.right;
        if (dl <= best) stack[top++] = n.left;
      } else {
        if (dl <= best) stack[top++] = n.left;
        if (dr <= best) stack[top++] = n.right;
      }
    }
    return std::sqrt(best);
  }

  /// Reference: minimum over all triangles.
  double brute_force_unsigned_distance(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t t = 0; t < mesh_.triangles.size(); ++t) best = std::min(best, triangle_distance2(p, t));
    return std::sqrt(best);
  }

  /// Odd number of ray crossings means inside. Rays that graze an edge/vertex are re-cast.
  bool inside(const Vec3& p) const {
    for (int attempt = 0; attempt < 16; ++attempt) {
      const Vec3 dir = ray_direction(attempt);
      bool degenerate = false;
      const int hits = count_crossings(p, dir, degenerate);
      if (!degenerate) return (hits & 1) == 1;
    }
    // Every direction grazed something; fall back to the first direction's parity.
    bool degenerate = false;
    return (count_crossings(p, ray_direction(0), degenerate) & 1) == 1;
  }

  double signed_distance(const Vec3& p) const {
    const double d = unsigned_distance(p);
    if (d == 0.0) return 0.0;
    return inside(p) ? -d : d;
  }

 private:
  struct Node {
    Box3 box;
    std::uint32_t begin = 0, end = 0, left = 0, right = 0;
  };

  double triangle_distance2(const Vec3& p, std::uint32_t t) const {
    const auto& tri = mesh_.triangles[t];
    return point_triangle_distance2(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]], mesh_.vertices[tri[2]]);
  }

  std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{});
    Box3 box, cbox;
    for (std::uint32_t i = begin; i < end; ++i) {
      box.expand(tri_boxes_[order_[i]]);
      cbox.expand(centroids_[order_[i]]);
    }
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= 4) return id;
    int axis = 0;
    for (int j = 1; j < 3; ++j)
      if (cbox.hi[j] - cbox.lo[j] > cbox.hi[axis] - cbox.lo[axis]) axis = j;
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return centroids_[a][axis] < centroids_[b][axis] ||
                              (centroids_[a][axis] == centroids_[b][axis] && a < b);
                     });
    const std::uint32_t l = build(begin, mid);
    const std::uint32_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  static Vec3 ray_direction(int attempt) {
    Rng rng(0x5DF0A11CE, static_cast<std::uint64_t>(attempt));
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double r = std::sqrt(1.0 - z * z);
    return {r * std::cos(phi), r * std::sin(phi), z};
  }

  static bool ray_hits_box(const Vec3& o, const Vec3& inv, const Box3& b) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 3; ++j) {
      double a = (b.lo[j] - o[j]) * inv[j], c = (b.hi[j] - o[j]) * inv[j];
      if (a > c) std::swap(a, c);
      if (std::isnan(a) || std::isnan(c)) continue;  // ray parallel to a slab through the origin plane
      t0 = std::max(t0, a);
      t1 = std::min(t1, c);
      if (t0 > t1 * (1.0 + 1e-12) + 1e-15) return false;
    }
    return true;
  }

  int count_crossings(const Vec3& o, const Vec3& dir, bool& degenerate) const {
    const Vec3 inv{1.0 / dir[0], 1.0 / dir[1], 1.0 / dir[2]};
    int hits = 0;
    std::uint32_t stack[128];
    int top = 0;
    stack[top++] = 0;
    constexpr double kEdgeEps = 1e-9;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (!ray_hits_box(o, inv, n.box)) continue;
      if (n.left != 0) {
        stack[top++] = n.left;
        stack[top++] = n.right;
        continue;
      }
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const auto& tri = mesh_.triangles[order_[i]];
        const Vec3& a = mesh_.vertices[tri[0]];
        const Vec3 e1 = mesh_.vertices[tri[1]] - a, e2 = mesh_.vertices[tri[2]] - a;
        const Vec3 pv = cross(dir, e2);
        const double det = dot(e1, pv);
        const double scale = std::sqrt(dot(e1, e1) * dot(e2, e2));
        if (std::abs(det) <= 1e-12 * scale) {
          // Ray parallel to the triangle plane; only a problem if the ray lies in it.
          const Vec3 nrm = cross(e1, e2);
          if (std::abs(dot(o - a, nrm)) <= 1e-12 * scale) degenerate = true;
          continue;
        }
        const double inv_det = 1.0 / det;
        const Vec3 tv = o - a;
        const double u = dot(tv, pv) * inv_det;
        if (u < -kEdgeEps || u > 1.0 + kEdgeEps) continue;
        const Vec3 qv = cross(tv, e1);
        const double v = dot(dir, qv) * inv_det;
        if (v < -kEdgeEps || u + v > 1.0 + kEdgeEps) continue;
        const double t = dot(e2, qv) * inv_det;
        if (t < -kEdgeEps) continue;
        if (u < kEdgeEps || v < kEdgeEps || u + v > 1.0 - kEdgeEps || t < kEdgeEps) {
          degenerate = true;
          continue;
        }
        ++hits;
      }
    }
    return hits;
  }

  TriangleMesh mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Box3> tri_boxes_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

enum class ShapeKind { sphere, box, torus };

/// Closed-form shapes in world units. Sphere: radius. Box: half extents. Torus around the z axis:
/// major radius (center to tube center) and minor radius (tube).
struct AnalyticShape {
  ShapeKind kind = ShapeKind::sphere;
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 1.0;
  Vec3 half_extents{0.5, 0.5, 0.5};
  double major_radius = 1.0;
  double minor_radius = 0.25;

  void validate() const {
    switch (kind) {
      case ShapeKind::sphere:
        require(radius > 0.0 && std::isfinite(radius), ErrorKind::config, "sphere radius must be > 0");
        break;
      case ShapeKind::box:
        for (double h : half_extents)
          require(h > 0.0 && std::isfinite(h), ErrorKind::config, "box half extents must be > 0");
        break;
      case ShapeKind::torus:
        require(minor_radius > 0.0 && major_radius > minor_radius, ErrorKind::config,
                "torus needs major_radius > minor_radius > 0");
        break;
    }
  }

  double signed_distance(const Vec3& x) const {
    const Vec3 p = x - center;
    switch (kind) {
      case ShapeKind::sphere:
        return std::sqrt(dot(p, p)) - radius;
      case ShapeKind::box: {
        Vec3 q{};
        for (int j = 0; j < 3; ++j) q[j] = std::abs(p[j]) - half_extents[j];
        const Vec3 pos{std::max(q[0], 0.0), std::max(q[1], 0.0), std::max(q[2], 0.0)};
        return std::sqrt(dot(pos, pos)) + std::min(std::max({q[0], q[1], q[2]}), 0.0);
      }
      case ShapeKind::torus: {
        const double a = std::hypot(p[0], p[1]) - major_radius;
        return std::hypot(a, p[2]) - minor_radius;
      }
    }
    return 0.0;
  }

  Box3 bounds() const {
    Vec3 h{};
    switch (kind) {
      case ShapeKind::sphere: h = {radius, radius, radius}; break;
      case ShapeKind::box: h = half_extents; break;
      case ShapeKind::torus: h = {major_radius + minor_radius, major_radius + minor_radius, minor_radius}; break;
    }
    return Box3{center - h, center + h};
  }

  /// Area-uniform point on the surface.
  Vec3 sample_surface(Rng& rng) const {
    switch (kind) {
      case ShapeKind::sphere: {
        const double z = rng.uniform(-1.0, 1.0), phi = 2.0 * std::numbers::pi * rng.uniform();
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        return center + radius * Vec3{r * std::cos(phi), r * std::sin(phi), z};
      }
      case ShapeKind::box: {
        const auto& h = half_extents;
        const double areas[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};  // faces normal to x, y, z
        const double pick = rng.uniform() * (areas[0] + areas[1] + areas[2]);
        const int axis = pick < areas[0] ? 0 : (pick < areas[0] + areas[1] ? 1 : 2);
        Vec3 p{};
        for (int j = 0; j < 3; ++j) p[j] = rng.uniform(-h[j], h[j]);
        p[axis] = rng.uniform() < 0.5 ? -h[axis] : h[axis];
        return center + p;
      }
      case ShapeKind::torus: {
        for (;;) {
          const double u = 2.0 * std::numbers::pi * rng.uniform(), v = 2.0 * std::numbers::pi * rng.uniform();
          const double ring = major_radius + minor_radius * std::cos(v);
          if (rng.uniform() * (major_radius + minor_radius) > ring) continue;
          return center + Vec3{ring * std::cos(u), ring * std::sin(u), minor_radius * std::sin(v)};
        }
      }
    }
    return center;
  }
};

/// Walker alias table for O(1) draws from a discrete distribution.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::span<const double> weights) {
    const std::size_t n = weights.size();
    require(n > 0, ErrorKind::logic, "AliasTable: empty distribution");
    double total = 0.0;
    for (double w : weights) total += w;
    require(total > 0.0, ErrorKind::logic, "AliasTable: zero total weight");
    prob_.resize(n);
    alias_.resize(n);
    std::vector<double> scaled(n);
    std::vector<std::uint32_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights[i] * static_cast<double>(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
      const auto s = small.back(), l = large.back();
      small.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto i : large) prob_[i] = 1.0, alias_[i] = i;
    for (auto i : small) prob_[i] = 1.0, alias_[i] = i;
  }

  std::uint32_t sample(Rng& rng) const {
    const auto i = static_cast<std::uint32_t>(rng.below(prob_.size()));
    return rng.uniform() < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

/// Ground-truth SDF in the unit training box: a mesh or analytic shape plus the transform that
/// fits its bounds into [0.05, 0.95]^3. Distances are reported in training-box units.
class SdfOracle {
 public:
  explicit SdfOracle(AnalyticShape shape) : source_(shape) {
    shape.validate();
    transform_ = BoxTransform::fit(shape.bounds());
  }

  explicit SdfOracle(TriangleMesh mesh) : source_(std::in_place_type<MeshSdf>, std::move(mesh)) {
    const auto& m = std::get<MeshSdf>(source_).mesh();
    transform_ = BoxTransform::fit(m.bounds());
    std::vector<double> areas(m.triangles.size());
    for (std::size_t t = 0; t < areas.size(); ++t) areas[t] = m.triangle_area(t);
    area_table_ = AliasTable(areas);
  }

  const BoxTransform& transform() const noexcept { return transform_; }
  bool is_mesh() const noexcept { return std::holds_alternative<MeshSdf>(source_); }
  const MeshSdf* mesh_sdf() const noexcept { return std::get_if<MeshSdf>(&source_); }

  double world_signed_distance(const Vec3& x) const {
    if (const auto* m = std::get_if<MeshSdf>(&source_)) return m->signed_distance(x);
    return std::get<AnalyticShape>(source_).signed_distance(x);
  }

  /// Signed distance at a training-box point.
  double signed_distance(const Vec3& u) const { return transform_.scale * world_signed_distance(transform_.to_world(u)); }

  /// Area-uniform surface point in training-box coordinates.
  Vec3 sample_surface(Rng& rng) const {
    if (const auto* m = std::get_if<MeshSdf>(&source_)) {
      const auto& mesh = m->mesh();
      const auto& tri = mesh.triangles[area_table_.sample(rng)];
      double a = rng.uniform(), b = rng.uniform();
      if (a + b > 1.0) {
        a = 1.0 - a;
        b = 1.0 - b;
      }
      const Vec3& p0 = mesh.vertices[tri[0]];
      const Vec3 x = p0 + a * (mesh.vertices[tri[1]] - p0) + b * (mesh.vertices[tri[2]] - p0);
      return transform_.to_domain(x);
    }
    return transform_.to_domain(std::get<AnalyticShape>(source_).sample_surface(rng));
  }

 private:
  std::variant<AnalyticShape, MeshSdf> source_;
  BoxTransform transform_;
  AliasTable area_table_;
};

struct SdfSamples {
  std::vector<Vec3> points;
  std::vector<double> targets;
};

inline double unit_box_diagonal() { return std::sqrt(3.0); }

/// `near_fraction` of the points are surface samples perturbed by isotropic Gaussian noise with
/// std `sigma`; the rest are uniform in the unit box. Points are clamped to the box.
inline SdfSamples sample_training_points(const SdfOracle& oracle, std::size_t count, double near_fraction, double sigma,
                                         Rng& rng) {
  require(near_fraction >= 0.0 && near_fraction <= 1.0, ErrorKind::config, "near-surface fraction must be in [0, 1]");
  require(sigma >= 0.0, ErrorKind::config, "perturbation std must be >= 0");
  SdfSamples s;
  s.points.resize(count);
  s.targets.resize(count);
  const auto near = static_cast<std::size_t>(std::llround(near_fraction * static_cast<double>(count)));
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 p{};
    if (i < near) {
      p = oracle.sample_surface(rng);
      if (sigma > 0.0)
        for (int j = 0; j < 3; ++j) p[j] += sigma * rng.normal();
    } else {
      for (int j = 0; j < 3; ++j) p[j] = rng.uniform();
    }
    for (int j = 0; j < 3; ++j) p[j] = std::clamp(p[j], 0.0, 1.0);
    s.points[i] = p;
    s.targets[i] = oracle.signed_distance(p);
  }
  return s;
}

/// Intersection over union of the inside sets {a <= 0} and {b <= 0}; 1 when both are empty.
inline double iou_from_values(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::logic, "iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] <= 0.0, ib = b[i] <= 0.0;
    inter += (ia && ib) ? 1 : 0;
    uni += (ia || ib) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Cell-centered res^3 lattice over the unit box, x fastest.
inline std::vector<Vec3> lattice_points(int res) {
  require(res >= 2, ErrorKind::config, "IoU grid resolution must be >= 2");
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(res) * res * res);
  for (int k = 0; k < res; ++k)
    for (int j = 0; j < res; ++j)
      for (int i = 0; i < res; ++i) pts.push_back({(i + 0.5) / res, (j + 0.5) / res, (k + 0.5) / res});
  return pts;
}

using SdfPredictor = std::function<void(std::span<const Vec3>, std::span<double>)>;

/// IoU of predicted vs. ground-truth inside sets on a res^3 lattice.
inline double iou_grid(const SdfPredictor& predict, const SdfOracle& oracle, int res) {
  const auto pts = lattice_points(res);
  std::vector<double> pred(pts.size()), truth(pts.size());
  predict(pts, pred);
  for (std::size_t i = 0; i < pts.size(); ++i) truth[i] = oracle.signed_distance(pts[i]);
  return iou_from_values(pred, truth);
}

}  // namespace neurbf
