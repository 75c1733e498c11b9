#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "neurbf/mesh_sdf.hpp"

using namespace neurbf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path d = fs::temp_directory_path() / "neurbf_mesh_tests";
  fs::create_directories(d);
  return d;
}

const char* kCubeObj =
    "# unit cube centered at the origin, quads\n"
    "v -0.5 -0.5 -0.5\nv 0.5 -0.5 -0.5\nv 0.5 0.5 -0.5\nv -0.5 0.5 -0.5\n"
    "v -0.5 -0.5 0.5\nv 0.5 -0.5 0.5\nv 0.5 0.5 0.5\nv -0.5 0.5 0.5\n"
    "f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";

std::string write_file(const std::string& name, const std::string& text) {
  const auto p = temp_dir() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p.string();
}

TriangleMesh cube_mesh() { return load_obj(write_file("cube.obj", kCubeObj)); }

Vec3 random_in(Rng& rng, double lo, double hi) { return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)}; }

}  // namespace

TEST(AnalyticShape, SphereExamples) {
  AnalyticShape s;
  EXPECT_EQ(s.signed_distance({0, 0, 0}), -1.0);
  EXPECT_EQ(s.signed_distance({2, 0, 0}), 1.0);
  EXPECT_NEAR(s.signed_distance({0, 0.6, 0.8}), 0.0, 1e-15);
}

TEST(AnalyticShape, BoxAndTorusExamples) {
  AnalyticShape b;
  b.kind = ShapeKind::box;
  EXPECT_EQ(b.signed_distance({0, 0, 0}), -0.5);
  EXPECT_EQ(b.signed_distance({1.5, 0, 0}), 1.0);
  EXPECT_NEAR(b.signed_distance({1.5, 1.5, 0}), std::sqrt(2.0), 1e-15);
  AnalyticShape t;
  t.kind = ShapeKind::torus;
  EXPECT_NEAR(t.signed_distance({1, 0, 0}), -0.25, 1e-15);
  EXPECT_NEAR(t.signed_distance({0, 0, 0}), 0.75, 1e-15);
  t.minor_radius = 2.0;
  EXPECT_THROW(t.validate(), Error);
}

TEST(AnalyticShape, SurfaceSamplesLieOnSurface) {
  Rng rng(100);
  for (auto kind : {ShapeKind::sphere, ShapeKind::box, ShapeKind::torus}) {
    AnalyticShape s;
    s.kind = kind;
    s.center = {0.3, -0.2, 1.0};
    for (int i = 0; i < 500; ++i) ASSERT_NEAR(s.signed_distance(s.sample_surface(rng)), 0.0, 1e-12);
  }
}

TEST(MeshSdf, CubeFromQuads) {
  const auto m = cube_mesh();
  EXPECT_EQ(m.triangles.size(), 12u);
  EXPECT_TRUE(m.is_watertight());
  const MeshSdf sdf(m);
  EXPECT_NEAR(sdf.signed_distance({0, 0, 0}), -0.5, 1e-15);
  EXPECT_NEAR(sdf.signed_distance({1.5, 0, 0}), 1.0, 1e-15);
  EXPECT_NEAR(sdf.signed_distance({0.1, 0.2, 0.45}), -0.05, 1e-15);
  AnalyticShape box;
  box.kind = ShapeKind::box;
  Rng rng(101);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p = random_in(rng, -1.0, 1.0);
    ASSERT_NEAR(sdf.signed_distance(p), box.signed_distance(p), 1e-12);
  }
}

TEST(MeshSdf, IcosphereApproximatesSphere) {
  const auto m = make_icosphere(4);
  EXPECT_TRUE(m.is_watertight());
  const MeshSdf sdf(m);
  AnalyticShape sphere;
  Rng rng(102);
  for (int i = 0; i < 3000; ++i) {
    const Vec3 p = random_in(rng, -1.5, 1.5);
    ASSERT_NEAR(sdf.signed_distance(p), sphere.signed_distance(p), 0.01);
  }
  EXPECT_NEAR(sdf.signed_distance({0, 0, 0}), -1.0, 0.01);
}

TEST(MeshSdf, BvhMatchesBruteForce) {
  const MeshSdf sdf(make_icosphere(3, 0.7));
  Rng rng(103);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p = random_in(rng, -2.0, 2.0);
    ASSERT_EQ(sdf.unsigned_distance(p), sdf.brute_force_unsigned_distance(p));
  }
}

TEST(MeshSdf, SignMatchesAnalyticAwayFromSurface) {
  const MeshSdf sdf(make_icosphere(3));
  AnalyticShape sphere;
  Rng rng(104);
  int checked = 0;
  for (int i = 0; i < 5000; ++i) {
    const Vec3 p = random_in(rng, -1.3, 1.3);
    const double truth = sphere.signed_distance(p);
    if (std::abs(truth) < 0.02) continue;
    ASSERT_EQ(sdf.inside(p), truth < 0.0);
    ++checked;
  }
  EXPECT_GT(checked, 4000);
}

TEST(MeshSdf, RejectsOpenMesh) {
  auto m = make_icosphere(1);
  m.triangles.pop_back();
  EXPECT_FALSE(m.is_watertight());
  try {
    MeshSdf sdf(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::mesh);
    EXPECT_NE(std::string(e.what()).find("watertight"), std::string::npos);
  }
}

TEST(MeshLoaders, ObjIndexFormsAndErrors) {
  const std::string obj =
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
      "f 1/1/1 3/2/2 2/3/3\nf -4 -3 -1\nf 1//1 4//1 3//1\nf 2 3 4\n";
  const auto m = load_obj(write_file("tet.obj", obj));
  ASSERT_EQ(m.triangles.size(), 4u);
  EXPECT_EQ(m.triangles[1], (std::array<std::uint32_t, 3>{0, 1, 3}));
  EXPECT_TRUE(m.is_watertight());
  EXPECT_THROW(load_obj(write_file("bad.obj", "v 0 0 0\nf 1 2 3\n")), Error);
  try {
    load_mesh((temp_dir() / "missing.obj").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    EXPECT_NE(std::string(e.what()).find("missing.obj"), std::string::npos);
  }
  EXPECT_THROW(load_mesh(write_file("x.stl", "solid")), Error);
}

TEST(MeshLoaders, PlyAsciiAndBinaryMatchObj) {
  const auto cube = cube_mesh();
  std::string header_common = "element vertex 8\nproperty float x\nproperty float y\nproperty float z\n"
                              "element face 12\nproperty list uchar int vertex_indices\nend_header\n";
  std::string ascii = "ply\nformat ascii 1.0\ncomment cube\n" + header_common;
  for (const auto& v : cube.vertices) ascii += std::to_string(v[0]) + " " + std::to_string(v[1]) + " " + std::to_string(v[2]) + "\n";
  for (const auto& t : cube.triangles) ascii += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
  const auto a = load_ply(write_file("cube_ascii.ply", ascii));

  auto binary = [&](bool big) {
    std::string s = std::string("ply\nformat ") + (big ? "binary_big_endian" : "binary_little_endian") + " 1.0\n" + header_common;
    auto put = [&](const void* p, std::size_t n) {
      std::string bytes(static_cast<const char*>(p), n);
      if (big) std::reverse(bytes.begin(), bytes.end());
      s += bytes;
    };
    for (const auto& v : cube.vertices)
      for (double c : v) {
        const float f = static_cast<float>(c);
        put(&f, 4);
      }
    for (const auto& t : cube.triangles) {
      s += static_cast<char>(3);
      for (auto i : t) {
        const std::int32_t v = static_cast<std::int32_t>(i);
        put(&v, 4);
      }
    }
    return s;
  };
  const auto le = load_ply(write_file("cube_le.ply", binary(false)));
  const auto be = load_ply(write_file("cube_be.ply", binary(true)));
  for (const auto* m : {&a, &le, &be}) {
    EXPECT_EQ(m->vertices, cube.vertices);
    EXPECT_EQ(m->triangles, cube.triangles);
  }
  EXPECT_THROW(load_ply(write_file("trunc.ply", binary(false).substr(0, 200))), Error);
}

TEST(BoxTransform, RoundTripAndMargins) {
  Box3 b;
  b.expand(Vec3{-3.0, 1.0, 2.0});
  b.expand(Vec3{5.0, 2.0, 4.0});
  const auto t = BoxTransform::fit(b);
  EXPECT_NEAR(t.scale, 0.9 / 8.0, 1e-15);
  const Vec3 lo = t.to_domain(b.lo), hi = t.to_domain(b.hi);
  EXPECT_NEAR(lo[0], 0.05, 1e-12);
  EXPECT_NEAR(hi[0], 0.95, 1e-12);
  EXPECT_NEAR(0.5 * (lo[1] + hi[1]), 0.5, 1e-12);
  Rng rng(105);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x = random_in(rng, -10.0, 10.0);
    const Vec3 back = t.to_world(t.to_domain(x));
    for (int j = 0; j < 3; ++j) ASSERT_NEAR(back[j], x[j], 1e-12);
  }
}

TEST(SdfOracle, DistancesInTrainingBoxUnits) {
  const SdfOracle o{AnalyticShape{}};
  EXPECT_NEAR(o.transform().scale, 0.45, 1e-15);
  EXPECT_NEAR(o.signed_distance({0.5, 0.5, 0.5}), -0.45, 1e-15);
  EXPECT_NEAR(o.signed_distance({0.95, 0.5, 0.5}), 0.0, 1e-12);
  const SdfOracle mesh{make_icosphere(4)};
  Rng rng(106);
  for (int i = 0; i < 500; ++i) {
    const Vec3 u = random_in(rng, 0.0, 1.0);
    ASSERT_NEAR(mesh.signed_distance(u), o.signed_distance(u), 0.005);
  }
}

TEST(SdfOracle, MeshSurfaceSamplesHaveZeroDistance) {
  const SdfOracle o{cube_mesh()};
  Rng rng(107);
  int per_face[6] = {};
  for (int i = 0; i < 6000; ++i) {
    const Vec3 u = o.sample_surface(rng);
    ASSERT_NEAR(o.signed_distance(u), 0.0, 1e-12);
    const Vec3 w = o.transform().to_world(u);
    for (int j = 0; j < 3; ++j) {
      if (std::abs(w[j] + 0.5) < 1e-9) ++per_face[2 * j];
      if (std::abs(w[j] - 0.5) < 1e-9) ++per_face[2 * j + 1];
    }
  }
  for (int f : per_face) EXPECT_NEAR(f, 1000, 150);
}

TEST(Sampling, NearAndUniformMix) {
  const SdfOracle o{AnalyticShape{}};
  Rng rng(108);
  const double sigma = 0.01 * unit_box_diagonal();
  const auto s = sample_training_points(o, 8000, 0.875, sigma, rng);
  ASSERT_EQ(s.points.size(), 8000u);
  double near_abs = 0.0, far_abs = 0.0;
  for (std::size_t i = 0; i < 8000; ++i) {
    for (double c : s.points[i]) {
      ASSERT_GE(c, 0.0);
      ASSERT_LE(c, 1.0);
    }
    ASSERT_EQ(s.targets[i], o.signed_distance(s.points[i]));
    (i < 7000 ? near_abs : far_abs) += std::abs(s.targets[i]);
  }
  near_abs /= 7000.0;
  far_abs /= 1000.0;
  // |N(0, sigma^2)| projected on the normal has mean sigma * sqrt(2 / pi).
  EXPECT_NEAR(near_abs, sigma * std::sqrt(2.0 / std::numbers::pi), 0.1 * sigma);
  EXPECT_GT(far_abs, 5.0 * near_abs);
  Rng again(108);
  EXPECT_EQ(sample_training_points(o, 8000, 0.875, sigma, again).points, s.points);
}

TEST(Iou, Examples) {
  const std::vector<double> a{-1, -1, 1, 1}, b{-1, 1, -1, 1};
  EXPECT_EQ(iou_from_values(a, a), 1.0);
  EXPECT_NEAR(iou_from_values(a, b), 1.0 / 3.0, 1e-15);
  const std::vector<double> c{1, 1, -1, 1};
  const std::vector<double> d{-1, 1, 1, 1};
  EXPECT_EQ(iou_from_values(c, d), 0.0);
  const std::vector<double> none{1, 2};
  EXPECT_EQ(iou_from_values(none, none), 1.0);
  const std::vector<double> zero{0.0}, neg{-0.1};
  EXPECT_EQ(iou_from_values(zero, neg), 1.0);
}

TEST(Iou, LatticeAgainstScaledSphere) {
  const SdfOracle o{AnalyticShape{}};
  EXPECT_EQ(iou_grid([&](std::span<const Vec3> p, std::span<double> out) {
              for (std::size_t i = 0; i < p.size(); ++i) out[i] = o.signed_distance(p[i]);
            }, o, 32), 1.0);
  // A concentric sphere of 0.9 times the radius: IoU approaches 0.9^3.
  const double r = 0.45 * 0.9;
  const double iou = iou_grid(
      [&](std::span<const Vec3> p, std::span<double> out) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const Vec3 q = p[i] - Vec3{0.5, 0.5, 0.5};
          out[i] = std::sqrt(dot(q, q)) - r;
        }
      },
      o, 96);
  EXPECT_NEAR(iou, 0.729, 0.01);
  EXPECT_THROW(lattice_points(1), Error);
}

TEST(AliasTable, FollowsWeights) {
  const std::vector<double> w{1.0, 3.0, 0.0, 4.0};
  const AliasTable t(w);
  Rng rng(109);
  int counts[4] = {};
  const int n = 80000;
  for (int i = 0; i < n; ++i) ++counts[t.sample(rng)];
  EXPECT_EQ(counts[2], 0);
  EXPECT_NEAR(counts[0] / static_cast<double>(n), 0.125, 0.01);
  EXPECT_NEAR(counts[1] / static_cast<double>(n), 0.375, 0.01);
  EXPECT_NEAR(counts[3] / static_cast<double>(n), 0.5, 0.01);
}
