#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "fixtures.h"
#include "meshmodes/datagen.h"

using namespace meshmodes;

namespace {

Vec3 ring_centroid(const TriangleMesh& m, const BarSpec& s, int ring) {
  return m.positions.middleRows(ring * s.ring_vertices, s.ring_vertices).colwise().mean().transpose();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("meshmodes_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("bar topology") {
  const BarSpec s = fixtures::small_bar_spec();
  const TriangleMesh bar = make_bar(s);
  CHECK(bar.vertex_count() == (s.segments + 1) * s.ring_vertices);
  CHECK(bar.face_count() == 2 * s.segments * s.ring_vertices);
  CHECK(bar.positions.col(0).minCoeff() == 0.0);
  CHECK(bar.positions.col(0).maxCoeff() == doctest::Approx(s.length));
  for (int v = 0; v < bar.vertex_count(); ++v) {
    CHECK(bar.positions.row(v).tail<2>().norm() == doctest::Approx(s.radius));
  }
  // Every interior edge is shared by exactly two faces.
  const Adjacency adj = build_adjacency(bar);
  CHECK(is_connected(adj));
}

TEST_CASE("dataset schedule") {
  BarSpec s = fixtures::small_bar_spec();
  const BarDataset d = gen_bar_dataset(s, 50);
  REQUIRE(d.meshes.size() == 50);
  CHECK(d.params[0].bend_rad == 0.0);
  CHECK(d.params[0].bump == 0.0);
  CHECK(d.meshes[0].positions == make_bar(s).positions);
  CHECK(d.meshes[0].name == "shape_000");
  CHECK(d.meshes[49].name == "shape_049");

  const double max_bend = s.max_bend_deg * std::numbers::pi / 180.0;
  CHECK(d.params[20].bend_rad == doctest::Approx(max_bend).epsilon(1e-15));
  double top_bump = 0.0;
  for (std::size_t m = 0; m < d.meshes.size(); ++m) {
    CHECK(d.meshes[m].faces == d.meshes[0].faces);
    CHECK(d.params[m].bend_rad >= 0.0);
    CHECK(d.params[m].bend_rad <= max_bend + 1e-15);
    CHECK(d.params[m].bump >= 0.0);
    CHECK(d.params[m].bump <= s.max_bump + 1e-15);
    top_bump = std::max(top_bump, d.params[m].bump);
  }
  CHECK(top_bump > 0.9 * s.max_bump);

  CHECK_THROWS_AS(gen_bar_dataset(s, 1), UsageError);
}

TEST_CASE("bend geometry") {
  const BarSpec s = fixtures::small_bar_spec();
  const double x0 = 0.5 * (s.length - s.bend_zone);
  for (double deg : {0.0, 30.0, 90.0, 120.0}) {
    const double a = deg * std::numbers::pi / 180.0;
    const TriangleMesh m = deform_bar(s, {a, 0.0});
    const Vec3 axis = ring_centroid(m, s, s.segments) - ring_centroid(m, s, s.segments - 1);
    CHECK(std::abs(std::atan2(axis.y(), axis.x()) - a) <= 1e-6);
    const TriangleMesh flat = make_bar(s);
    for (int v = 0; v < m.vertex_count(); ++v) {
      if (flat.positions(v, 0) <= x0) CHECK(m.position(v) == flat.position(v));
    }
    // Bending is isometric along the axis: ring spacing is preserved.
    for (int k = 0; k < s.segments; ++k) {
      const double gap = (ring_centroid(m, s, k + 1) - ring_centroid(m, s, k)).norm();
      CHECK(gap == doctest::Approx(s.length / s.segments).epsilon(0.02));
    }
  }

  const auto moved = bend_displaced_vertices(s);
  const TriangleMesh flat = make_bar(s);
  for (int v = 0; v < flat.vertex_count(); ++v) {
    const bool beyond = flat.positions(v, 0) > x0 + 1e-12;
    CHECK(std::binary_search(moved.begin(), moved.end(), v) == beyond);
  }
}

TEST_CASE("bump geometry") {
  const BarSpec s = fixtures::small_bar_spec();
  const TriangleMesh flat = make_bar(s);
  const TriangleMesh bumped = deform_bar(s, {0.0, 0.1});
  const int center = bump_center_vertex(s);
  const Vec3 c = flat.position(center);
  CHECK((bumped.position(center) - c).norm() == doctest::Approx(0.1).epsilon(1e-12));
  // Displacement at the center is radial.
  const Vec3 radial = Vec3(0.0, c.y(), c.z()).normalized();
  CHECK((bumped.position(center) - c).normalized().dot(radial) == doctest::Approx(1.0));

  const auto support = bump_support(s);
  CHECK(std::binary_search(support.begin(), support.end(), center));
  for (int v = 0; v < flat.vertex_count(); ++v) {
    const bool inside = (flat.position(v) - c).norm() <= 3.0 * s.bump_sigma;
    CHECK(std::binary_search(support.begin(), support.end(), v) == inside);
    if (!inside) CHECK(bumped.position(v) == flat.position(v));
  }
  // The bump sits in the half the bend leaves alone.
  const double x0 = 0.5 * (s.length - s.bend_zone);
  for (int v : support) CHECK(flat.positions(v, 0) < x0);
}

TEST_CASE("seeds") {
  BarSpec s = fixtures::small_bar_spec();
  s.seed = 17;
  const BarDataset a = gen_bar_dataset(s, 12);
  const BarDataset b = gen_bar_dataset(s, 12);
  for (int m = 0; m < 12; ++m) CHECK(format_obj(a.meshes[m]) == format_obj(b.meshes[m]));
  CHECK(a.params[0].bend_rad == 0.0);

  s.seed = 18;
  const BarDataset c = gen_bar_dataset(s, 12);
  CHECK(c.params[5].bend_rad != a.params[5].bend_rad);
}

TEST_CASE("spec validation and JSON") {
  BarSpec s;
  s.ring_vertices = 2;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = BarSpec{};
  s.radius = 0.0;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = BarSpec{};
  s.bend_zone = 5.0;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = BarSpec{};
  s.max_bump = -1.0;
  CHECK_THROWS_AS(s.validate(), UsageError);

  BarSpec t;
  t.segments = 7;
  t.seed = 99;
  t.max_bend_deg = 45.0;
  const BarSpec back = BarSpec::from_json(t.to_json());
  CHECK(back.to_json() == t.to_json());
  CHECK(BarSpec::from_json(nlohmann::json::object()).segments == 24);
  CHECK_THROWS_AS(BarSpec::from_json({{"ring_vertices", 1}}), UsageError);
}

TEST_CASE("dataset directory round trip") {
  const BarSpec s = fixtures::small_bar_spec();
  const BarDataset d = gen_bar_dataset(s, 5);
  const auto dir = scratch_dir("datagen");
  write_bar_dataset(s, d, dir);
  const auto loaded = load_obj_directory(dir);
  REQUIRE(loaded.size() == 5);
  for (int m = 0; m < 5; ++m) {
    CHECK(loaded[m].name == d.meshes[m].name);
    CHECK(loaded[m].faces == d.meshes[m].faces);
    CHECK((loaded[m].positions - d.meshes[m].positions).cwiseAbs().maxCoeff() < 1e-9);
  }
  std::ifstream in(dir / "params.json");
  const auto doc = nlohmann::json::parse(in);
  CHECK(doc.at("shapes").size() == 5);
  CHECK(doc.at("bump_center") == bump_center_vertex(s));
  CHECK(doc.at("spec") == s.to_json());

  const auto empty = scratch_dir("datagen_empty");
  std::filesystem::create_directories(empty);
  CHECK_THROWS_AS(load_obj_directory(empty), DataError);
  CHECK_THROWS_AS(load_obj_directory(empty / "missing"), DataError);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(empty);
}
