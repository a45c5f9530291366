#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fixtures.h"
#include "meshmodes/mesh.h"

using namespace meshmodes;
using fixtures::cube;

TEST_CASE("parse_obj reads a single triangle") {
  const TriangleMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  CHECK(m.vertex_count() == 3);
  CHECK(m.face_count() == 1);
  CHECK(m.faces(0, 0) == 0);
  CHECK(m.faces(0, 1) == 1);
  CHECK(m.faces(0, 2) == 2);
}

TEST_CASE("parse_obj keeps only the position index of slash faces") {
  const TriangleMesh m =
      parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\n");
  CHECK(m.face_count() == 1);
  CHECK(m.faces(0, 2) == 2);
}

TEST_CASE("parse_obj rejects out-of-range face indices") {
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 5\n"), DataError);
}

TEST_CASE("cube has 8 vertices and 12 faces after an OBJ round trip") {
  const TriangleMesh m = parse_obj(fixtures::obj_text_cube());
  CHECK(m.vertex_count() == 8);
  CHECK(m.face_count() == 12);
}

TEST_CASE("save then load reproduces the mesh") {
  TriangleMesh c = cube();
  c.positions *= 1.0 / 3.0;
  const auto path = std::filesystem::temp_directory_path() / "meshmodes_cube_rt.obj";
  save_obj(c, path);
  const TriangleMesh back = load_obj(path);
  std::filesystem::remove(path);
  CHECK(back.faces == c.faces);
  CHECK((back.positions - c.positions).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("writing an empty mesh fails") {
  TriangleMesh empty;
  CHECK_THROWS_WITH_AS(format_obj(empty), "empty mesh", DataError);
  CHECK_THROWS_AS(parse_obj("# nothing\n"), DataError);
}

TEST_CASE("NaN positions are rejected before writing") {
  TriangleMesh c = cube();
  c.positions(3, 1) = std::nan("");
  const auto path = std::filesystem::temp_directory_path() / "meshmodes_nan.obj";
  std::filesystem::remove(path);
  CHECK_THROWS_AS(save_obj(c, path), DataError);
  CHECK_FALSE(std::filesystem::exists(path));
}

TEST_CASE("adjacency degrees") {
  SUBCASE("single triangle") {
    const Adjacency a = build_adjacency(fixtures::make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}}));
    for (int v = 0; v < 3; ++v) CHECK(a.degree(v) == 2);
  }
  SUBCASE("two triangles sharing edge (1, 2)") {
    const Adjacency a = build_adjacency(fixtures::make_mesh(
        {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}}, {{0, 1, 2}, {1, 3, 2}}));
    CHECK(a.degree(0) == 2);
    CHECK(a.degree(1) == 3);
    CHECK(a.degree(2) == 3);
    CHECK(a.degree(3) == 2);
  }
  SUBCASE("cube matches a brute-force edge set") {
    const TriangleMesh c = cube();
    std::set<std::pair<int, int>> edges;
    for (int f = 0; f < c.face_count(); ++f) {
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          if (a != b) edges.insert({c.faces(f, a), c.faces(f, b)});
        }
      }
    }
    const Adjacency adj = build_adjacency(c);
    for (int v = 0; v < 8; ++v) {
      int expected = 0;
      for (const auto& e : edges) expected += e.first == v;
      CHECK(adj.degree(v) == expected);
      CHECK(std::is_sorted(adj.neighbors[v].begin(), adj.neighbors[v].end()));
    }
  }
}

TEST_CASE("neighbor mean operator rows sum to one") {
  const auto m = neighbor_mean_operator(build_adjacency(cube()));
  const Eigen::VectorXd sums = m * Eigen::VectorXd::Ones(8);
  CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("cotangent weights") {
  SUBCASE("equilateral triangle") {
    const double h = std::sqrt(3.0) / 2.0;
    const CotanWeights w = cotangent_weights(
        fixtures::make_mesh({{0, 0, 0}, {1, 0, 0}, {0.5, h, 0}}, {{0, 1, 2}}));
    CHECK(w(0, 1) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(w(1, 2) == doctest::Approx(0.5774).epsilon(1e-4));
    CHECK(w.edge_count() == 3);
  }
  SUBCASE("square diagonal is clamped to the minimum") {
    const CotanWeights w = cotangent_weights(fixtures::make_mesh(
        {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}, {{0, 1, 2}, {0, 2, 3}}));
    CHECK(w(0, 2) == CotanWeights::kMin);
    // Boundary edges keep their single cotangent: the opposite angle is 45°.
    CHECK(w(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("edge shared by three faces") {
    const TriangleMesh fin = fixtures::make_mesh(
        {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}},
        {{0, 1, 2}, {0, 3, 1}, {0, 1, 4}});
    CHECK_THROWS_AS(cotangent_weights(fin), DataError);
  }
}

TEST_CASE("geodesic distances") {
  // Path 0-1-2-3 along x with thin triangles hanging off each segment.
  const TriangleMesh path = fixtures::make_mesh(
      {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0},
       {0.5, 0.1, 0}, {1.5, 0.1, 0}, {2.5, 0.1, 0}},
      {{0, 1, 4}, {1, 2, 5}, {2, 3, 6}});
  const Eigen::VectorXd d = geodesic_distances(path, 0);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(d[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(d[3] == 1.0);
  CHECK(d.maxCoeff() == 1.0);

  const TriangleMesh two_islands = fixtures::make_mesh(
      {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}},
      {{0, 1, 2}, {3, 4, 5}});
  CHECK_THROWS_AS(geodesic_distances(two_islands, 0), DataError);

  GeodesicCache cache(path);
  CHECK(cache.from(3)[3] == 0.0);
  CHECK(&cache.from(3) == &cache.from(3));
}

TEST_CASE("bounding box diagonal of the unit cube") {
  CHECK(bounding_box_diagonal(cube()) == doctest::Approx(std::sqrt(3.0)));
}
