#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "fixtures.h"
#include "meshmodes/acap.h"
#include "meshmodes/datagen.h"

using namespace meshmodes;
using std::numbers::pi;

namespace {

struct Setup {
  TriangleMesh reference;
  CotanWeights weights;
  Adjacency adj;

  explicit Setup(TriangleMesh ref)
      : reference(std::move(ref)),
        weights(cotangent_weights(reference)),
        adj(build_adjacency(reference)) {}
};

TriangleMesh transformed(const TriangleMesh& m, const Mat3& a) {
  TriangleMesh out = m;
  out.positions = m.positions * a.transpose();
  return out;
}

double vertex_rms(const Positions& a, const Positions& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.rows()));
}

}  // namespace

TEST_CASE("deformation gradients of exact-fit shapes") {
  const Setup s(make_bar(fixtures::small_bar_spec()));
  SUBCASE("identity") {
    for (const Mat3& t : deformation_gradients(s.reference, s.reference, s.weights, s.adj).transforms) {
      CHECK((t - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("rigid rotation") {
    const Mat3 r = fixtures::axis_angle(Vec3(1, 2, 3), 0.7);
    for (const Mat3& t : deformation_gradients(s.reference, transformed(s.reference, r), s.weights, s.adj).transforms) {
      CHECK((t - r).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("uniform scale") {
    for (const Mat3& t : deformation_gradients(s.reference, transformed(s.reference, 2.0 * Mat3::Identity()), s.weights, s.adj).transforms) {
      CHECK((t - 2.0 * Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("polar decomposition") {
  SUBCASE("identity") {
    const auto p = polar_decompose<double>(Mat3::Identity());
    CHECK((p.rotation - Mat3::Identity()).norm() < 1e-14);
    CHECK((p.stretch - Mat3::Identity()).norm() < 1e-14);
  }
  SUBCASE("pure rotation") {
    const Mat3 r = fixtures::axis_angle(Vec3::UnitZ(), pi / 2);
    const auto p = polar_decompose<double>(r);
    CHECK((p.rotation - r).norm() < 1e-14);
    CHECK((p.stretch - Mat3::Identity()).norm() < 1e-14);
  }
  SUBCASE("pure stretch") {
    const Mat3 d = Vec3(2.0, 0.5, 1.0).asDiagonal();
    const auto p = polar_decompose<double>(d);
    CHECK((p.rotation - Mat3::Identity()).norm() < 1e-14);
    CHECK((p.stretch - d).norm() < 1e-14);
  }
  SUBCASE("random product") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 20; ++trial) {
      const Mat3 r = fixtures::axis_angle(Vec3(u(rng), u(rng), u(rng)), 2.0 * u(rng));
      Mat3 a = Mat3::Random();
      const Mat3 spd = a * a.transpose() + 0.5 * Mat3::Identity();
      const auto p = polar_decompose<double>(r * spd);
      CHECK((p.rotation - r).norm() < 1e-10);
      CHECK((p.stretch - spd).norm() < 1e-10);
    }
  }
  SUBCASE("reflection") {
    CHECK_THROWS_AS(polar_decompose<double>(Vec3(1, 1, -1).asDiagonal().toDenseMatrix()),
                    NumericalError);
  }
}

TEST_CASE("rotation logarithm") {
  CHECK(rotation_log(Mat3::Identity()).vector().norm() == 0.0);
  const Vec3 r = rotation_log(fixtures::axis_angle(Vec3::UnitZ(), pi / 2)).vector();
  CHECK((r - Vec3(0, 0, pi / 2)).norm() < 1e-14);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const RotationLog log = rotation_log(fixtures::axis_angle(axis, 2.0));
    CHECK(log.angle == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(std::abs(std::abs(log.axis.dot(axis)) - 1.0) < 1e-9);
    CHECK((rotation_exp(log.vector()) - fixtures::axis_angle(axis, 2.0)).norm() < 1e-12);
  }
  CHECK(rotation_log(fixtures::axis_angle(Vec3::UnitX(), pi)).ambiguous);
  CHECK_FALSE(rotation_log(fixtures::axis_angle(Vec3::UnitX(), 3.0)).ambiguous);
}

TEST_CASE("make_consistent") {
  const Adjacency adj = build_adjacency(fixtures::make_mesh(
      {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}}));
  SUBCASE("already consistent logs are unchanged") {
    std::vector<RotationLog> logs(3, rotation_log(fixtures::axis_angle(Vec3::UnitZ(), pi / 2)));
    const auto out = make_consistent(logs, adj);
    for (const auto& l : out) CHECK((l.vector() - Vec3(0, 0, pi / 2)).norm() < 1e-14);
  }
  SUBCASE("2 pi equivalent representative is remapped") {
    std::vector<RotationLog> logs(3);
    logs[0].axis = Vec3::UnitZ();
    logs[0].angle = 3.0;
    logs[1].axis = -Vec3::UnitZ();
    logs[1].angle = 2 * pi - 3.0;  // r = (0, 0, 3 - 2 pi)
    logs[2] = logs[0];
    const auto out = make_consistent(logs, adj);
    CHECK((out[1].vector() - Vec3(0, 0, 3.0)).norm() < 1e-12);
  }
  SUBCASE("a 270 degree bend stays smooth") {
    BarSpec spec = fixtures::small_bar_spec();
    spec.segments = 40;
    spec.bend_zone = 2.0;
    const Setup s(make_bar(spec));
    const TriangleMesh bent = deform_bar(spec, {270.0 * pi / 180.0, 0.0});
    const auto field = deformation_gradients(s.reference, bent, s.weights, s.adj);
    std::vector<RotationLog> logs;
    for (const Mat3& t : field.transforms) {
      logs.push_back(rotation_log(polar_decompose<double>(t).rotation));
    }
    const auto out = make_consistent(logs, s.adj);
    double worst = 0.0;
    for (int i = 0; i < s.adj.vertex_count(); ++i) {
      for (int j : s.adj.neighbors[i]) {
        worst = std::max(worst, (out[i].vector() - out[j].vector()).norm());
      }
    }
    CHECK(worst < pi / 8);
  }
}

TEST_CASE("feature encoding and scaling") {
  const BarSpec spec = fixtures::small_bar_spec();
  const TriangleMesh ref = make_bar(spec);
  SUBCASE("identical shapes encode to the scaled identity") {
    const EncodedDataset enc = encode_dataset({ref, ref}, 0);
    for (const auto& f : enc.scaled) CHECK(f.cwiseAbs().maxCoeff() < 1e-9);
    for (const auto& f : enc.raw) {
      for (Eigen::Index i = 0; i < f.rows(); ++i) {
        CHECK((f.row(i).transpose() - identity_feature()).norm() < 1e-8);
      }
    }
  }
  SUBCASE("scaled entries reach 0.95 in both blocks") {
    const BarDataset data = gen_bar_dataset(spec, 12);
    const EncodedDataset enc = encode_dataset(data.meshes, 0);
    double rmax = 0.0, smax = 0.0;
    for (const auto& f : enc.scaled) {
      rmax = std::max(rmax, f.leftCols<3>().cwiseAbs().maxCoeff());
      smax = std::max(smax, f.rightCols<6>().cwiseAbs().maxCoeff());
    }
    CHECK(rmax == doctest::Approx(0.95).epsilon(1e-14));
    CHECK(smax == doctest::Approx(0.95).epsilon(1e-14));
    for (std::size_t m = 0; m < enc.raw.size(); ++m) {
      CHECK((enc.scaler.inverse(enc.scaled[m]) - enc.raw[m]).cwiseAbs().maxCoeff() < 1e-13);
    }
    const FeatureScaler back = FeatureScaler::from_json(enc.scaler.to_json());
    CHECK(back.forward(enc.raw[3]) == enc.scaled[3]);
  }
}

TEST_CASE("reconstruction") {
  const BarSpec spec = fixtures::small_bar_spec();
  const Setup s(make_bar(spec));
  const Reconstructor solver(s.reference, s.weights, s.adj, 0);
  SUBCASE("identity transforms give the reference") {
    const std::vector<Mat3> ident(static_cast<std::size_t>(s.reference.vertex_count()), Mat3::Identity());
    CHECK((solver.solve(ident) - s.reference.positions).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("global rotation pivots about the anchor") {
    const Mat3 r = fixtures::axis_angle(Vec3(0.3, -1, 0.2), 1.1);
    const std::vector<Mat3> rot(static_cast<std::size_t>(s.reference.vertex_count()), r);
    const Vec3 a = s.reference.position(0);
    Positions expected = s.reference.positions;
    for (int v = 0; v < expected.rows(); ++v) {
      expected.row(v) = (a + r * (s.reference.position(v) - a)).transpose();
    }
    CHECK(vertex_rms(solver.solve(rot), expected) < 1e-8);
  }
  SUBCASE("encode then reconstruct a bent, bumped bar") {
    for (double deg : {35.0, 90.0, 120.0}) {
      const TriangleMesh shape = deform_bar(spec, {deg * pi / 180.0, 0.1});
      const FeatureMatrix raw = encode_shape(s.reference, shape, s.weights, s.adj);
      const Positions p = solver.solve_raw(raw);
      CHECK(vertex_rms(p, shape.positions) < 1e-6 * bounding_box_diagonal(shape));
    }
  }
  SUBCASE("edge energy is available and exact for affine maps") {
    const Reconstructor edge(s.reference, s.weights, s.adj, 0, ReconstructionEnergy::kEdge);
    CHECK(edge.energy() == ReconstructionEnergy::kEdge);
    const Mat3 a = Vec3(1.2, 0.9, 1.0).asDiagonal();
    const std::vector<Mat3> t(static_cast<std::size_t>(s.reference.vertex_count()), a);
    const Positions p = edge.solve(t);
    Positions expected = s.reference.positions;
    const Vec3 anchor = s.reference.position(0);
    for (int v = 0; v < expected.rows(); ++v) {
      expected.row(v) = (anchor + a * (s.reference.position(v) - anchor)).transpose();
    }
    CHECK(vertex_rms(p, expected) < 1e-9);
  }
  SUBCASE("disconnected meshes are rejected") {
    const TriangleMesh two = fixtures::make_mesh(
        {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}},
        {{0, 1, 2}, {3, 4, 5}});
    CHECK_THROWS_AS(Reconstructor(two, cotangent_weights(two), build_adjacency(two), 0), Error);
  }
}

TEST_CASE("feature cache round trip") {
  const BarSpec spec = fixtures::small_bar_spec();
  const BarDataset data = gen_bar_dataset(spec, 4);
  const EncodedDataset enc = encode_dataset(data.meshes, 0);
  FeatureCache cache{enc.raw, enc.scaler, 0, {"a", "b", "c", "d"}};
  const auto path = std::filesystem::temp_directory_path() / "meshmodes_cache.bin";
  write_feature_cache(path, cache);
  const FeatureCache back = read_feature_cache(path);
  REQUIRE(back.raw.size() == 4);
  for (int m = 0; m < 4; ++m) CHECK(back.raw[m] == cache.raw[m]);
  CHECK(back.names == cache.names);
  CHECK(back.scaler.forward(back.raw[2]) == enc.scaled[2]);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  CHECK(bytes.substr(0, 8) == "ACAPF01\n");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(read_feature_cache(path), DataError);
  std::filesystem::remove(path);
}
