#ifndef MESHMODES_TESTS_FIXTURES_H_
#define MESHMODES_TESTS_FIXTURES_H_

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "meshmodes/datagen.h"
#include "meshmodes/editing.h"
#include "meshmodes/mesh.h"
#include "meshmodes/acap.h"
#include "meshmodes/pipeline.h"
#include "meshmodes/stacked.h"

namespace fixtures {

using namespace meshmodes;

inline TriangleMesh make_mesh(std::initializer_list<std::array<double, 3>> verts,
                              std::initializer_list<std::array<int, 3>> faces) {
  TriangleMesh m;
  m.positions.resize(static_cast<Eigen::Index>(verts.size()), 3);
  int i = 0;
  for (const auto& v : verts) {
    m.positions.row(i++) << v[0], v[1], v[2];
  }
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  i = 0;
  for (const auto& f : faces) {
    m.faces.row(i++) << f[0], f[1], f[2];
  }
  return m;
}

/// Unit cube, 8 vertices, 12 outward-facing triangles.
inline TriangleMesh cube() {
  return make_mesh({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}},
                   {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7},
                    {0, 1, 5}, {0, 5, 4}, {2, 3, 7}, {2, 7, 6},
                    {1, 2, 6}, {1, 6, 5}, {0, 4, 7}, {0, 7, 3}});
}

inline TriangleMesh tetrahedron() {
  return make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}},
                   {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}});
}

/// Small open tube: fast to encode and train.
inline BarSpec small_bar_spec() {
  BarSpec s;
  s.segments = 10;
  s.ring_vertices = 6;
  return s;
}

inline std::string obj_text_cube() { return format_obj(cube()); }

inline Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline FeatureMatrix random_features(int rows, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  FeatureMatrix x(rows, kFeatureDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

/// Small two-level model trained once per test process: 30-shape small bar
/// dataset, every third shape for training, K_z = [4, 3].
struct TrainedFixture {
  BarSpec spec;
  BarDataset data;
  EncodedDataset encoded;
  std::vector<FeatureMatrix> raw_train;
  StackedModel model;
};

inline const TrainedFixture& trained() {
  static const TrainedFixture f = [] {
    TrainedFixture t;
    t.spec = small_bar_spec();
    t.data = gen_bar_dataset(t.spec, 30);
    t.encoded = encode_dataset(t.data.meshes, 0);
    for (int i = 0; i < 30; i += 3) t.raw_train.push_back(t.encoded.raw[i]);
    TrainConfig cfg;
    cfg.kz0 = 4;
    cfg.kz1 = 3;
    cfg.epochs = 600;
    t.model = train_model(t.data.meshes[0], t.raw_train, cfg);
    return t;
  }();
  return f;
}

/// Fit against the shape decoded from a unit one-hot latent, every vertex
/// but the anchor pinned to its decoded position.
struct DominanceResult {
  int latent = 0;
  double z_k = 0.0;
  double largest_other = 0.0;
  double residual = 0.0;
  double ratio() const { return std::abs(z_k) / largest_other; }
};

inline DominanceResult realizable_fit(const ModelRuntime& rt, const ComponentInfo& c) {
  const TriangleMesh& ref = rt.geometry().reference;
  const Positions target = apply_weights(rt, {{c.level, c.ae, c.index, 1.0}}).positions;
  std::vector<ControlConstraint> cons;
  for (int v = 0; v < ref.vertex_count(); ++v) {
    if (v != rt.model().anchor) cons.push_back({v, target.row(v).transpose(), 1.0});
  }
  const EditSolution s = fit_latents(rt, cons);
  const LatentLayout layout = LatentLayout::of(rt);
  DominanceResult out;
  out.latent = layout.offset(c.level, c.ae, c.index);
  out.z_k = s.latents(out.latent);
  for (int i = 0; i < layout.size(); ++i) {
    if (i != out.latent) out.largest_other = std::max(out.largest_other, std::abs(s.latents(i)));
  }
  out.residual = s.residual;
  return out;
}

/// Kept component of `level` with the largest strength.
inline const ComponentInfo& strongest_kept(const StackedModel& model, int level) {
  const ComponentInfo* best = nullptr;
  for (const auto& c : model.components) {
    if (c.level == level && c.kept && (!best || c.strength > best->strength)) best = &c;
  }
  if (!best) throw std::runtime_error("no kept component on level " + std::to_string(level));
  return *best;
}

}  // namespace fixtures

#endif  // MESHMODES_TESTS_FIXTURES_H_
