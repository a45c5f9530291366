#include "meshmodes/datagen.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

namespace meshmodes {

namespace {

// Frames per cycle of the bend and bump schedules.
constexpr double kBendPeriod = 40.0;
constexpr double kBumpPeriod = 25.0;

// Raised cosine in [0, 1], zero at phase 0.
double cycle(double frame, double period, double phase) {
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (frame / period + phase)));
}

Vec3 bend_point(const BarSpec& spec, double angle, const Vec3& p) {
  if (angle == 0.0) return p;
  const double x0 = 0.5 * (spec.length - spec.bend_zone);
  const double x1 = x0 + spec.bend_zone;
  if (p.x() <= x0) return p;
  const double rho = spec.bend_zone / angle;
  const double phi = p.x() >= x1 ? angle : angle * (p.x() - x0) / spec.bend_zone;
  const double arm = rho - p.y();
  Vec3 out(x0 + arm * std::sin(phi), rho - arm * std::cos(phi), p.z());
  if (p.x() > x1) {
    const double t = p.x() - x1;
    out.x() += t * std::cos(angle);
    out.y() += t * std::sin(angle);
  }
  return out;
}

}  // namespace

void BarSpec::validate() const {
  if (ring_vertices < 3) throw UsageError("bar needs at least 3 ring vertices");
  if (segments < 1) throw UsageError("bar needs at least one segment");
  if (!(length > 0.0 && radius > 0.0 && bump_sigma > 0.0)) {
    throw UsageError("bar dimensions must be positive");
  }
  if (!(bend_zone > 0.0 && bend_zone < length)) {
    throw UsageError("bend zone must lie inside the bar");
  }
  if (max_bend_deg < 0.0 || max_bump < 0.0) {
    throw UsageError("deformation ranges must be non-negative");
  }
  if (!(bump_position >= 0.0 && bump_position <= 1.0)) {
    throw UsageError("bump position must be a fraction of the length");
  }
}

nlohmann::json BarSpec::to_json() const {
  return {{"segments", segments},         {"ring_vertices", ring_vertices},
          {"length", length},             {"radius", radius},
          {"bend_zone", bend_zone},       {"max_bend_deg", max_bend_deg},
          {"max_bump", max_bump},         {"bump_sigma", bump_sigma},
          {"bump_position", bump_position}, {"seed", seed}};
}

BarSpec BarSpec::from_json(const nlohmann::json& j) {
  BarSpec s;
  s.segments = j.value("segments", s.segments);
  s.ring_vertices = j.value("ring_vertices", s.ring_vertices);
  s.length = j.value("length", s.length);
  s.radius = j.value("radius", s.radius);
  s.bend_zone = j.value("bend_zone", s.bend_zone);
  s.max_bend_deg = j.value("max_bend_deg", s.max_bend_deg);
  s.max_bump = j.value("max_bump", s.max_bump);
  s.bump_sigma = j.value("bump_sigma", s.bump_sigma);
  s.bump_position = j.value("bump_position", s.bump_position);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

TriangleMesh make_bar(const BarSpec& spec) {
  spec.validate();
  const int rings = spec.segments + 1;
  const int n = spec.ring_vertices;
  TriangleMesh mesh;
  mesh.name = "bar";
  mesh.positions.resize(rings * n, 3);
  for (int k = 0; k < rings; ++k) {
    const double x = spec.length * k / spec.segments;
    for (int j = 0; j < n; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / n;
      mesh.positions.row(k * n + j) << x, spec.radius * std::cos(phi),
          spec.radius * std::sin(phi);
    }
  }
  mesh.faces.resize(2 * spec.segments * n, 3);
  int f = 0;
  for (int k = 0; k < spec.segments; ++k) {
    for (int j = 0; j < n; ++j) {
      const int a = k * n + j;
      const int b = k * n + (j + 1) % n;
      const int c = (k + 1) * n + (j + 1) % n;
      const int d = (k + 1) * n + j;
      mesh.faces.row(f++) << a, b, c;
      mesh.faces.row(f++) << a, c, d;
    }
  }
  return mesh;
}

int bump_center_vertex(const BarSpec& spec) {
  const int ring =
      static_cast<int>(std::lround(spec.bump_position * spec.segments));
  return ring * spec.ring_vertices + spec.ring_vertices / 4;
}

TriangleMesh deform_bar(const BarSpec& spec, const BarShapeParams& params) {
  TriangleMesh mesh = make_bar(spec);
  const Vec3 center = mesh.position(bump_center_vertex(spec));
  const double cutoff = 3.0 * spec.bump_sigma;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    Vec3 p = mesh.position(v);
    const double dist = (p - center).norm();
    if (params.bump != 0.0 && dist <= cutoff) {
      const Vec3 radial = Vec3(0.0, p.y(), p.z()).normalized();
      p += params.bump *
           std::exp(-dist * dist / (2.0 * spec.bump_sigma * spec.bump_sigma)) *
           radial;
    }
    mesh.positions.row(v) = bend_point(spec, params.bend_rad, p).transpose();
  }
  return mesh;
}

BarDataset gen_bar_dataset(const BarSpec& spec, int count) {
  spec.validate();
  if (count < 2) throw UsageError("a dataset needs at least two shapes");
  double phase_a = 0.0;
  double phase_b = 0.0;
  if (spec.seed != 0) {
    std::mt19937_64 rng(spec.seed);
    phase_a = std::generate_canonical<double, 53>(rng);
    phase_b = std::generate_canonical<double, 53>(rng);
  }
  const double max_bend = spec.max_bend_deg * std::numbers::pi / 180.0;
  BarDataset data;
  for (int m = 0; m < count; ++m) {
    BarShapeParams p;
    if (m > 0) {
      p.bend_rad = max_bend * cycle(m, kBendPeriod, phase_a);
      p.bump = spec.max_bump * cycle(m, kBumpPeriod, phase_b);
    }
    TriangleMesh mesh = deform_bar(spec, p);
    char name[32];
    std::snprintf(name, sizeof(name), "shape_%03d", m);
    mesh.name = name;
    data.meshes.push_back(std::move(mesh));
    data.params.push_back(p);
  }
  return data;
}

std::vector<int> bump_support(const BarSpec& spec) {
  const TriangleMesh bar = make_bar(spec);
  const Vec3 center = bar.position(bump_center_vertex(spec));
  std::vector<int> out;
  for (int v = 0; v < bar.vertex_count(); ++v) {
    if ((bar.position(v) - center).norm() <= 3.0 * spec.bump_sigma) {
      out.push_back(v);
    }
  }
  return out;
}

std::vector<int> bend_displaced_vertices(const BarSpec& spec) {
  const TriangleMesh bar = make_bar(spec);
  const TriangleMesh bent = deform_bar(
      spec, {spec.max_bend_deg * std::numbers::pi / 180.0, 0.0});
  std::vector<int> out;
  const double tol = 1e-9 * bounding_box_diagonal(bar);
  for (int v = 0; v < bar.vertex_count(); ++v) {
    if ((bar.position(v) - bent.position(v)).norm() > tol) out.push_back(v);
  }
  return out;
}

void write_bar_dataset(const BarSpec& spec, const BarDataset& data,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t m = 0; m < data.meshes.size(); ++m) {
    save_obj(data.meshes[m], dir / (data.meshes[m].name + ".obj"));
    table.push_back({{"name", data.meshes[m].name},
                     {"bend_rad", data.params[m].bend_rad},
                     {"bend_deg", data.params[m].bend_rad * 180.0 / std::numbers::pi},
                     {"bump", data.params[m].bump}});
  }
  nlohmann::json doc = {{"spec", spec.to_json()},
                        {"shapes", table},
                        {"bump_center", bump_center_vertex(spec)},
                        {"bump_support", bump_support(spec)}};
  std::ofstream out(dir / "params.json");
  if (!out) throw DataError("cannot write params.json in " + dir.string());
  out << doc.dump(2) << "\n";
}

std::vector<TriangleMesh> load_obj_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError(dir.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".obj") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<TriangleMesh> meshes;
  for (const auto& f : files) {
    TriangleMesh m = load_obj(f);
    m.name = f.stem().string();
    meshes.push_back(std::move(m));
  }
  if (meshes.empty()) throw DataError("no .obj files in " + dir.string());
  return meshes;
}

}  // namespace meshmodes
