#include "meshmodes/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <utility>

namespace meshmodes {

namespace {

void check_pairs(const std::vector<TriangleMesh>& ground,
                 const std::vector<TriangleMesh>& recon) {
  if (ground.size() != recon.size()) {
    throw DataError("ground and reconstruction counts differ (" +
                    std::to_string(ground.size()) + " vs " +
                    std::to_string(recon.size()) + ")");
  }
  for (std::size_t s = 0; s < ground.size(); ++s) {
    if (ground[s].vertex_count() != recon[s].vertex_count()) {
      throw DataError("shape " + std::to_string(s) + " vertex counts differ");
    }
  }
}

std::vector<std::pair<int, int>> unique_edges(const TriangleMesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (int f = 0; f < mesh.face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = mesh.faces(f, c);
      const int b = mesh.faces(f, (c + 1) % 3);
      edges.insert(std::minmax(a, b));
    }
  }
  return {edges.begin(), edges.end()};
}

}  // namespace

UnitBall UnitBall::of(const TriangleMesh& ground) {
  UnitBall u;
  if (ground.vertex_count() == 0) return u;
  u.center = ground.positions.colwise().mean().transpose();
  const double radius =
      (ground.positions.rowwise() - u.center.transpose()).rowwise().norm().maxCoeff();
  u.scale = radius > 0.0 ? 1.0 / radius : 1.0;
  return u;
}

Positions UnitBall::apply(const Positions& p) const {
  return (p.rowwise() - center.transpose()) * scale;
}

void align_to_unit_ball(std::vector<TriangleMesh>& ground,
                        std::vector<TriangleMesh>& recon) {
  check_pairs(ground, recon);
  for (std::size_t s = 0; s < ground.size(); ++s) {
    const UnitBall u = UnitBall::of(ground[s]);
    ground[s].positions = u.apply(ground[s].positions);
    recon[s].positions = u.apply(recon[s].positions);
  }
}

std::vector<double> e_rms_per_shape(const std::vector<TriangleMesh>& ground,
                                    const std::vector<TriangleMesh>& recon) {
  check_pairs(ground, recon);
  std::vector<double> out;
  for (std::size_t s = 0; s < ground.size(); ++s) {
    const int v = ground[s].vertex_count();
    const double se = (ground[s].positions - recon[s].positions).squaredNorm();
    out.push_back(v > 0 ? std::sqrt(se / v) * 1e3 : 0.0);
  }
  return out;
}

double e_rms(const std::vector<TriangleMesh>& ground,
             const std::vector<TriangleMesh>& recon) {
  check_pairs(ground, recon);
  double se = 0.0;
  long count = 0;
  for (std::size_t s = 0; s < ground.size(); ++s) {
    se += (ground[s].positions - recon[s].positions).squaredNorm();
    count += ground[s].vertex_count();
  }
  return count > 0 ? std::sqrt(se / static_cast<double>(count)) * 1e3 : 0.0;
}

StedParts sted_simplified(const std::vector<TriangleMesh>& ground,
                          const std::vector<TriangleMesh>& recon) {
  check_pairs(ground, recon);
  StedParts out;
  if (ground.empty()) return out;
  const auto edges = unique_edges(ground[0]);

  double spatial = 0.0;
  long spatial_count = 0;
  for (std::size_t s = 0; s < ground.size(); ++s) {
    for (const auto& [a, b] : edges) {
      const double lg = (ground[s].position(a) - ground[s].position(b)).norm();
      const double lr = (recon[s].position(a) - recon[s].position(b)).norm();
      if (!(lg > 0.0)) throw DataError("zero-length edge in ground truth");
      const double rel = (lr - lg) / lg;
      spatial += rel * rel;
      ++spatial_count;
    }
  }
  if (spatial_count > 0) out.spatial = std::sqrt(spatial / spatial_count);

  double temporal = 0.0;
  long temporal_count = 0;
  for (std::size_t s = 1; s < ground.size(); ++s) {
    const Positions dg = ground[s].positions - ground[s - 1].positions;
    const Positions dr = recon[s].positions - recon[s - 1].positions;
    temporal += (dr - dg).squaredNorm();
    temporal_count += ground[s].vertex_count();
  }
  if (temporal_count > 0) out.temporal = std::sqrt(temporal / temporal_count);
  return out;
}

double percentage_error(const std::vector<FeatureMatrix>& x,
                        const std::vector<FeatureMatrix>& y) {
  if (x.size() != y.size()) throw DataError("feature counts differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != y[i].rows()) throw DataError("feature sizes differ");
    const double denom = x[i].squaredNorm();
    if (!(denom > 0.0)) {
      throw DataError("shape " + std::to_string(i) +
                      " has a zero-norm ground-truth feature");
    }
    worst = std::max(worst, (x[i] - y[i]).squaredNorm() / denom);
  }
  return worst;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json shapes = nlohmann::json::array();
  for (std::size_t i = 0; i < per_shape_e_rms.size(); ++i) {
    shapes.push_back({{"name", i < names.size() ? names[i] : std::to_string(i)},
                      {"e_rms", per_shape_e_rms[i]}});
  }
  return {{"e_rms", e_rms},
          {"sted_simplified", sted.total()},
          {"sted_simplified_spatial", sted.spatial},
          {"sted_simplified_temporal", sted.temporal},
          {"percentage_error", percentage},
          {"shapes", shapes}};
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[512];
  std::snprintf(line, sizeof(line), "%-24s %14s\n", "shape", "e_rms (x1e3)");
  out += line;
  for (std::size_t i = 0; i < per_shape_e_rms.size(); ++i) {
    const std::string name = i < names.size() ? names[i] : std::to_string(i);
    std::snprintf(line, sizeof(line), "%-24s %14.6f\n", name.c_str(),
                  per_shape_e_rms[i]);
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "\n%-24s %14.6f\n%-24s %14.6f\n%-24s %14.6f\n%-24s %14.6f\n"
                "%-24s %14.6e\n",
                "e_rms (pooled)", e_rms, "sted_simplified", sted.total(),
                "  spatial", sted.spatial, "  temporal", sted.temporal,
                "percentage_error", percentage);
  out += line;
  return out;
}

}  // namespace meshmodes
