#include "meshmodes/mesh.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>

namespace meshmodes {

void validate(const TriangleMesh& mesh) {
  const int n = mesh.vertex_count();
  for (int f = 0; f < mesh.face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int v = mesh.faces(f, c);
      if (v < 0 || v >= n) {
        throw DataError("face " + std::to_string(f) + " references vertex " +
                        std::to_string(v) + " outside [0, " +
                        std::to_string(n) + ")");
      }
    }
    const auto& t = mesh.faces.row(f);
    if (t(0) == t(1) || t(1) == t(2) || t(0) == t(2)) {
      throw DataError("degenerate face " + std::to_string(f));
    }
  }
  if (!mesh.positions.allFinite()) {
    throw DataError("mesh '" + mesh.name + "' has non-finite positions");
  }
}

bool same_connectivity(const TriangleMesh& a, const TriangleMesh& b) {
  return a.vertex_count() == b.vertex_count() && a.faces == b.faces;
}

TriangleMesh parse_obj(const std::string& text, const std::string& name) {
  std::vector<double> coords;
  std::vector<int> indices;
  std::vector<int> face_lines;

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw DataError((name.empty() ? std::string("obj") : name) + ":" +
                    std::to_string(line_no) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream tokens(line);
    std::string tag;
    if (!(tokens >> tag)) continue;

    if (tag == "v") {
      double xyz[3];
      for (double& c : xyz) {
        std::string tok;
        if (!(tokens >> tok)) fail("vertex record needs three coordinates");
        char* end = nullptr;
        c = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
          fail("bad coordinate '" + tok + "'");
        }
      }
      coords.insert(coords.end(), xyz, xyz + 3);
    } else if (tag == "f") {
      std::vector<int> face;
      std::string tok;
      while (tokens >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        char* end = nullptr;
        const long idx = std::strtol(head.c_str(), &end, 10);
        if (head.empty() || *end != '\0') fail("bad face index '" + tok + "'");
        if (idx == 0) fail("face index 0 is invalid in OBJ");
        const long vcount = static_cast<long>(coords.size() / 3);
        face.push_back(static_cast<int>(idx > 0 ? idx - 1 : vcount + idx));
      }
      if (face.size() != 3) {
        fail("non-triangular face with " + std::to_string(face.size()) +
             " vertices");
      }
      indices.insert(indices.end(), face.begin(), face.end());
      face_lines.push_back(line_no);
    }
  }

  TriangleMesh mesh;
  mesh.name = name;
  const int nv = static_cast<int>(coords.size() / 3);
  mesh.positions =
      Eigen::Map<const Positions>(coords.data(), nv, 3);
  if (nv == 0) fail("empty mesh");
  const int nf = static_cast<int>(indices.size() / 3);
  mesh.faces = Eigen::Map<const Faces>(indices.data(), nf, 3);

  for (int f = 0; f < nf; ++f) {
    for (int c = 0; c < 3; ++c) {
      const int v = mesh.faces(f, c);
      if (v < 0 || v >= nv) {
        line_no = face_lines[f];
        fail("face index " + std::to_string(v + 1) + " out of range (" +
             std::to_string(nv) + " vertices)");
      }
    }
  }
  validate(mesh);
  return mesh;
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_obj(buf.str(), path.string());
}

std::string format_obj(const TriangleMesh& mesh) {
  if (mesh.vertex_count() == 0) throw DataError("empty mesh");
  validate(mesh);
  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.vertex_count()) * 48 +
              static_cast<std::size_t>(mesh.face_count()) * 24);
  char buf[128];
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    std::snprintf(buf, sizeof(buf), "v %.9f %.9f %.9f\n", mesh.positions(v, 0),
                  mesh.positions(v, 1), mesh.positions(v, 2));
    out += buf;
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", mesh.faces(f, 0) + 1,
                  mesh.faces(f, 1) + 1, mesh.faces(f, 2) + 1);
    out += buf;
  }
  return out;
}

void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const std::string text = format_obj(mesh);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

Adjacency build_adjacency(const TriangleMesh& mesh) {
  validate(mesh);
  Adjacency adj;
  adj.neighbors.resize(mesh.vertex_count());
  for (int f = 0; f < mesh.face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = mesh.faces(f, c);
      const int b = mesh.faces(f, (c + 1) % 3);
      adj.neighbors[a].push_back(b);
      adj.neighbors[b].push_back(a);
    }
  }
  for (auto& nb : adj.neighbors) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  return adj;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> neighbor_mean_operator(
    const Adjacency& adj) {
  const int n = adj.vertex_count();
  std::vector<Eigen::Triplet<double>> entries;
  for (int i = 0; i < n; ++i) {
    const double w = adj.degree(i) > 0 ? 1.0 / adj.degree(i) : 0.0;
    for (int j : adj.neighbors[i]) entries.emplace_back(i, j, w);
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> m(n, n);
  m.setFromTriplets(entries.begin(), entries.end());
  return m;
}

bool is_connected(const Adjacency& adj) {
  const int n = adj.vertex_count();
  if (n == 0) return true;
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj.neighbors[v]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == n;
}

double CotanWeights::operator()(int i, int j) const {
  auto it = weights_.find(key(i, j));
  if (it == weights_.end()) {
    throw UsageError("no edge (" + std::to_string(i) + ", " +
                     std::to_string(j) + ")");
  }
  return it->second;
}

bool CotanWeights::contains(int i, int j) const {
  return weights_.count(key(i, j)) != 0;
}

void CotanWeights::set(int i, int j, double w) { weights_[key(i, j)] = w; }

CotanWeights cotangent_weights(const TriangleMesh& mesh) {
  validate(mesh);
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  for (int f = 0; f < mesh.face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int o = mesh.faces(f, c);
      const int a = mesh.faces(f, (c + 1) % 3);
      const int b = mesh.faces(f, (c + 2) % 3);
      const Vec3 u = mesh.position(a) - mesh.position(o);
      const Vec3 v = mesh.position(b) - mesh.position(o);
      const double cross = u.cross(v).norm();
      const double dot = u.dot(v);
      double cot;
      if (cross > 0.0) {
        cot = dot / cross;
      } else {
        cot = dot >= 0.0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
      }
      auto& slot = acc[a < b ? std::make_pair(a, b) : std::make_pair(b, a)];
      slot.first += cot;
      slot.second += 1;
    }
  }
  CotanWeights weights;
  for (const auto& [edge, value] : acc) {
    if (value.second > 2) {
      throw DataError("non-manifold edge (" + std::to_string(edge.first) +
                      ", " + std::to_string(edge.second) + ") shared by " +
                      std::to_string(value.second) + " faces");
    }
    double w = value.first;
    if (std::isnan(w)) w = CotanWeights::kMin;
    weights.set(edge.first, edge.second,
                std::clamp(w, CotanWeights::kMin, CotanWeights::kMax));
  }
  return weights;
}

Eigen::VectorXd geodesic_distances(const TriangleMesh& mesh, int source) {
  const Adjacency adj = build_adjacency(mesh);
  const int n = mesh.vertex_count();
  if (source < 0 || source >= n) {
    throw UsageError("geodesic source " + std::to_string(source) +
                     " out of range");
  }
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, inf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[source] = 0.0;
  queue.emplace(0.0, source);
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (int w : adj.neighbors[v]) {
      const double nd = d + (mesh.position(v) - mesh.position(w)).norm();
      if (nd < dist[w]) {
        dist[w] = nd;
        queue.emplace(nd, w);
      }
    }
  }
  for (int v = 0; v < n; ++v) {
    if (!std::isfinite(dist[v])) {
      throw DataError("vertex " + std::to_string(v) +
                      " is unreachable from vertex " + std::to_string(source));
    }
  }
  const double max = dist.maxCoeff();
  if (max > 0.0) dist /= max;
  return dist;
}

GeodesicCache::GeodesicCache(TriangleMesh reference)
    : reference_(std::move(reference)),
      fields_(static_cast<std::size_t>(reference_.vertex_count())) {}

const Eigen::VectorXd& GeodesicCache::from(int source) const {
  if (source < 0 || source >= vertex_count()) {
    throw UsageError("geodesic source " + std::to_string(source) +
                     " out of range");
  }
  std::lock_guard<std::mutex> lock(mutex_);
  auto& slot = fields_[static_cast<std::size_t>(source)];
  if (!slot) {
    slot = std::make_unique<const Eigen::VectorXd>(
        geodesic_distances(reference_, source));
  }
  return *slot;
}

double bounding_box_diagonal(const TriangleMesh& mesh) {
  if (mesh.vertex_count() == 0) return 0.0;
  return (mesh.positions.colwise().maxCoeff() -
          mesh.positions.colwise().minCoeff())
      .norm();
}

}  // namespace meshmodes
