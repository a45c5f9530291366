#ifndef MESHMODES_MESH_H_
#define MESHMODES_MESH_H_

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "meshmodes/types.h"

namespace meshmodes {

using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Triangle mesh with 0-based face indices. Meshes of one dataset share
/// `faces` and differ only in `positions`.
struct TriangleMesh {
  Positions positions;
  Faces faces;
  std::string name;

  int vertex_count() const { return static_cast<int>(positions.rows()); }
  int face_count() const { return static_cast<int>(faces.rows()); }
  Vec3 position(int v) const { return positions.row(v).transpose(); }
};

/// Throws DataError if a face index is out of range, a face is degenerate
/// or a position is not finite.
void validate(const TriangleMesh& mesh);

/// True when both meshes have identical face lists.
bool same_connectivity(const TriangleMesh& a, const TriangleMesh& b);

/// ASCII OBJ reader. Only `v` and `f` records are interpreted; `f` entries
/// may use the `a/b/c` form, of which only the position index is kept.
TriangleMesh load_obj(const std::filesystem::path& path);
TriangleMesh parse_obj(const std::string& text, const std::string& name = {});

/// Writes `v` records with nine digits after the decimal point and 1-based
/// `f` records.
void save_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
std::string format_obj(const TriangleMesh& mesh);

/// 1-ring neighborhoods, each sorted ascending.
struct Adjacency {
  std::vector<std::vector<int>> neighbors;

  int vertex_count() const { return static_cast<int>(neighbors.size()); }
  int degree(int v) const { return static_cast<int>(neighbors[v].size()); }
};

Adjacency build_adjacency(const TriangleMesh& mesh);

/// Row-normalized adjacency: (M x)_i = mean of x over the neighbors of i.
/// Isolated vertices get an empty row.
Eigen::SparseMatrix<double, Eigen::RowMajor> neighbor_mean_operator(
    const Adjacency& adj);

/// True if every vertex is reachable from vertex 0.
bool is_connected(const Adjacency& adj);

/// Undirected edge weights c_ij = cot(alpha_ij) + cot(beta_ij).
class CotanWeights {
 public:
  static constexpr double kMin = 1e-6;
  static constexpr double kMax = 1e6;

  double operator()(int i, int j) const;
  bool contains(int i, int j) const;
  std::size_t edge_count() const { return weights_.size(); }
  const std::map<std::pair<int, int>, double>& edges() const {
    return weights_;
  }

  void set(int i, int j, double w);

 private:
  static std::pair<int, int> key(int i, int j) {
    return i < j ? std::make_pair(i, j) : std::make_pair(j, i);
  }
  std::map<std::pair<int, int>, double> weights_;
};

/// Throws DataError for an edge shared by more than two faces.
CotanWeights cotangent_weights(const TriangleMesh& mesh);

/// Dijkstra distances over the edge graph from `source`, divided by the
/// largest distance so that the farthest vertex sits at 1.
Eigen::VectorXd geodesic_distances(const TriangleMesh& mesh, int source);

/// Lazily computed normalized distance fields on a fixed reference mesh.
/// Safe for concurrent readers.
class GeodesicCache {
 public:
  explicit GeodesicCache(TriangleMesh reference);

  const Eigen::VectorXd& from(int source) const;
  int vertex_count() const { return reference_.vertex_count(); }

 private:
  TriangleMesh reference_;
  mutable std::mutex mutex_;
  mutable std::vector<std::unique_ptr<const Eigen::VectorXd>> fields_;
};

/// Axis-aligned bounding box diagonal length.
double bounding_box_diagonal(const TriangleMesh& mesh);

}  // namespace meshmodes

#endif  // MESHMODES_MESH_H_
