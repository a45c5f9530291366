#ifndef MESHMODES_DATAGEN_H_
#define MESHMODES_DATAGEN_H_

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "meshmodes/mesh.h"

namespace meshmodes {

/// Open tube along +x. Shapes bend in the x-y plane over a zone centered at
/// the midpoint and carry a radial Gaussian bump centered on one surface
/// vertex of the first (unbent) half.
struct BarSpec {
  int segments = 24;
  int ring_vertices = 12;
  double length = 4.0;
  double radius = 0.3;
  double bend_zone = 1.0;        ///< arc length of the curved section
  double max_bend_deg = 120.0;
  double max_bump = 0.15;
  double bump_sigma = 0.15;
  double bump_position = 0.2;    ///< fraction of the length
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static BarSpec from_json(const nlohmann::json& j);
};

struct BarShapeParams {
  double bend_rad = 0.0;
  double bump = 0.0;
};

struct BarDataset {
  std::vector<TriangleMesh> meshes;
  std::vector<BarShapeParams> params;
};

TriangleMesh make_bar(const BarSpec& spec);
TriangleMesh deform_bar(const BarSpec& spec, const BarShapeParams& params);

/// An animation-like sequence. Shape 0 is the undeformed bar; shape m >= 1
/// bends by max_bend * (1 - cos(2 pi m / 40)) / 2 and carries a bump of
/// max_bump * (1 - cos(2 pi m / 25)) / 2, so consecutive shapes are close and
/// every tenth shape spans both ranges. A nonzero seed shifts both phases.
BarDataset gen_bar_dataset(const BarSpec& spec, int count);

int bump_center_vertex(const BarSpec& spec);
/// Vertices within 3 sigma (Euclidean, on the reference) of the bump center.
std::vector<int> bump_support(const BarSpec& spec);
/// Vertices moved by a bend of max_bend_deg.
std::vector<int> bend_displaced_vertices(const BarSpec& spec);

/// Writes shape_XXX.obj files and params.json into `dir`.
void write_bar_dataset(const BarSpec& spec, const BarDataset& data,
                       const std::filesystem::path& dir);

/// Loads every *.obj in `dir`, sorted by file name.
std::vector<TriangleMesh> load_obj_directory(const std::filesystem::path& dir);

}  // namespace meshmodes

#endif  // MESHMODES_DATAGEN_H_
