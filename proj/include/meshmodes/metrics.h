#ifndef MESHMODES_METRICS_H_
#define MESHMODES_METRICS_H_

#include <json.hpp>
#include <string>
#include <vector>

#include "meshmodes/mesh.h"
#include "meshmodes/types.h"

namespace meshmodes {

/// Similarity transform taking a ground-truth mesh into the unit ball:
/// translate its centroid to the origin, divide by its largest radius.
struct UnitBall {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  static UnitBall of(const TriangleMesh& ground);
  Positions apply(const Positions& p) const;
};

/// Normalizes each ground/recon pair with the ground mesh's unit-ball map.
void align_to_unit_ball(std::vector<TriangleMesh>& ground,
                        std::vector<TriangleMesh>& recon);

/// sqrt(mean over all shapes and vertices of |p - q|^2) * 1e3. Inputs are
/// expected to be aligned already.
double e_rms(const std::vector<TriangleMesh>& ground,
             const std::vector<TriangleMesh>& recon);
std::vector<double> e_rms_per_shape(const std::vector<TriangleMesh>& ground,
                                    const std::vector<TriangleMesh>& recon);

struct StedParts {
  double spatial = 0.0;   ///< RMS relative edge-length error
  double temporal = 0.0;  ///< RMS difference of frame-to-frame displacements
  double total() const { return spatial + temporal; }
};

/// Two-term simplification of the spatio-temporal edge difference.
StedParts sted_simplified(const std::vector<TriangleMesh>& ground,
                          const std::vector<TriangleMesh>& recon);

/// max_i |X_i - Y_i|_F^2 / |X_i|_F^2. Throws DataError on a zero-norm X_i.
double percentage_error(const std::vector<FeatureMatrix>& x,
                        const std::vector<FeatureMatrix>& y);

struct EvalReport {
  std::vector<std::string> names;
  std::vector<double> per_shape_e_rms;
  double e_rms = 0.0;
  StedParts sted;
  double percentage = 0.0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

}  // namespace meshmodes

#endif  // MESHMODES_METRICS_H_
