#ifndef MESHMODES_ACAP_H_
#define MESHMODES_ACAP_H_

#include <Eigen/Core>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>

#include <filesystem>
#include <json.hpp>
#include <vector>

#include "meshmodes/mesh.h"
#include "meshmodes/types.h"

namespace meshmodes {

// ---------------------------------------------------------------------------
// Per-vertex deformation gradients and their factorization.

struct DeformGradientField {
  std::vector<Mat3> transforms;
};

/// Per-vertex T minimizing sum_j c_ij |(p_i - p_j) - T (p'_i - p'_j)|^2 over
/// the 1-ring, where p' is the reference. A 3x3 normal matrix whose smallest
/// eigenvalue is at most 1e-9 * trace/3 gets that amount added to its
/// diagonal before solving.
DeformGradientField deformation_gradients(const TriangleMesh& reference,
                                          const TriangleMesh& shape,
                                          const CotanWeights& weights,
                                          const Adjacency& adj);

template <typename Scalar>
struct Polar {
  Matrix3<Scalar> rotation;
  Matrix3<Scalar> stretch;
};

/// T = R S with R a proper rotation and S symmetric positive semi-definite.
/// Throws NumericalError when det(T) <= 0.
template <typename Scalar>
Polar<Scalar> polar_decompose(const Matrix3<Scalar>& t) {
  if (!(t.determinant() > Scalar(0))) {
    throw NumericalError("polar decomposition of a transform with det <= 0");
  }
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(t, Eigen::ComputeFullU |
                                               Eigen::ComputeFullV);
  const Matrix3<Scalar>& u = svd.matrixU();
  const Matrix3<Scalar>& v = svd.matrixV();
  Polar<Scalar> out;
  out.rotation = u * v.transpose();
  const Matrix3<Scalar> s = v * svd.singularValues().asDiagonal() * v.transpose();
  out.stretch = (s + s.transpose()) / Scalar(2);
  return out;
}

/// Axis-angle logarithm r = angle * axis.
struct RotationLog {
  Vec3 axis = Vec3::UnitX();
  double angle = 0.0;
  /// Angle within 1e-6 of pi: the axis sign is not determined by R.
  bool ambiguous = false;

  Vec3 vector() const { return angle * axis; }
};

/// Principal logarithm, angle in [0, pi].
RotationLog rotation_log(const Mat3& rotation);

/// Rodrigues' formula for exp(skew(r)).
Mat3 rotation_exp(const Vec3& r);

/// Breadth-first pass from vertex 0 choosing, per vertex, the representative
/// r + 2*pi*k*axis (k in [-2, 2], both axis signs) closest to the mean of the
/// already assigned neighbors.
std::vector<RotationLog> make_consistent(std::vector<RotationLog> logs,
                                         const Adjacency& adj);

// ---------------------------------------------------------------------------
// ACAP features.

/// s-block convention stored in caches and checkpoints: upper-triangular
/// entries of S itself.
inline constexpr int kRawStretchConvention = 0;

/// Unscaled V x 9 feature: columns 0..2 hold r, 3..8 hold
/// S11, S12, S13, S22, S23, S33.
FeatureMatrix pack_feature(const std::vector<RotationLog>& logs,
                           const std::vector<Mat3>& stretches);

/// T_i = exp(skew(r_i)) * S_i for every row of an unscaled feature.
std::vector<Mat3> unpack_transforms(const FeatureMatrix& raw);

/// Deviation of an unscaled feature row from the identity transform.
inline Vec9 identity_feature() {
  Vec9 f = Vec9::Zero();
  f(3) = f(6) = f(8) = 1.0;
  return f;
}

/// Linear per-block map of the deviation from the identity transform into
/// [-0.95, 0.95]. The reference shape therefore encodes to zero.
class FeatureScaler {
 public:
  static constexpr double kTarget = 0.95;

  struct Block {
    double min = 0.0;  ///< smallest observed deviation entry
    double max = 0.0;  ///< largest observed deviation entry
    double half_range() const;
  };

  static FeatureScaler fit(const std::vector<FeatureMatrix>& raw);

  FeatureMatrix forward(const FeatureMatrix& raw) const;
  FeatureMatrix inverse(const FeatureMatrix& scaled) const;
  /// Maps a difference of scaled features to a difference of raw features.
  FeatureMatrix inverse_delta(const FeatureMatrix& scaled_delta) const;

  const Block& rotation_block() const { return r_; }
  const Block& stretch_block() const { return s_; }

  nlohmann::json to_json() const;
  static FeatureScaler from_json(const nlohmann::json& j);

 private:
  Block r_;
  Block s_;
};

/// Unscaled ACAP feature of `shape` relative to `reference`.
FeatureMatrix encode_shape(const TriangleMesh& reference,
                           const TriangleMesh& shape,
                           const CotanWeights& weights, const Adjacency& adj);

struct EncodedDataset {
  std::vector<FeatureMatrix> raw;
  std::vector<FeatureMatrix> scaled;
  FeatureScaler scaler;
  int reference_index = 0;
};

EncodedDataset encode_dataset(const std::vector<TriangleMesh>& meshes,
                              int reference_index);

/// Energy minimized when turning per-vertex transforms back into positions.
enum class ReconstructionEnergy {
  /// sum_i |T_i(p) - T_i|_F^2 where T_i(p) is the deformation gradient of
  /// the candidate positions. Exact inverse of deformation_gradients().
  kGradientMatch,
  /// sum_i sum_j c_ij |(p_i - p_j) - T_i (p'_i - p'_j)|^2. Exact only for
  /// transforms that are affine on every 1-ring.
  kEdge,
};

/// Anchored global least-squares solve from per-vertex transforms back to
/// positions. The normal matrix depends only on the reference, so it is
/// factored once.
class Reconstructor {
 public:
  Reconstructor(const TriangleMesh& reference, const CotanWeights& weights,
                const Adjacency& adj, int anchor = 0,
                ReconstructionEnergy energy = ReconstructionEnergy::kGradientMatch);

  Positions solve(const std::vector<Mat3>& transforms) const;
  Positions solve_raw(const FeatureMatrix& raw) const;
  TriangleMesh reconstruct(const FeatureMatrix& scaled,
                           const FeatureScaler& scaler) const;

  int anchor() const { return anchor_; }
  ReconstructionEnergy energy() const { return energy_; }
  const TriangleMesh& reference() const { return reference_; }

 private:
  Eigen::MatrixXd edge_rhs(const std::vector<Mat3>& transforms) const;
  Eigen::MatrixXd gradient_rhs(const std::vector<Mat3>& transforms) const;

  TriangleMesh reference_;
  int anchor_;
  ReconstructionEnergy energy_;
  std::vector<std::vector<std::pair<int, double>>> edges_;
  // Gradient-match operator: 3 rows per vertex mapping one coordinate of
  // the positions to one row of the fitted transform.
  Eigen::SparseMatrix<double, Eigen::RowMajor> gradient_op_;
  std::vector<int> reduced_index_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

TriangleMesh reconstruct_positions(const FeatureMatrix& scaled,
                                   const FeatureScaler& scaler,
                                   const TriangleMesh& reference,
                                   const CotanWeights& weights,
                                   const Adjacency& adj, int anchor = 0);

// ---------------------------------------------------------------------------
// Feature cache: "ACAPF01\n", u32 N, V, mu, u8 convention, N*V*mu f64 raw
// features, then a JSON trailer {"scaler": ..., ...}.

struct FeatureCache {
  std::vector<FeatureMatrix> raw;
  FeatureScaler scaler;
  int reference_index = 0;
  std::vector<std::string> names;
};

void write_feature_cache(const std::filesystem::path& path,
                         const FeatureCache& cache);
FeatureCache read_feature_cache(const std::filesystem::path& path);

}  // namespace meshmodes

#endif  // MESHMODES_ACAP_H_
