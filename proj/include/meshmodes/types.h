#ifndef MESHMODES_TYPES_H_
#define MESHMODES_TYPES_H_

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace meshmodes {

/// Per-vertex ACAP feature width: 3 rotation-log entries + 6 symmetric entries.
inline constexpr int kFeatureDim = 9;

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec3 = Vector3<double>;
using Mat3 = Matrix3<double>;
using Mat9 = Eigen::Matrix<double, kFeatureDim, kFeatureDim>;
using Vec9 = Eigen::Matrix<double, kFeatureDim, 1>;

/// V x 9 per-vertex features, vertex-major so that `data()` is the
/// flattened (V*9) vector used by the fully connected layers.
template <typename Scalar>
using FeatureMatrixT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>;
using FeatureMatrix = FeatureMatrixT<double>;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, meshes, requests).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown: singular systems, reflections, non-finite losses.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Bad arguments or configuration values.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace meshmodes

#endif  // MESHMODES_TYPES_H_
