#include "meshmodes/acap.h"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "meshmodes/binary_io.h"
#include "meshmodes/parallel.h"

namespace meshmodes {

namespace {

// B_i = sum_j c_ij e'_ij e'_ij^T over the reference 1-ring. When its
// smallest eigenvalue is at most 1e-9 trace/3 (near-coplanar ring) that
// amount is added to the diagonal.
Mat3 reference_normal(const TriangleMesh& reference, const CotanWeights& weights,
                      const Adjacency& adj, int i) {
  Mat3 normal = Mat3::Zero();
  for (int j : adj.neighbors[i]) {
    const Vec3 e = reference.position(i) - reference.position(j);
    normal += weights(i, j) * e * e.transpose();
  }
  const double trace = normal.trace();
  if (!(trace > 0.0)) {
    throw NumericalError("vertex " + std::to_string(i) + " has an empty 1-ring");
  }
  const double eps = 1e-9 * trace / 3.0;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(normal, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()(0) <= eps) normal.diagonal().array() += eps;
  return normal;
}

}  // namespace

DeformGradientField deformation_gradients(const TriangleMesh& reference,
                                          const TriangleMesh& shape,
                                          const CotanWeights& weights,
                                          const Adjacency& adj) {
  if (!same_connectivity(reference, shape)) {
    throw DataError("shape '" + shape.name +
                    "' does not share the reference connectivity");
  }
  const int n = reference.vertex_count();
  DeformGradientField field;
  field.transforms.resize(n);
  for (int i = 0; i < n; ++i) {
    Mat3 cross = Mat3::Zero();  // sum c e e'^T
    for (int j : adj.neighbors[i]) {
      const Vec3 e_ref = reference.position(i) - reference.position(j);
      const Vec3 e_def = shape.position(i) - shape.position(j);
      cross += weights(i, j) * e_def * e_ref.transpose();
    }
    const Mat3 normal = reference_normal(reference, weights, adj, i);
    Eigen::LLT<Mat3> llt(normal);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("singular deformation-gradient system at vertex " +
                           std::to_string(i));
    }
    // T * normal = cross, normal symmetric.
    field.transforms[i] = llt.solve(cross.transpose()).transpose();
    if (!field.transforms[i].allFinite()) {
      throw NumericalError("non-finite deformation gradient at vertex " +
                           std::to_string(i));
    }
  }
  return field;
}

RotationLog rotation_log(const Mat3& rotation) {
  const Vec3 v(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
               rotation(1, 0) - rotation(0, 1));
  const double s = 0.5 * v.norm();
  const double c = 0.5 * (rotation.trace() - 1.0);
  RotationLog out;
  out.angle = std::atan2(s, c);
  if (c >= 0.0) {
    if (s > 0.0) out.axis = v / (2.0 * s);
  } else {
    // Near pi the skew part vanishes; recover the axis from the symmetric
    // part, (R + R^T) / 2 = c I + (1 - c) w w^T.
    const Mat3 outer = (0.5 * (rotation + rotation.transpose()) -
                        c * Mat3::Identity()) /
                       (1.0 - c);
    int k;
    outer.diagonal().maxCoeff(&k);
    Vec3 axis = outer.col(k) / std::sqrt(std::max(outer(k, k), 1e-300));
    axis.normalize();
    if (axis.dot(v) < 0.0) axis = -axis;
    out.axis = axis;
  }
  out.ambiguous = std::numbers::pi - out.angle < 1e-6;
  return out;
}

Mat3 rotation_exp(const Vec3& r) {
  const double angle = r.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, r / angle).toRotationMatrix();
}

std::vector<RotationLog> make_consistent(std::vector<RotationLog> logs,
                                         const Adjacency& adj) {
  const int n = adj.vertex_count();
  if (static_cast<int>(logs.size()) != n) {
    throw UsageError("rotation count does not match adjacency");
  }
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::vector<char> assigned(n, 0);
  std::vector<char> queued(n, 0);
  std::deque<int> queue;

  for (int root = 0; root < n; ++root) {
    if (queued[root]) continue;
    queued[root] = 1;
    queue.push_back(root);
    bool first = true;
    while (!queue.empty()) {
      const int v = queue.front();
      queue.pop_front();
      if (!first) {
        Vec3 mean = Vec3::Zero();
        int count = 0;
        for (int w : adj.neighbors[v]) {
          if (assigned[w]) {
            mean += logs[w].vector();
            ++count;
          }
        }
        if (count > 0) {
          mean /= count;
          const RotationLog base = logs[v];
          double best = std::numeric_limits<double>::infinity();
          for (double sign : {1.0, -1.0}) {
            for (int k = -2; k <= 2; ++k) {
              const double angle = sign * base.angle + kTwoPi * k;
              const Vec3 axis = sign * base.axis;
              const double dist = (angle * axis - mean).norm();
              if (dist < best) {
                best = dist;
                logs[v].axis = angle < 0.0 ? Vec3(-axis) : axis;
                logs[v].angle = std::abs(angle);
              }
            }
          }
        }
      }
      first = false;
      assigned[v] = 1;
      for (int w : adj.neighbors[v]) {
        if (!queued[w]) {
          queued[w] = 1;
          queue.push_back(w);
        }
      }
    }
  }
  return logs;
}

FeatureMatrix pack_feature(const std::vector<RotationLog>& logs,
                           const std::vector<Mat3>& stretches) {
  const int n = static_cast<int>(logs.size());
  FeatureMatrix f(n, kFeatureDim);
  for (int i = 0; i < n; ++i) {
    const Mat3& s = stretches[i];
    f.row(i).head<3>() = logs[i].vector().transpose();
    f.row(i).tail<6>() << s(0, 0), s(0, 1), s(0, 2), s(1, 1), s(1, 2), s(2, 2);
  }
  return f;
}

std::vector<Mat3> unpack_transforms(const FeatureMatrix& raw) {
  std::vector<Mat3> out(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const auto row = raw.row(i);
    Mat3 s;
    s << row(3), row(4), row(5),
         row(4), row(6), row(7),
         row(5), row(7), row(8);
    out[i] = rotation_exp(row.head<3>().transpose()) * s;
  }
  return out;
}

double FeatureScaler::Block::half_range() const {
  return std::max(std::abs(min), std::abs(max));
}

namespace {

// Blocks whose deviation never exceeds this are left unscaled rather than
// blowing round-off up to the target range.
constexpr double kFlatBlock = 1e-9;

FeatureMatrix deviation(const FeatureMatrix& raw) {
  FeatureMatrix dev = raw;
  dev.rowwise() -= identity_feature().transpose();
  return dev;
}

double block_factor(const FeatureScaler::Block& b) {
  const double h = b.half_range();
  return h > kFlatBlock ? FeatureScaler::kTarget / h : 1.0;
}

}  // namespace

FeatureScaler FeatureScaler::fit(const std::vector<FeatureMatrix>& raw) {
  FeatureScaler sc;
  bool first = true;
  for (const auto& f : raw) {
    if (f.rows() == 0) continue;
    const FeatureMatrix dev = deviation(f);
    const double rmin = dev.leftCols<3>().minCoeff();
    const double rmax = dev.leftCols<3>().maxCoeff();
    const double smin = dev.rightCols<6>().minCoeff();
    const double smax = dev.rightCols<6>().maxCoeff();
    if (first) {
      sc.r_ = {rmin, rmax};
      sc.s_ = {smin, smax};
      first = false;
    } else {
      sc.r_.min = std::min(sc.r_.min, rmin);
      sc.r_.max = std::max(sc.r_.max, rmax);
      sc.s_.min = std::min(sc.s_.min, smin);
      sc.s_.max = std::max(sc.s_.max, smax);
    }
  }
  return sc;
}

FeatureMatrix FeatureScaler::forward(const FeatureMatrix& raw) const {
  FeatureMatrix out = deviation(raw);
  out.leftCols<3>() *= block_factor(r_);
  out.rightCols<6>() *= block_factor(s_);
  return out;
}

FeatureMatrix FeatureScaler::inverse_delta(
    const FeatureMatrix& scaled_delta) const {
  FeatureMatrix out = scaled_delta;
  out.leftCols<3>() /= block_factor(r_);
  out.rightCols<6>() /= block_factor(s_);
  return out;
}

FeatureMatrix FeatureScaler::inverse(const FeatureMatrix& scaled) const {
  FeatureMatrix out = inverse_delta(scaled);
  out.rowwise() += identity_feature().transpose();
  return out;
}

nlohmann::json FeatureScaler::to_json() const {
  return {{"target", kTarget},
          {"center", "identity"},
          {"r", {{"min", r_.min}, {"max", r_.max}}},
          {"s", {{"min", s_.min}, {"max", s_.max}}}};
}

FeatureScaler FeatureScaler::from_json(const nlohmann::json& j) {
  FeatureScaler sc;
  try {
    sc.r_ = {j.at("r").at("min").get<double>(), j.at("r").at("max").get<double>()};
    sc.s_ = {j.at("s").at("min").get<double>(), j.at("s").at("max").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad scaler record: ") + e.what());
  }
  return sc;
}

FeatureMatrix encode_shape(const TriangleMesh& reference,
                           const TriangleMesh& shape,
                           const CotanWeights& weights, const Adjacency& adj) {
  const DeformGradientField field =
      deformation_gradients(reference, shape, weights, adj);
  const int n = reference.vertex_count();
  std::vector<RotationLog> logs(n);
  std::vector<Mat3> stretches(n);
  for (int i = 0; i < n; ++i) {
    Polar<double> polar;
    try {
      polar = polar_decompose(field.transforms[i]);
    } catch (const NumericalError&) {
      throw NumericalError("shape '" + shape.name + "' vertex " +
                           std::to_string(i) +
                           ": deformation gradient is singular or reflected");
    }
    logs[i] = rotation_log(polar.rotation);
    stretches[i] = polar.stretch;
  }
  return pack_feature(make_consistent(std::move(logs), adj), stretches);
}

EncodedDataset encode_dataset(const std::vector<TriangleMesh>& meshes,
                              int reference_index) {
  if (meshes.size() < 2) throw DataError("encoding needs at least two shapes");
  if (reference_index < 0 ||
      reference_index >= static_cast<int>(meshes.size())) {
    throw UsageError("reference index out of range");
  }
  const TriangleMesh& reference = meshes[reference_index];
  for (const auto& m : meshes) {
    if (!same_connectivity(reference, m)) {
      throw DataError("shape '" + m.name +
                      "' does not share the reference connectivity");
    }
  }
  const Adjacency adj = build_adjacency(reference);
  const CotanWeights weights = cotangent_weights(reference);

  EncodedDataset out;
  out.reference_index = reference_index;
  out.raw.resize(meshes.size());
  parallel_for(meshes.size(), [&](std::size_t m) {
    out.raw[m] = encode_shape(reference, meshes[m], weights, adj);
  });
  out.scaler = FeatureScaler::fit(out.raw);
  out.scaled.reserve(meshes.size());
  for (const auto& f : out.raw) out.scaled.push_back(out.scaler.forward(f));
  return out;
}

Reconstructor::Reconstructor(const TriangleMesh& reference,
                             const CotanWeights& weights, const Adjacency& adj,
                             int anchor, ReconstructionEnergy energy)
    : reference_(reference), anchor_(anchor), energy_(energy) {
  const int n = reference.vertex_count();
  if (anchor < 0 || anchor >= n) throw UsageError("anchor out of range");
  if (!is_connected(adj)) {
    throw NumericalError(
        "reconstruction system is rank deficient: mesh is disconnected");
  }
  edges_.resize(n);
  reduced_index_.assign(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (i != anchor) reduced_index_[i] = next++;
    for (int j : adj.neighbors[i]) edges_[i].emplace_back(j, weights(i, j));
  }

  Eigen::SparseMatrix<double> system(n - 1, n - 1);
  if (energy == ReconstructionEnergy::kEdge) {
    std::vector<Eigen::Triplet<double>> entries;
    for (int i = 0; i < n; ++i) {
      if (i == anchor) continue;
      double diag = 0.0;
      for (const auto& [j, c] : edges_[i]) {
        diag += c;
        if (j != anchor) entries.emplace_back(reduced_index_[i], reduced_index_[j], -c);
      }
      entries.emplace_back(reduced_index_[i], reduced_index_[i], diag);
    }
    system.setFromTriplets(entries.begin(), entries.end());
  } else {
    // Row block i: B_i^{-1} sum_j c_ij (x_i - x_j) e'_ij.
    std::vector<Eigen::Triplet<double>> entries;
    for (int i = 0; i < n; ++i) {
      const Mat3 inv = reference_normal(reference, weights, adj, i).inverse();
      Vec3 self = Vec3::Zero();
      for (const auto& [j, c] : edges_[i]) {
        const Vec3 coeff =
            inv * (c * (reference.position(i) - reference.position(j)));
        self += coeff;
        for (int a = 0; a < 3; ++a) entries.emplace_back(3 * i + a, j, -coeff(a));
      }
      for (int a = 0; a < 3; ++a) entries.emplace_back(3 * i + a, i, self(a));
    }
    gradient_op_.resize(3 * n, n);
    gradient_op_.setFromTriplets(entries.begin(), entries.end());
    Eigen::SparseMatrix<double> normal = gradient_op_.transpose() * gradient_op_;
    std::vector<Eigen::Triplet<double>> reduced;
    for (int k = 0; k < normal.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(normal, k); it; ++it) {
        const int r = reduced_index_[it.row()];
        const int c = reduced_index_[it.col()];
        if (r >= 0 && c >= 0) reduced.emplace_back(r, c, it.value());
      }
    }
    system.setFromTriplets(reduced.begin(), reduced.end());
  }
  solver_.compute(system);
  if (solver_.info() != Eigen::Success) {
    throw NumericalError("reconstruction system factorization failed");
  }
}

Eigen::MatrixXd Reconstructor::edge_rhs(
    const std::vector<Mat3>& transforms) const {
  const int n = reference_.vertex_count();
  const Vec3 fixed = reference_.position(anchor_);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n - 1, 3);
  for (int i = 0; i < n; ++i) {
    if (i == anchor_) continue;
    Vec3 b = Vec3::Zero();
    for (const auto& [j, c] : edges_[i]) {
      const Vec3 e = reference_.position(i) - reference_.position(j);
      b += 0.5 * c * ((transforms[i] + transforms[j]) * e);
      if (j == anchor_) b += c * fixed;
    }
    rhs.row(reduced_index_[i]) = b.transpose();
  }
  return rhs;
}

Eigen::MatrixXd Reconstructor::gradient_rhs(
    const std::vector<Mat3>& transforms) const {
  const int n = reference_.vertex_count();
  // Target: row a of T_i for coordinate a, stacked per vertex.
  Eigen::MatrixXd target(3 * n, 3);
  for (int i = 0; i < n; ++i) {
    target.middleRows<3>(3 * i) = transforms[i].transpose();
  }
  // Move the anchor column to the right-hand side.
  const Vec3 fixed = reference_.position(anchor_);
  for (Eigen::Index r = 0; r < gradient_op_.outerSize(); ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(gradient_op_, r);
         it; ++it) {
      if (it.col() == anchor_) target.row(r) -= it.value() * fixed.transpose();
    }
  }
  const Eigen::MatrixXd full = gradient_op_.transpose() * target;
  Eigen::MatrixXd rhs(n - 1, 3);
  for (int i = 0; i < n; ++i) {
    if (i != anchor_) rhs.row(reduced_index_[i]) = full.row(i);
  }
  return rhs;
}

Positions Reconstructor::solve(const std::vector<Mat3>& transforms) const {
  const int n = reference_.vertex_count();
  if (static_cast<int>(transforms.size()) != n) {
    throw UsageError("transform count does not match the reference");
  }
  const Eigen::MatrixXd rhs = energy_ == ReconstructionEnergy::kEdge
                                  ? edge_rhs(transforms)
                                  : gradient_rhs(transforms);
  const Eigen::MatrixXd x = solver_.solve(rhs);
  if (solver_.info() != Eigen::Success || !x.allFinite()) {
    throw NumericalError("reconstruction solve failed");
  }
  Positions out(n, 3);
  for (int i = 0; i < n; ++i) {
    if (i == anchor_) {
      out.row(i) = reference_.position(anchor_).transpose();
    } else {
      out.row(i) = x.row(reduced_index_[i]);
    }
  }
  return out;
}

Positions Reconstructor::solve_raw(const FeatureMatrix& raw) const {
  return solve(unpack_transforms(raw));
}

TriangleMesh Reconstructor::reconstruct(const FeatureMatrix& scaled,
                                        const FeatureScaler& scaler) const {
  TriangleMesh out;
  out.faces = reference_.faces;
  out.positions = solve_raw(scaler.inverse(scaled));
  return out;
}

TriangleMesh reconstruct_positions(const FeatureMatrix& scaled,
                                   const FeatureScaler& scaler,
                                   const TriangleMesh& reference,
                                   const CotanWeights& weights,
                                   const Adjacency& adj, int anchor) {
  return Reconstructor(reference, weights, adj, anchor).reconstruct(scaled, scaler);
}

namespace {
constexpr char kCacheMagic[] = "ACAPF01\n";
}

void write_feature_cache(const std::filesystem::path& path,
                         const FeatureCache& cache) {
  std::string out(kCacheMagic, 8);
  const auto n = static_cast<std::uint32_t>(cache.raw.size());
  const auto v =
      static_cast<std::uint32_t>(cache.raw.empty() ? 0 : cache.raw[0].rows());
  binary::put_u32(out, n);
  binary::put_u32(out, v);
  binary::put_u32(out, kFeatureDim);
  out.push_back(static_cast<char>(kRawStretchConvention));
  for (const auto& f : cache.raw) {
    if (f.rows() != v) throw UsageError("feature row counts differ");
    binary::put_f64s(out, f.data(), static_cast<std::size_t>(f.size()));
  }
  nlohmann::json trailer = {{"scaler", cache.scaler.to_json()},
                            {"reference_index", cache.reference_index},
                            {"names", cache.names}};
  out += trailer.dump();
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw DataError("write failed for " + path.string());
}

FeatureCache read_feature_cache(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << file.rdbuf();
  const std::string data = buf.str();
  binary::Reader in(data);
  if (in.take(8) != std::string_view(kCacheMagic, 8)) {
    throw DataError(path.string() + ": not an ACAP feature cache");
  }
  const std::uint32_t n = in.u32();
  const std::uint32_t v = in.u32();
  const std::uint32_t mu = in.u32();
  if (mu != kFeatureDim) throw DataError("unsupported feature width");
  if (in.u8() != kRawStretchConvention) {
    throw DataError("unsupported s-block convention");
  }
  FeatureCache cache;
  cache.raw.resize(n);
  for (auto& f : cache.raw) {
    f.resize(v, kFeatureDim);
    in.f64s(f.data(), static_cast<std::size_t>(f.size()));
  }
  try {
    const auto trailer = nlohmann::json::parse(in.rest());
    cache.scaler = FeatureScaler::from_json(trailer.at("scaler"));
    cache.reference_index = trailer.value("reference_index", 0);
    cache.names = trailer.value("names", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad cache trailer: " + e.what());
  }
  return cache;
}

}  // namespace meshmodes
