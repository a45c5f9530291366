#ifndef MESHMODES_EDITING_H_
#define MESHMODES_EDITING_H_

#include <json.hpp>
#include <filesystem>
#include <vector>

#include "meshmodes/stacked.h"

namespace meshmodes {

/// One latent coordinate: level 1 uses ae = 0; level 2 uses ae = k for the
/// second-level block attached to first-level component k.
struct LatentWeight {
  int level = 1;
  int ae = 0;
  int index = 0;
  double value = 0.0;
};

/// Concatenated latent vector: first level, then each second-level block.
struct LatentLayout {
  int kz0 = 0;
  int kz1 = 0;
  int second_blocks = 0;

  static LatentLayout of(const ModelRuntime& runtime);
  int size() const { return kz0 + second_blocks * kz1; }
  /// Position of (level, ae, index); throws UsageError when out of range.
  int offset(int level, int ae, int index) const;
  LatentWeight describe(int flat) const;
};

/// Scaled feature decoded from a full latent vector: sum over blocks of the
/// decoder output minus its zero-latent output.
FeatureMatrix decode_latents(const ModelRuntime& runtime,
                             const Eigen::VectorXd& latents);

/// Sparse weights to a full latent vector; unset entries are 0, later
/// entries overwrite earlier ones.
Eigen::VectorXd assemble_latents(const ModelRuntime& runtime,
                                 const std::vector<LatentWeight>& weights);

/// Decodes the weights, sums levels, unscales and reconstructs positions.
TriangleMesh apply_weights(const ModelRuntime& runtime,
                           const std::vector<LatentWeight>& weights);

struct ControlConstraint {
  int vertex = 0;
  Vec3 target = Vec3::Zero();
  double weight = 1.0;
};

std::vector<ControlConstraint> constraints_from_json(const nlohmann::json& j,
                                                     int vertex_count);
std::vector<ControlConstraint> load_constraints(const std::filesystem::path& path,
                                                int vertex_count);

struct FitOptions {
  double regularization = 1e-3;
  double fd_step = 1e-4;
  int max_iterations = 200;
  double min_relative_improvement = 1e-6;
};

struct EditSolution {
  Eigen::VectorXd latents;
  Eigen::VectorXd z0;
  std::vector<Eigen::VectorXd> z_second;
  TriangleMesh mesh;
  /// sqrt(mean over constraints of |P_v - target|^2) at the final iterate.
  double residual = 0.0;
  int iterations = 0;
  /// Objective after each accepted iteration, starting with z = 0.
  std::vector<double> objective;
  /// Set when the objective became non-finite; the last finite iterate is
  /// returned.
  bool aborted = false;
};

/// Minimizes sum_c w_c |P_{v_c}(z) - t_c|^2 + rho |z|^2 from z = 0 with
/// Levenberg-Marquardt steps on a forward-difference Jacobian. Only strict
/// decreases are accepted, so `objective` is decreasing. If the
/// model's anchor vertex is constrained, the lowest unconstrained vertex
/// anchors the solve instead.
EditSolution fit_latents(const ModelRuntime& runtime,
                         const std::vector<ControlConstraint>& constraints,
                         const FitOptions& options = {});

std::vector<LatentWeight> solution_weights(const ModelRuntime& runtime,
                                           const EditSolution& solution);

}  // namespace meshmodes

#endif  // MESHMODES_EDITING_H_
