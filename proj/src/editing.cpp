#include "meshmodes/editing.h"

#include <Eigen/Cholesky>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace meshmodes {

LatentLayout LatentLayout::of(const ModelRuntime& runtime) {
  LatentLayout l;
  const auto& blocks = runtime.model().blocks;
  l.kz0 = blocks.ae0.latent_dim();
  l.second_blocks = static_cast<int>(blocks.second.size());
  l.kz1 = blocks.second.empty() ? 0 : blocks.second[0].latent_dim();
  return l;
}

int LatentLayout::offset(int level, int ae, int index) const {
  if (level == 1) {
    if (ae != 0) throw UsageError("level-1 weights must use ae = 0");
    if (index < 0 || index >= kz0) {
      throw UsageError("level-1 index " + std::to_string(index) + " out of range");
    }
    return index;
  }
  if (level == 2) {
    if (ae < 0 || ae >= second_blocks) {
      throw UsageError("level-2 block " + std::to_string(ae) + " out of range");
    }
    if (index < 0 || index >= kz1) {
      throw UsageError("level-2 index " + std::to_string(index) + " out of range");
    }
    return kz0 + ae * kz1 + index;
  }
  throw UsageError("level must be 1 or 2");
}

LatentWeight LatentLayout::describe(int flat) const {
  if (flat < 0 || flat >= size()) throw UsageError("latent position out of range");
  if (flat < kz0) return {1, 0, flat, 0.0};
  const int rest = flat - kz0;
  return {2, rest / kz1, rest % kz1, 0.0};
}

namespace {

// Splits the flat latent vector into per-block pieces.
std::vector<Eigen::VectorXd> split(const LatentLayout& layout,
                                   const Eigen::VectorXd& latents) {
  if (latents.size() != layout.size()) {
    throw UsageError("latent vector has the wrong size");
  }
  std::vector<Eigen::VectorXd> out;
  out.push_back(latents.head(layout.kz0));
  for (int k = 0; k < layout.second_blocks; ++k) {
    out.push_back(latents.segment(layout.kz0 + k * layout.kz1, layout.kz1));
  }
  return out;
}

int block_of(const LatentLayout& layout, int flat) {
  return flat < layout.kz0 ? 0 : 1 + (flat - layout.kz0) / layout.kz1;
}

}  // namespace

FeatureMatrix decode_latents(const ModelRuntime& runtime,
                             const Eigen::VectorXd& latents) {
  const auto parts = split(LatentLayout::of(runtime), latents);
  FeatureMatrix out = runtime.decode_offset(0, parts[0]);
  for (std::size_t b = 1; b < parts.size(); ++b) {
    out += runtime.decode_offset(static_cast<int>(b), parts[b]);
  }
  return out;
}

Eigen::VectorXd assemble_latents(const ModelRuntime& runtime,
                                 const std::vector<LatentWeight>& weights) {
  const LatentLayout layout = LatentLayout::of(runtime);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(layout.size());
  for (const auto& w : weights) {
    if (!std::isfinite(w.value)) throw DataError("non-finite weight value");
    z[layout.offset(w.level, w.ae, w.index)] = w.value;
  }
  return z;
}

TriangleMesh apply_weights(const ModelRuntime& runtime,
                           const std::vector<LatentWeight>& weights) {
  return runtime.mesh_from_scaled(
      decode_latents(runtime, assemble_latents(runtime, weights)));
}

std::vector<ControlConstraint> constraints_from_json(const nlohmann::json& j,
                                                     int vertex_count) {
  if (!j.is_array()) throw DataError("constraints must be a JSON array");
  std::vector<ControlConstraint> out;
  std::set<int> seen;
  for (const auto& item : j) {
    ControlConstraint c;
    try {
      c.vertex = item.at("vertex").get<int>();
      const auto& t = item.at("target");
      if (!t.is_array() || t.size() != 3) throw DataError("target needs 3 values");
      for (int a = 0; a < 3; ++a) c.target[a] = t.at(a).get<double>();
      c.weight = item.value("weight", 1.0);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad constraint: ") + e.what());
    }
    if (c.vertex < 0 || c.vertex >= vertex_count) {
      throw UsageError("constraint vertex " + std::to_string(c.vertex) +
                       " out of range");
    }
    if (!c.target.allFinite() || !std::isfinite(c.weight)) {
      throw DataError("non-finite constraint");
    }
    if (!(c.weight > 0.0)) throw DataError("constraint weight must be positive");
    if (!seen.insert(c.vertex).second) {
      throw DataError("vertex " + std::to_string(c.vertex) + " constrained twice");
    }
    out.push_back(c);
  }
  return out;
}

std::vector<ControlConstraint> load_constraints(const std::filesystem::path& path,
                                                int vertex_count) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return constraints_from_json(j, vertex_count);
}

EditSolution fit_latents(const ModelRuntime& runtime,
                         const std::vector<ControlConstraint>& constraints,
                         const FitOptions& options) {
  const int v = runtime.vertex_count();
  if (constraints.empty()) throw UsageError("fit needs at least one constraint");
  std::vector<char> constrained(static_cast<std::size_t>(v), 0);
  for (const auto& c : constraints) {
    if (c.vertex < 0 || c.vertex >= v) {
      throw UsageError("constraint vertex " + std::to_string(c.vertex) +
                       " out of range");
    }
    if (!c.target.allFinite() || !(c.weight > 0.0)) {
      throw DataError("constraints need finite targets and positive weights");
    }
    constrained[static_cast<std::size_t>(c.vertex)] = 1;
  }

  const Geometry& geo = runtime.geometry();
  std::shared_ptr<const Reconstructor> solver = geo.reconstructor;
  if (constrained[static_cast<std::size_t>(solver->anchor())]) {
    int anchor = 0;
    while (anchor < v && constrained[static_cast<std::size_t>(anchor)]) ++anchor;
    if (anchor == v) throw UsageError("every vertex is constrained");
    solver = std::make_shared<const Reconstructor>(geo.reference, geo.weights,
                                                   geo.adjacency, anchor);
  }
  const FeatureScaler& scaler = runtime.model().scaler;
  const LatentLayout layout = LatentLayout::of(runtime);
  const int n = layout.size();

  auto positions_of = [&](const FeatureMatrix& scaled) {
    return solver->solve_raw(scaler.inverse(scaled));
  };
  auto misfit = [&](const Positions& p) {
    double sum = 0.0;
    for (const auto& c : constraints) {
      sum += c.weight * (p.row(c.vertex).transpose() - c.target).squaredNorm();
    }
    return sum;
  };
  auto objective = [&](const FeatureMatrix& scaled, const Eigen::VectorXd& z) {
    try {
      return misfit(positions_of(scaled)) + options.regularization * z.squaredNorm();
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  // Per-block decoded offsets of the current iterate.
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  std::vector<FeatureMatrix> parts;
  {
    const auto pieces = split(layout, z);
    for (std::size_t b = 0; b < pieces.size(); ++b) {
      parts.push_back(runtime.decode_offset(static_cast<int>(b), pieces[b]));
    }
  }
  auto total_of = [&](const std::vector<FeatureMatrix>& p) {
    FeatureMatrix t = p[0];
    for (std::size_t b = 1; b < p.size(); ++b) t += p[b];
    return t;
  };
  FeatureMatrix total = total_of(parts);

  EditSolution sol;
  double f = objective(total, z);
  if (!std::isfinite(f)) throw NumericalError("objective is not finite at z = 0");
  sol.objective.push_back(f);

  // Levenberg-Marquardt on the residuals sqrt(w_c) (P_{v_c} - t_c): the
  // forward differences give the Jacobian J, the gradient is
  // 2 (J^T r + rho z) and each step solves the damped Gauss-Newton system.
  const auto m = static_cast<Eigen::Index>(3 * constraints.size());
  auto residuals = [&](const FeatureMatrix& scaled) {
    const Positions p = positions_of(scaled);
    Eigen::VectorXd r(m);
    for (std::size_t c = 0; c < constraints.size(); ++c) {
      r.segment<3>(static_cast<Eigen::Index>(3 * c)) =
          std::sqrt(constraints[c].weight) *
          (p.row(constraints[c].vertex).transpose() - constraints[c].target);
    }
    return r;
  };

  double damping = 1e-3;
  for (int iter = 0; iter < options.max_iterations && f > 0.0; ++iter) {
    Eigen::VectorXd r;
    Eigen::MatrixXd jac(m, n);
    bool finite = true;
    try {
      r = residuals(total);
      for (int j = 0; j < n && finite; ++j) {
        const int b = block_of(layout, j);
        Eigen::VectorXd zp = z;
        zp[j] += options.fd_step;
        const FeatureMatrix moved =
            total - parts[b] + runtime.decode_offset(b, split(layout, zp)[b]);
        jac.col(j) = (residuals(moved) - r) / options.fd_step;
        finite = jac.col(j).allFinite();
      }
    } catch (const NumericalError&) {
      finite = false;
    }
    if (!finite) {
      sol.aborted = true;
      break;
    }
    const Eigen::VectorXd grad = jac.transpose() * r + options.regularization * z;
    if (!(grad.norm() > 0.0)) break;
    Eigen::MatrixXd normal = jac.transpose() * jac;
    normal.diagonal().array() += options.regularization;

    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd damped = normal;
      damped.diagonal() += damping * normal.diagonal();
      const Eigen::VectorXd trial = z - damped.ldlt().solve(grad);
      const auto pieces = split(layout, trial);
      std::vector<FeatureMatrix> trial_parts;
      for (std::size_t b = 0; b < pieces.size(); ++b) {
        trial_parts.push_back(runtime.decode_offset(static_cast<int>(b), pieces[b]));
      }
      const FeatureMatrix trial_total = total_of(trial_parts);
      const double ft = trial.allFinite() ? objective(trial_total, trial)
                                          : std::numeric_limits<double>::quiet_NaN();
      if (std::isfinite(ft) && ft < f) {
        const double improvement = (f - ft) / f;
        z = trial;
        parts = std::move(trial_parts);
        total = trial_total;
        f = ft;
        accepted = true;
        damping = std::max(damping * 0.3, 1e-12);
        sol.objective.push_back(f);
        sol.iterations = iter + 1;
        if (improvement < options.min_relative_improvement) iter = options.max_iterations;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) break;
  }

  sol.latents = z;
  const auto pieces = split(layout, z);
  sol.z0 = pieces[0];
  sol.z_second.assign(pieces.begin() + 1, pieces.end());
  sol.mesh.positions = positions_of(total);
  sol.mesh.faces = geo.reference.faces;
  sol.mesh.name = "fit";
  double se = 0.0;
  for (const auto& c : constraints) {
    se += (sol.mesh.positions.row(c.vertex).transpose() - c.target).squaredNorm();
  }
  sol.residual = std::sqrt(se / static_cast<double>(constraints.size()));
  return sol;
}

std::vector<LatentWeight> solution_weights(const ModelRuntime& runtime,
                                           const EditSolution& solution) {
  const LatentLayout layout = LatentLayout::of(runtime);
  std::vector<LatentWeight> out;
  for (int j = 0; j < layout.size(); ++j) {
    LatentWeight w = layout.describe(j);
    w.value = solution.latents[j];
    out.push_back(w);
  }
  return out;
}

}  // namespace meshmodes
