#ifndef MESHMODES_STACKED_H_
#define MESHMODES_STACKED_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "meshmodes/acap.h"
#include "meshmodes/mesh.h"
#include "meshmodes/network.h"

namespace meshmodes {

enum class TrainStrategy {
  kJoint,     ///< every block trained together on the summed loss
  kSeparate,  ///< first level alone, then the second level with it frozen
};

struct TrainConfig {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double theta = 5.0;
  double d1 = 0.4;
  double d2 = 0.2;
  int kz0 = 10;
  int kz1 = 5;
  /// 1 trains the first-level autoencoder only.
  int levels = 2;
  double learning_rate = 1e-3;
  double decay = 0.95;
  double decay_steps = 1000.0;
  int batch_size = 256;
  int epochs = 3000;
  double eps1 = 1e-6;
  double eps2 = 1e-2;
  bool stop_gradient_through_residual = false;
  /// false replaces the attention masks by the uniform 1/K routing.
  bool attention = true;
  TrainStrategy strategy = TrainStrategy::kJoint;
  int center_update_every = 1;
  double probe_level1 = 5.0;
  double probe_level2 = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  LossWeights loss_weights() const { return {lambda1, lambda2, theta}; }
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Everything derived from the reference mesh that training and decoding
/// need.
struct Geometry {
  TriangleMesh reference;
  Adjacency adjacency;
  CotanWeights weights;
  NeighborOp neighbor_mean;
  std::shared_ptr<const GeodesicCache> geodesics;
  std::shared_ptr<const Reconstructor> reconstructor;

  int vertex_count() const { return reference.vertex_count(); }
};

Geometry build_geometry(const TriangleMesh& reference, int anchor = 0);

/// AM_{k,i} = am_{k,i} / sum_l am_{l,i} with am_{k,i} = |C_{k,i}|^2. Columns
/// without mass fall back to 1/K.
RowMatrix extract_attention(const RowMatrix& c);
RowMatrix uniform_attention(int k, int vertex_count);

/// input_k row i = AM_{k,i} * (x - x0) row i. Rows of a (B*V) x 9 batch are
/// matched to vertices modulo V.
std::vector<FeatureMatrix> route_residuals(const FeatureMatrix& x,
                                           const FeatureMatrix& x0,
                                           const RowMatrix& attention);

struct StackedBlocks {
  AEBlock ae0;
  std::vector<AEBlock> second;
};

StackedBlocks init_blocks(const TrainConfig& cfg, int vertex_count,
                          std::mt19937_64& rng);

struct StackedForward {
  AEForward first;
  RowMatrix attention;
  bool attention_from_c = true;
  FeatureMatrix residual;
  std::vector<FeatureMatrix> inputs;
  std::vector<AEForward> second;
  FeatureMatrix total;
};

StackedForward forward_full(const StackedBlocks& blocks, const FeatureMatrix& x,
                            const NeighborOp& m, bool attention = true);

struct StackedLoss {
  LossParts first;
  LossParts second;  ///< summed over the second-level blocks
  double total = 0.0;
};

StackedLoss stacked_loss(const StackedBlocks& blocks, const StackedForward& fwd,
                         const FeatureMatrix& x, const LossWeights& w);

struct StackedGrads {
  AEGrads ae0;
  std::vector<AEGrads> second;
  explicit StackedGrads(const StackedBlocks& like);
};

/// Gradient of the summed loss. With `stop_gradient` the routed inputs are
/// treated as constants, so the first level sees only its own loss.
StackedGrads stacked_backward(const StackedBlocks& blocks,
                              const StackedForward& fwd, const FeatureMatrix& x,
                              const NeighborOp& m, const LossWeights& w,
                              bool stop_gradient);

struct LossRow {
  std::int64_t step = 0;
  StackedLoss loss;
};

/// Observer called after the forward pass of every optimizer step, before
/// the update.
struct StepView {
  std::int64_t step;
  const StackedBlocks& blocks;
  const StackedForward& forward;
  const FeatureMatrix& batch;
  const StackedLoss& loss;
};
using StepObserver = std::function<void(const StepView&)>;

struct TrainResult {
  StackedBlocks blocks;
  std::vector<LossRow> log;
};

TrainResult train(const std::vector<FeatureMatrix>& features,
                  const Geometry& geometry, const TrainConfig& cfg,
                  const StepObserver& observer = {});

/// Stacks shapes into one (B*V) x 9 batch.
FeatureMatrix stack_batch(const std::vector<FeatureMatrix>& shapes,
                          const std::vector<int>& indices);
FeatureMatrix shape_of(const FeatureMatrix& batch, int vertex_count, int b);

// ---------------------------------------------------------------------------
// Trained model.

struct ComponentInfo {
  int level = 1;
  int parent = -1;  ///< first-level index for level-2 components
  int ae = 0;       ///< block within its level: 0 on level 1, k on level 2
  int index = 0;
  double magnitude = 0.0;
  int center = 0;
  double strength = 0.0;
  bool kept = false;
  std::vector<int> active_region;

  nlohmann::json to_json() const;
  static ComponentInfo from_json(const nlohmann::json& j);
};

struct Component {
  ComponentInfo info;
  FeatureMatrix scaled_delta;
  FeatureMatrix raw_delta;
};

struct StackedModel {
  TrainConfig config;
  StackedBlocks blocks;
  TriangleMesh reference;
  FeatureScaler scaler;
  int anchor = 0;
  std::vector<ComponentInfo> components;
};

/// Model plus geometry and the zero-latent decoder outputs, ready for
/// decoding requests. Immutable after construction.
class ModelRuntime {
 public:
  explicit ModelRuntime(StackedModel model);

  const StackedModel& model() const { return model_; }
  const Geometry& geometry() const { return geometry_; }
  int vertex_count() const { return geometry_.vertex_count(); }

  /// Decoder output of block `ae` (0 first level, k + 1 second level)
  /// minus its zero-latent output.
  FeatureMatrix decode_offset(int ae, const Eigen::VectorXd& z) const;
  /// Sum of decode_offset over all blocks; `second` may be empty.
  FeatureMatrix decode_offsets(const Eigen::VectorXd& z0,
                               const std::vector<Eigen::VectorXd>& second) const;
  /// Encode then decode through the full network (scaled features).
  FeatureMatrix reconstruct_feature(const FeatureMatrix& scaled) const;
  TriangleMesh mesh_from_scaled(const FeatureMatrix& scaled) const;

  const AEBlock& block(int ae) const;
  int block_count() const;

 private:
  StackedModel model_;
  Geometry geometry_;
  std::vector<FeatureMatrix> baselines_;
};

/// Mean row norm over the rows whose norm exceeds eps1; 0 when none does.
double component_strength(const FeatureMatrix& delta, double eps1);

/// Decodes magnitude * e_k through every block, measures strengths on the
/// unscaled deltas and marks components with strength >= eps2 as kept.
std::vector<Component> extract_components(const ModelRuntime& runtime);

/// Cosine similarity of flattened first-level component features. Zero
/// vectors have similarity 0 with everything, themselves included.
Eigen::MatrixXd component_similarity(const std::vector<Component>& components);

/// Vertices whose delta row norm exceeds `fraction` of the largest one.
std::vector<int> active_region(const FeatureMatrix& delta, double fraction = 0.05);

// ---------------------------------------------------------------------------
// Checkpoint: "MDCA1", version byte, u32 header length, JSON header, f64
// blobs (reference positions, then per block its tensors and mask), CRC-32
// of everything before it.

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string serialize_model(const StackedModel& model);
StackedModel deserialize_model(const std::string& bytes);
void save_model(const StackedModel& model, const std::filesystem::path& path);
StackedModel load_model(const std::filesystem::path& path);

}  // namespace meshmodes

#endif  // MESHMODES_STACKED_H_
