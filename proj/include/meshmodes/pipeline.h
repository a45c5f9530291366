#ifndef MESHMODES_PIPELINE_H_
#define MESHMODES_PIPELINE_H_

#include <json.hpp>
#include <string>
#include <vector>

#include "meshmodes/datagen.h"
#include "meshmodes/metrics.h"
#include "meshmodes/stacked.h"

namespace meshmodes {

/// Train/test split. "every-nth:n" trains on shapes 0, n, 2n, ...;
/// "ratio:r" trains on shape i when floor(i r) > floor((i - 1) r), i.e.
/// shape 0 plus evenly spread shapes, floor((N - 1) r) + 1 in total.
struct SplitRule {
  enum class Kind { kEveryNth, kRatio };
  Kind kind = Kind::kEveryNth;
  int every = 10;
  double ratio = 0.1;

  static SplitRule parse(const std::string& text);
  std::string to_string() const;
  bool is_training(int index) const;
  std::vector<int> training(int count) const;
  std::vector<int> testing(int count) const;
};

/// Training hyperparameters plus the paths and split of one pipeline run.
/// The JSON form is a flat object: TrainConfig keys, "data", "cache",
/// "checkpoint", "out", "split", "shapes" and a nested "bar" generator spec.
struct RunConfig {
  TrainConfig train;
  std::string data;
  std::string cache;
  std::string checkpoint;
  std::string out;
  SplitRule split;
  BarSpec bar;
  int shapes = 50;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

/// Fits the scaler on `raw_train`, trains the stacked network and extracts
/// components. `log` receives the per-step losses when non-null.
StackedModel train_model(const TriangleMesh& reference,
                         const std::vector<FeatureMatrix>& raw_train,
                         const TrainConfig& cfg,
                         std::vector<LossRow>* log = nullptr);

/// Scaled features through the full network, unscaled and reconstructed.
std::vector<TriangleMesh> reconstruct_shapes(const ModelRuntime& runtime,
                                             const std::vector<FeatureMatrix>& raw);

/// Metrics of reconstructions against ground truth. Percentage error is
/// measured on unscaled features; E_rms and STED on unit-ball aligned
/// positions.
EvalReport evaluate_model(const ModelRuntime& runtime,
                          const std::vector<TriangleMesh>& ground,
                          const std::vector<FeatureMatrix>& raw);

/// Metrics of two mesh sets with shared connectivity; features are encoded
/// against `reference`.
EvalReport evaluate_meshes(const TriangleMesh& reference,
                           const std::vector<TriangleMesh>& ground,
                           const std::vector<TriangleMesh>& recon);

/// CSV with columns step, recon0, sparsity0, nontrivial0, recon_second,
/// sparsity_second, nontrivial_second, total.
std::string loss_log_csv(const std::vector<LossRow>& log);

}  // namespace meshmodes

#endif  // MESHMODES_PIPELINE_H_
