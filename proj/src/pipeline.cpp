#include "meshmodes/pipeline.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "meshmodes/acap.h"

namespace meshmodes {

SplitRule SplitRule::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw UsageError("split must be 'every-nth:n' or 'ratio:r', got '" + text + "'");
  }
  const std::string kind = text.substr(0, colon);
  const std::string value = text.substr(colon + 1);
  SplitRule rule;
  std::size_t used = 0;
  try {
    if (kind == "every-nth") {
      rule.kind = Kind::kEveryNth;
      rule.every = std::stoi(value, &used);
      if (rule.every < 1) throw UsageError("every-nth needs n >= 1");
    } else if (kind == "ratio") {
      rule.kind = Kind::kRatio;
      rule.ratio = std::stod(value, &used);
      if (!(rule.ratio > 0.0 && rule.ratio <= 1.0)) {
        throw UsageError("ratio must lie in (0, 1]");
      }
    } else {
      throw UsageError("unknown split rule '" + kind + "'");
    }
  } catch (const std::logic_error&) {
    throw UsageError("bad split value '" + value + "'");
  }
  if (used != value.size()) throw UsageError("bad split value '" + value + "'");
  return rule;
}

std::string SplitRule::to_string() const {
  if (kind == Kind::kEveryNth) return "every-nth:" + std::to_string(every);
  std::ostringstream s;
  s << "ratio:" << ratio;
  return s.str();
}

bool SplitRule::is_training(int index) const {
  if (kind == Kind::kEveryNth) return index % every == 0;
  return std::floor(index * ratio) > std::floor((index - 1) * ratio);
}

std::vector<int> SplitRule::training(int count) const {
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    if (is_training(i)) out.push_back(i);
  }
  return out;
}

std::vector<int> SplitRule::testing(int count) const {
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    if (!is_training(i)) out.push_back(i);
  }
  return out;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig rc;
  nlohmann::json train = nlohmann::json::object();
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "data") {
        rc.data = value.get<std::string>();
      } else if (key == "cache") {
        rc.cache = value.get<std::string>();
      } else if (key == "checkpoint") {
        rc.checkpoint = value.get<std::string>();
      } else if (key == "out") {
        rc.out = value.get<std::string>();
      } else if (key == "split") {
        rc.split = SplitRule::parse(value.get<std::string>());
      } else if (key == "shapes") {
        rc.shapes = value.get<int>();
      } else if (key == "bar") {
        rc.bar = BarSpec::from_json(value);
      } else {
        train[key] = value;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  rc.train = TrainConfig::from_json(train);
  if (rc.shapes < 1) throw UsageError("shapes must be positive");
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

StackedModel train_model(const TriangleMesh& reference,
                         const std::vector<FeatureMatrix>& raw_train,
                         const TrainConfig& cfg, std::vector<LossRow>* log) {
  if (raw_train.empty()) throw UsageError("no training shapes");
  StackedModel model;
  model.config = cfg;
  model.reference = reference;
  model.scaler = FeatureScaler::fit(raw_train);
  std::vector<FeatureMatrix> scaled;
  scaled.reserve(raw_train.size());
  for (const auto& raw : raw_train) scaled.push_back(model.scaler.forward(raw));
  const Geometry geometry = build_geometry(reference, model.anchor);
  TrainResult result = train(scaled, geometry, cfg);
  model.blocks = std::move(result.blocks);
  if (log) *log = std::move(result.log);
  const ModelRuntime runtime(model);
  for (const auto& c : extract_components(runtime)) model.components.push_back(c.info);
  return model;
}

std::vector<TriangleMesh> reconstruct_shapes(const ModelRuntime& runtime,
                                             const std::vector<FeatureMatrix>& raw) {
  std::vector<TriangleMesh> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    out.push_back(runtime.mesh_from_scaled(
        runtime.reconstruct_feature(runtime.model().scaler.forward(r))));
  }
  return out;
}

namespace {

EvalReport report_of(std::vector<TriangleMesh> ground, std::vector<TriangleMesh> recon,
                     const std::vector<FeatureMatrix>& raw_ground,
                     const std::vector<FeatureMatrix>& raw_recon) {
  EvalReport report;
  for (const auto& g : ground) report.names.push_back(g.name);
  report.percentage = percentage_error(raw_ground, raw_recon);
  align_to_unit_ball(ground, recon);
  report.per_shape_e_rms = e_rms_per_shape(ground, recon);
  report.e_rms = e_rms(ground, recon);
  report.sted = sted_simplified(ground, recon);
  return report;
}

}  // namespace

EvalReport evaluate_model(const ModelRuntime& runtime,
                          const std::vector<TriangleMesh>& ground,
                          const std::vector<FeatureMatrix>& raw) {
  if (ground.size() != raw.size()) throw DataError("mesh and feature counts differ");
  if (ground.empty()) throw UsageError("no shapes to evaluate");
  const FeatureScaler& scaler = runtime.model().scaler;
  std::vector<TriangleMesh> recon;
  std::vector<FeatureMatrix> raw_recon;
  for (const auto& r : raw) {
    const FeatureMatrix scaled = runtime.reconstruct_feature(scaler.forward(r));
    raw_recon.push_back(scaler.inverse(scaled));
    recon.push_back(runtime.mesh_from_scaled(scaled));
  }
  return report_of(ground, std::move(recon), raw, raw_recon);
}

EvalReport evaluate_meshes(const TriangleMesh& reference,
                           const std::vector<TriangleMesh>& ground,
                           const std::vector<TriangleMesh>& recon) {
  if (ground.size() != recon.size()) throw DataError("mesh counts differ");
  if (ground.empty()) throw UsageError("no shapes to evaluate");
  const CotanWeights weights = cotangent_weights(reference);
  const Adjacency adj = build_adjacency(reference);
  std::vector<FeatureMatrix> raw_ground, raw_recon;
  for (std::size_t i = 0; i < ground.size(); ++i) {
    if (!same_connectivity(reference, ground[i]) ||
        !same_connectivity(reference, recon[i])) {
      throw DataError("mesh '" + ground[i].name + "' has different connectivity");
    }
    raw_ground.push_back(encode_shape(reference, ground[i], weights, adj));
    raw_recon.push_back(encode_shape(reference, recon[i], weights, adj));
  }
  return report_of(ground, recon, raw_ground, raw_recon);
}

std::string loss_log_csv(const std::vector<LossRow>& log) {
  std::string out =
      "step,recon0,sparsity0,nontrivial0,recon_second,sparsity_second,"
      "nontrivial_second,total\n";
  char line[256];
  for (const auto& row : log) {
    const StackedLoss& l = row.loss;
    std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(row.step), l.first.recon, l.first.sparsity,
                  l.first.nontrivial, l.second.recon, l.second.sparsity,
                  l.second.nontrivial, l.total);
    out += line;
  }
  return out;
}

}  // namespace meshmodes
