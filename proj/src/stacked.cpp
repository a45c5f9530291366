#include "meshmodes/stacked.h"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "meshmodes/binary_io.h"
#include "meshmodes/parallel.h"

namespace meshmodes {

// ---------------------------------------------------------------------------
// Configuration.

void TrainConfig::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) {
    throw UsageError("loss weights must be non-negative");
  }
  if (!(theta > 0.0)) throw UsageError("theta must be positive");
  if (!(d1 > 0.0 && d1 <= 1.0 && d2 > 0.0 && d2 <= 1.0)) {
    throw UsageError("radii must lie in (0, 1]");
  }
  if (levels != 1 && levels != 2) throw UsageError("levels must be 1 or 2");
  if (levels == 2 && !(d1 > d2)) throw UsageError("d1 must exceed d2");
  if (kz0 < 1 || kz1 < 1) throw UsageError("latent sizes must be positive");
  if (!(learning_rate > 0.0) || !(decay > 0.0) || !(decay_steps > 0.0)) {
    throw UsageError("learning rate schedule must be positive");
  }
  if (batch_size < 1 || epochs < 0) {
    throw UsageError("batch size must be positive and epochs non-negative");
  }
  if (!(eps1 > 0.0 && eps2 > 0.0)) throw UsageError("thresholds must be positive");
  if (center_update_every < 1) {
    throw UsageError("center update cadence must be positive");
  }
  if (!(std::isfinite(probe_level1) && std::isfinite(probe_level2))) {
    throw UsageError("probe magnitudes must be finite");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda1", lambda1},
          {"lambda2", lambda2},
          {"theta", theta},
          {"d", {d1, d2}},
          {"kz", {kz0, kz1}},
          {"levels", levels},
          {"learning_rate", learning_rate},
          {"decay", decay},
          {"decay_steps", decay_steps},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"eps1", eps1},
          {"eps2", eps2},
          {"stop_gradient_through_residual", stop_gradient_through_residual},
          {"attention", attention},
          {"strategy", strategy == TrainStrategy::kJoint ? "joint" : "separate"},
          {"center_update_every", center_update_every},
          {"probe", {probe_level1, probe_level2}},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  static const std::vector<std::string> known = {
      "lambda1", "lambda2", "theta", "d", "kz", "levels", "learning_rate",
      "decay", "decay_steps", "batch_size", "epochs", "eps1", "eps2",
      "stop_gradient_through_residual", "attention", "strategy",
      "center_update_every", "probe", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw UsageError("unknown config key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.theta = j.value("theta", c.theta);
    if (j.contains("d")) {
      c.d1 = j.at("d").at(0).get<double>();
      c.d2 = j.at("d").at(1).get<double>();
    }
    if (j.contains("kz")) {
      c.kz0 = j.at("kz").at(0).get<int>();
      c.kz1 = j.at("kz").at(1).get<int>();
    }
    c.levels = j.value("levels", c.levels);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.decay = j.value("decay", c.decay);
    c.decay_steps = j.value("decay_steps", c.decay_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.eps1 = j.value("eps1", c.eps1);
    c.eps2 = j.value("eps2", c.eps2);
    c.stop_gradient_through_residual = j.value(
        "stop_gradient_through_residual", c.stop_gradient_through_residual);
    c.attention = j.value("attention", c.attention);
    if (j.contains("strategy")) {
      const std::string s = j.at("strategy").get<std::string>();
      if (s == "joint") {
        c.strategy = TrainStrategy::kJoint;
      } else if (s == "separate") {
        c.strategy = TrainStrategy::kSeparate;
      } else {
        throw UsageError("strategy must be 'joint' or 'separate'");
      }
    }
    c.center_update_every = j.value("center_update_every", c.center_update_every);
    if (j.contains("probe")) {
      c.probe_level1 = j.at("probe").at(0).get<double>();
      c.probe_level2 = j.at("probe").at(1).get<double>();
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

Geometry build_geometry(const TriangleMesh& reference, int anchor) {
  Geometry g;
  g.reference = reference;
  g.adjacency = build_adjacency(reference);
  g.weights = cotangent_weights(reference);
  g.neighbor_mean = neighbor_mean_operator(g.adjacency);
  g.geodesics = std::make_shared<const GeodesicCache>(reference);
  g.reconstructor = std::make_shared<const Reconstructor>(
      reference, g.weights, g.adjacency, anchor);
  return g;
}

// ---------------------------------------------------------------------------
// Attention and routing.

namespace {

RowMatrix attention_mass(const RowMatrix& c) {
  return group_norms(c).array().square().matrix();
}

}  // namespace

RowMatrix extract_attention(const RowMatrix& c) {
  RowMatrix am = attention_mass(c);
  const Eigen::Index k = am.rows();
  for (Eigen::Index i = 0; i < am.cols(); ++i) {
    const double total = am.col(i).sum();
    if (total > 0.0) {
      am.col(i) /= total;
    } else {
      am.col(i).setConstant(1.0 / static_cast<double>(k));
    }
  }
  return am;
}

RowMatrix uniform_attention(int k, int vertex_count) {
  return RowMatrix::Constant(k, vertex_count, 1.0 / k);
}

std::vector<FeatureMatrix> route_residuals(const FeatureMatrix& x,
                                           const FeatureMatrix& x0,
                                           const RowMatrix& attention) {
  const Eigen::Index v = attention.cols();
  if (x.rows() != x0.rows() || v == 0 || x.rows() % v != 0) {
    throw UsageError("residual routing shapes do not match");
  }
  const FeatureMatrix residual = x - x0;
  std::vector<FeatureMatrix> out(static_cast<std::size_t>(attention.rows()));
  for (Eigen::Index k = 0; k < attention.rows(); ++k) {
    FeatureMatrix& in = out[static_cast<std::size_t>(k)];
    in.resize(x.rows(), kFeatureDim);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      in.row(r) = attention(k, r % v) * residual.row(r);
    }
  }
  return out;
}

StackedBlocks init_blocks(const TrainConfig& cfg, int vertex_count,
                          std::mt19937_64& rng) {
  StackedBlocks b;
  b.ae0 = init_block(vertex_count, cfg.kz0, cfg.d1, rng);
  if (cfg.levels == 2) {
    for (int k = 0; k < cfg.kz0; ++k) {
      b.second.push_back(init_block(vertex_count, cfg.kz1, cfg.d2, rng));
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Forward, loss, backward.

namespace {

StackedForward forward_impl(const StackedBlocks& blocks, const FeatureMatrix& x,
                            const NeighborOp& m, bool attention,
                            bool use_second) {
  StackedForward f;
  f.first = ae_forward(blocks.ae0, x, m);
  f.total = f.first.y;
  if (!use_second || blocks.second.empty()) return f;
  const int k = static_cast<int>(blocks.second.size());
  const int v = blocks.ae0.vertex_count();
  f.attention_from_c = attention;
  f.attention = attention ? extract_attention(blocks.ae0.c) : uniform_attention(k, v);
  f.residual = x - f.first.y;
  f.inputs = route_residuals(x, f.first.y, f.attention);
  f.second.resize(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t i) {
    f.second[i] = ae_forward(blocks.second[i], f.inputs[i], m);
  });
  for (const auto& s : f.second) f.total += s.y;
  return f;
}

}  // namespace

StackedForward forward_full(const StackedBlocks& blocks, const FeatureMatrix& x,
                            const NeighborOp& m, bool attention) {
  return forward_impl(blocks, x, m, attention, true);
}

StackedLoss stacked_loss(const StackedBlocks& blocks, const StackedForward& fwd,
                         const FeatureMatrix& x, const LossWeights& w) {
  StackedLoss loss;
  loss.first = ae_loss(blocks.ae0, x, fwd.first, w);
  loss.total = loss.first.total;
  for (std::size_t k = 0; k < fwd.second.size(); ++k) {
    const LossParts p = ae_loss(blocks.second[k], fwd.inputs[k], fwd.second[k], w);
    loss.second.recon += p.recon;
    loss.second.sparsity += p.sparsity;
    loss.second.nontrivial += p.nontrivial;
    loss.second.total += p.total;
  }
  loss.total += loss.second.total;
  return loss;
}

StackedGrads::StackedGrads(const StackedBlocks& like) : ae0(like.ae0) {
  for (const auto& b : like.second) second.emplace_back(b);
}

StackedGrads stacked_backward(const StackedBlocks& blocks,
                              const StackedForward& fwd, const FeatureMatrix& x,
                              const NeighborOp& m, const LossWeights& w,
                              bool stop_gradient) {
  StackedGrads grads(blocks);
  const int batch = fwd.first.batch;
  FeatureMatrix d_first = recon_gradient(x, fwd.first.y, batch, w.lambda1);

  const std::size_t k_count = fwd.second.size();
  if (k_count > 0) {
    std::vector<FeatureMatrix> d_inputs(k_count);
    parallel_for(k_count, [&](std::size_t k) {
      const FeatureMatrix d_out =
          recon_gradient(fwd.inputs[k], fwd.second[k].y, batch, w.lambda1);
      FeatureMatrix d_x;
      ae_backward(blocks.second[k], fwd.second[k], d_out, m, w, grads.second[k],
                  stop_gradient ? nullptr : &d_x);
      // The routed input is both this block's input and its target.
      if (!stop_gradient) d_inputs[k] = d_x - d_out;
    });

    if (!stop_gradient) {
      const Eigen::Index v = fwd.attention.cols();
      FeatureMatrix d_residual = FeatureMatrix::Zero(x.rows(), kFeatureDim);
      RowMatrix d_attention = RowMatrix::Zero(fwd.attention.rows(), v);
      for (std::size_t k = 0; k < k_count; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          const Eigen::Index i = r % v;
          d_residual.row(r) += fwd.attention(kk, i) * d_inputs[k].row(r);
          d_attention(kk, i) += d_inputs[k].row(r).dot(fwd.residual.row(r));
        }
      }
      d_first -= d_residual;

      if (fwd.attention_from_c) {
        // AM = am / sum(am), am_{k,i} = |C_{k,i}|^2.
        const RowMatrix mass = attention_mass(blocks.ae0.c);
        for (Eigen::Index i = 0; i < v; ++i) {
          const double total = mass.col(i).sum();
          if (!(total > 0.0)) continue;
          const double mean = d_attention.col(i).dot(fwd.attention.col(i));
          for (Eigen::Index k = 0; k < mass.rows(); ++k) {
            const double d_mass = (d_attention(k, i) - mean) / total;
            grads.ae0.c.row(k).segment(i * kFeatureDim, kFeatureDim) +=
                2.0 * d_mass *
                blocks.ae0.c.row(k).segment(i * kFeatureDim, kFeatureDim);
          }
        }
      }
    }
  }
  ae_backward(blocks.ae0, fwd.first, d_first, m, w, grads.ae0, nullptr);
  return grads;
}

// ---------------------------------------------------------------------------
// Training.

FeatureMatrix stack_batch(const std::vector<FeatureMatrix>& shapes,
                          const std::vector<int>& indices) {
  if (indices.empty()) throw UsageError("empty batch");
  const Eigen::Index v = shapes.at(static_cast<std::size_t>(indices[0])).rows();
  FeatureMatrix out(v * static_cast<Eigen::Index>(indices.size()), kFeatureDim);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const FeatureMatrix& s = shapes.at(static_cast<std::size_t>(indices[b]));
    if (s.rows() != v) throw DataError("shapes differ in vertex count");
    out.middleRows(static_cast<Eigen::Index>(b) * v, v) = s;
  }
  return out;
}

FeatureMatrix shape_of(const FeatureMatrix& batch, int vertex_count, int b) {
  return batch.middleRows(static_cast<Eigen::Index>(b) * vertex_count,
                          vertex_count);
}

namespace {

std::string describe(const StackedLoss& l) {
  std::ostringstream s;
  s << "total=" << l.total << " recon0=" << l.first.recon
    << " sparsity0=" << l.first.sparsity << " nontrivial0=" << l.first.nontrivial
    << " recon_second=" << l.second.recon;
  return s.str();
}

}  // namespace

TrainResult train(const std::vector<FeatureMatrix>& features,
                  const Geometry& geometry, const TrainConfig& cfg,
                  const StepObserver& observer) {
  cfg.validate();
  if (features.empty()) throw UsageError("no training shapes");
  const int v = geometry.vertex_count();
  for (const auto& f : features) {
    if (f.rows() != v) throw DataError("feature rows do not match the reference");
    if (!f.allFinite()) throw DataError("non-finite training feature");
  }

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  StackedBlocks& blocks = result.blocks;
  blocks = init_blocks(cfg, v, rng);

  AdamOptions adam;
  adam.learning_rate = cfg.learning_rate;
  adam.decay = cfg.decay;
  adam.decay_steps = cfg.decay_steps;
  AdamState first_state(blocks.ae0.parameter_count(), adam);
  std::vector<AdamState> second_state;
  for (const auto& b : blocks.second) {
    second_state.emplace_back(b.parameter_count(), adam);
  }

  const int n = static_cast<int>(features.size());
  const int batch = std::min(cfg.batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const LossWeights w = cfg.loss_weights();
  const NeighborOp& m = geometry.neighbor_mean;
  const bool separate =
      cfg.strategy == TrainStrategy::kSeparate && !blocks.second.empty();
  const int first_phase_epochs = separate ? cfg.epochs / 2 : 0;

  std::int64_t step = 0;
  std::optional<StackedLoss> last_finite;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool first_phase = separate && epoch < first_phase_epochs;
    const bool train_first = !separate || first_phase;
    const bool use_second = !blocks.second.empty() && !first_phase;
    const bool stop_gradient = cfg.stop_gradient_through_residual || separate;

    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      const std::vector<int> idx(order.begin() + start,
                                 order.begin() + start + count);
      const FeatureMatrix x = stack_batch(features, idx);

      if (step % cfg.center_update_every == 0) {
        update_sparsity_mask(blocks.ae0, *geometry.geodesics);
        if (use_second) {
          for (auto& b : blocks.second) {
            update_sparsity_mask(b, *geometry.geodesics);
          }
        }
      }

      const StackedForward fwd = forward_impl(blocks, x, m, cfg.attention, use_second);
      const StackedLoss loss = stacked_loss(blocks, fwd, x, w);
      if (!std::isfinite(loss.total)) {
        std::string msg = "non-finite loss at step " + std::to_string(step);
        if (last_finite) msg += "; last finite: " + describe(*last_finite);
        throw NumericalError(msg);
      }
      last_finite = loss;
      result.log.push_back({step, loss});
      if (observer) observer(StepView{step, blocks, fwd, x, loss});

      const StackedGrads grads =
          stacked_backward(blocks, fwd, x, m, w, stop_gradient);
      if (train_first) adam_step(first_state, blocks.ae0, grads.ae0);
      if (use_second) {
        parallel_for(blocks.second.size(), [&](std::size_t k) {
          adam_step(second_state[k], blocks.second[k], grads.second[k]);
        });
      }
      ++step;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Components.

nlohmann::json ComponentInfo::to_json() const {
  nlohmann::json j = {{"level", level},         {"ae", ae},
                      {"index", index},         {"magnitude", magnitude},
                      {"center", center},       {"strength", strength},
                      {"kept", kept},           {"active_region", active_region}};
  j["parent"] = parent >= 0 ? nlohmann::json(parent) : nlohmann::json(nullptr);
  return j;
}

ComponentInfo ComponentInfo::from_json(const nlohmann::json& j) {
  ComponentInfo c;
  c.level = j.at("level").get<int>();
  c.ae = j.at("ae").get<int>();
  c.index = j.at("index").get<int>();
  c.magnitude = j.at("magnitude").get<double>();
  c.center = j.at("center").get<int>();
  c.strength = j.at("strength").get<double>();
  c.kept = j.at("kept").get<bool>();
  c.active_region = j.at("active_region").get<std::vector<int>>();
  c.parent = j.at("parent").is_null() ? -1 : j.at("parent").get<int>();
  return c;
}

ModelRuntime::ModelRuntime(StackedModel model)
    : model_(std::move(model)),
      geometry_(build_geometry(model_.reference, model_.anchor)) {
  const int v = geometry_.vertex_count();
  if (model_.blocks.ae0.vertex_count() != v) {
    throw DataError("model blocks do not match the reference mesh");
  }
  for (int ae = 0; ae < block_count(); ++ae) {
    const AEBlock& b = block(ae);
    if (b.vertex_count() != v) throw DataError("block vertex count mismatch");
    baselines_.push_back(
        ae_decode(b, RowMatrix::Zero(1, b.latent_dim()), geometry_.neighbor_mean));
  }
}

int ModelRuntime::block_count() const {
  return 1 + static_cast<int>(model_.blocks.second.size());
}

const AEBlock& ModelRuntime::block(int ae) const {
  if (ae < 0 || ae >= block_count()) {
    throw UsageError("block index " + std::to_string(ae) + " out of range");
  }
  return ae == 0 ? model_.blocks.ae0
                 : model_.blocks.second[static_cast<std::size_t>(ae - 1)];
}

FeatureMatrix ModelRuntime::decode_offset(int ae, const Eigen::VectorXd& z) const {
  const AEBlock& b = block(ae);
  if (z.size() != b.latent_dim()) {
    throw UsageError("latent vector size does not match block " +
                     std::to_string(ae));
  }
  return ae_decode(b, z.transpose(), geometry_.neighbor_mean) -
         baselines_[static_cast<std::size_t>(ae)];
}

FeatureMatrix ModelRuntime::decode_offsets(
    const Eigen::VectorXd& z0, const std::vector<Eigen::VectorXd>& second) const {
  FeatureMatrix out = decode_offset(0, z0);
  if (!second.empty() && static_cast<int>(second.size()) != block_count() - 1) {
    throw UsageError("wrong number of second-level latent vectors");
  }
  for (std::size_t k = 0; k < second.size(); ++k) {
    out += decode_offset(static_cast<int>(k) + 1, second[k]);
  }
  return out;
}

FeatureMatrix ModelRuntime::reconstruct_feature(const FeatureMatrix& scaled) const {
  return forward_full(model_.blocks, scaled, geometry_.neighbor_mean,
                      model_.config.attention)
      .total;
}

TriangleMesh ModelRuntime::mesh_from_scaled(const FeatureMatrix& scaled) const {
  TriangleMesh out = geometry_.reconstructor->reconstruct(scaled, model_.scaler);
  out.name = model_.reference.name;
  return out;
}

double component_strength(const FeatureMatrix& delta, double eps1) {
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < delta.rows(); ++i) {
    const double norm = delta.row(i).norm();
    if (norm > eps1) {
      sum += norm;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

std::vector<int> active_region(const FeatureMatrix& delta, double fraction) {
  std::vector<int> out;
  if (delta.rows() == 0) return out;
  const Eigen::VectorXd norms = delta.rowwise().norm();
  const double cutoff = fraction * norms.maxCoeff();
  if (!(cutoff > 0.0)) return out;
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms[i] > cutoff) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<Component> extract_components(const ModelRuntime& runtime) {
  const StackedModel& model = runtime.model();
  std::vector<Component> out;
  for (int ae = 0; ae < runtime.block_count(); ++ae) {
    const AEBlock& b = runtime.block(ae);
    const double magnitude =
        ae == 0 ? model.config.probe_level1 : model.config.probe_level2;
    for (int k = 0; k < b.latent_dim(); ++k) {
      Component c;
      c.info.level = ae == 0 ? 1 : 2;
      c.info.parent = ae == 0 ? -1 : ae - 1;
      c.info.ae = ae == 0 ? 0 : ae - 1;
      c.info.index = k;
      c.info.magnitude = magnitude;
      c.info.center = b.centers.empty() ? 0 : b.centers[static_cast<std::size_t>(k)];
      Eigen::VectorXd z = Eigen::VectorXd::Zero(b.latent_dim());
      z[k] = magnitude;
      c.scaled_delta = runtime.decode_offset(ae, z);
      c.raw_delta = model.scaler.inverse_delta(c.scaled_delta);
      c.info.strength = component_strength(c.raw_delta, model.config.eps1);
      c.info.kept = c.info.strength >= model.config.eps2;
      c.info.active_region = active_region(c.raw_delta);
      out.push_back(std::move(c));
    }
  }
  return out;
}

Eigen::MatrixXd component_similarity(const std::vector<Component>& components) {
  std::vector<const Component*> first;
  for (const auto& c : components) {
    if (c.info.level == 1) first.push_back(&c);
  }
  const auto k = static_cast<Eigen::Index>(first.size());
  Eigen::MatrixXd sim = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    const auto& fa = first[static_cast<std::size_t>(a)]->raw_delta;
    for (Eigen::Index b = 0; b < k; ++b) {
      const auto& fb = first[static_cast<std::size_t>(b)]->raw_delta;
      const double na = fa.norm();
      const double nb = fb.norm();
      if (na > 0.0 && nb > 0.0) {
        sim(a, b) = fa.cwiseProduct(fb).sum() / (na * nb);
      }
    }
  }
  return sim;
}

// ---------------------------------------------------------------------------
// Checkpoint.

namespace {

constexpr char kMagic[] = "MDCA1";
constexpr std::size_t kMagicSize = 5;

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

void put_block(std::string& out, const AEBlock& b) {
  b.for_each_tensor([&](const double* p, std::size_t n) {
    binary::put_f64s(out, p, n);
  });
  binary::put_f64s(out, b.mask.data(), static_cast<std::size_t>(b.mask.size()));
}

AEBlock read_block(binary::Reader& in, int v, int k, double radius,
                   std::vector<int> centers) {
  AEBlock b;
  b.c.resize(k, static_cast<Eigen::Index>(v) * kFeatureDim);
  b.mask.resize(k, v);
  b.radius = radius;
  b.centers = std::move(centers);
  b.for_each_tensor([&](double* p, std::size_t n) { in.f64s(p, n); });
  in.f64s(b.mask.data(), static_cast<std::size_t>(b.mask.size()));
  return b;
}

}  // namespace

std::string serialize_model(const StackedModel& model) {
  const int v = model.reference.vertex_count();
  nlohmann::json header;
  header["config"] = model.config.to_json();
  header["vertex_count"] = v;
  header["feature_dim"] = kFeatureDim;
  header["stretch_convention"] = kRawStretchConvention;
  header["kz"] = {model.blocks.ae0.latent_dim(),
                  model.blocks.second.empty() ? 0 : model.blocks.second[0].latent_dim()};
  header["second_count"] = model.blocks.second.size();
  header["scaler"] = model.scaler.to_json();
  header["anchor"] = model.anchor;
  header["reference_name"] = model.reference.name;
  header["faces"] = std::vector<int>(
      model.reference.faces.data(),
      model.reference.faces.data() + model.reference.faces.size());
  nlohmann::json blocks = nlohmann::json::array();
  auto describe_block = [](const AEBlock& b) {
    return nlohmann::json{{"radius", b.radius}, {"centers", b.centers}};
  };
  blocks.push_back(describe_block(model.blocks.ae0));
  for (const auto& b : model.blocks.second) blocks.push_back(describe_block(b));
  header["blocks"] = blocks;
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : model.components) comps.push_back(c.to_json());
  header["components"] = comps;

  const std::string text = header.dump();
  std::string out(kMagic, kMagicSize);
  out.push_back(static_cast<char>(kCheckpointVersion));
  binary::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  binary::put_f64s(out, model.reference.positions.data(),
                   static_cast<std::size_t>(model.reference.positions.size()));
  put_block(out, model.blocks.ae0);
  for (const auto& b : model.blocks.second) put_block(out, b);
  binary::put_u32(out, crc_of(out));
  return out;
}

StackedModel deserialize_model(const std::string& bytes) {
  if (bytes.size() < kMagicSize + 1 ||
      bytes.compare(0, kMagicSize, kMagic, kMagicSize) != 0) {
    throw DataError("not a meshmodes checkpoint");
  }
  const auto version = static_cast<std::uint8_t>(bytes[kMagicSize]);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    " (this build reads version " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < kMagicSize + 1 + 4 + 4) {
    throw DataError("checkpoint checksum mismatch (file truncated)");
  }
  const std::string_view payload(bytes.data(), bytes.size() - 4);
  binary::Reader tail(std::string_view(bytes).substr(bytes.size() - 4));
  if (tail.u32() != crc_of(payload)) {
    throw DataError("checkpoint checksum mismatch");
  }

  binary::Reader in(payload);
  in.take(kMagicSize + 1);
  const std::uint32_t header_size = in.u32();
  StackedModel model;
  try {
    const nlohmann::json header = nlohmann::json::parse(in.take(header_size));
    if (header.at("feature_dim").get<int>() != kFeatureDim ||
        header.at("stretch_convention").get<int>() != kRawStretchConvention) {
      throw DataError("checkpoint uses an unsupported feature layout");
    }
    model.config = TrainConfig::from_json(header.at("config"));
    const int v = header.at("vertex_count").get<int>();
    const int kz0 = header.at("kz").at(0).get<int>();
    const int kz1 = header.at("kz").at(1).get<int>();
    const int second = header.at("second_count").get<int>();
    model.scaler = FeatureScaler::from_json(header.at("scaler"));
    model.anchor = header.at("anchor").get<int>();
    model.reference.name = header.at("reference_name").get<std::string>();
    const auto faces = header.at("faces").get<std::vector<int>>();
    if (faces.size() % 3 != 0) throw DataError("bad face list in checkpoint");
    model.reference.faces =
        Eigen::Map<const Faces>(faces.data(), static_cast<Eigen::Index>(faces.size() / 3), 3);
    model.reference.positions.resize(v, 3);
    in.f64s(model.reference.positions.data(),
            static_cast<std::size_t>(model.reference.positions.size()));
    const auto& blocks = header.at("blocks");
    if (static_cast<int>(blocks.size()) != 1 + second) {
      throw DataError("block table does not match the block count");
    }
    auto load = [&](int i, int k) {
      const auto& meta = blocks.at(static_cast<std::size_t>(i));
      return read_block(in, v, k, meta.at("radius").get<double>(),
                        meta.at("centers").get<std::vector<int>>());
    };
    model.blocks.ae0 = load(0, kz0);
    for (int i = 0; i < second; ++i) model.blocks.second.push_back(load(i + 1, kz1));
    for (const auto& c : header.at("components")) {
      model.components.push_back(ComponentInfo::from_json(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("bad checkpoint config: ") + e.what());
  }
  if (in.remaining() != 0) throw DataError("trailing bytes in checkpoint");
  validate(model.reference);
  return model;
}

void save_model(const StackedModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

StackedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace meshmodes
