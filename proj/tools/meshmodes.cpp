// Command-line pipeline: gen, encode, train, components, recon, eval, edit,
// serve.

#include <malloc.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "meshmodes/acap.h"
#include "meshmodes/datagen.h"
#include "meshmodes/editing.h"
#include "meshmodes/parallel.h"
#include "meshmodes/pipeline.h"
#include "meshmodes/service.h"

namespace fs = std::filesystem;
using namespace meshmodes;

namespace {

constexpr const char* kFormats = R"(
Files:
  dataset dir   *.obj meshes with shared faces, sorted by name; the first one
                is the reference. gen also writes params.json.
  cache         "ACAPF01\n", u32 N, V, 9, u8 convention, N*V*9 f64 unscaled
                features, JSON trailer {"scaler", "reference_index", "names"}.
  checkpoint    "MDCA1", version byte, u32 header length, JSON header, f64
                tensors, CRC-32.
  config        JSON object with training keys (lambda1, lambda2, theta,
                d: [d1, d2], kz: [kz0, kz1], levels, learning_rate, decay,
                decay_steps, batch_size, epochs, eps1, eps2, attention,
                strategy: joint|separate, stop_gradient_through_residual,
                center_update_every, probe: [p1, p2], seed) and run keys
                (data, cache, checkpoint, out, split, shapes, bar: {...}).
                Command-line flags override config values.
  constraints   JSON list of {"vertex": i, "target": [x, y, z], "weight": w}.
  loss log      CSV: step, recon0, sparsity0, nontrivial0, recon_second,
                sparsity_second, nontrivial_second, total.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Set MESHMODES_THREADS to cap worker threads.)";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> shapes;
  std::string data, cache, checkpoint, out, split, recon, constraints;
  std::string host = "127.0.0.1";
  int port = 7878;
};

RunConfig resolve(const Options& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (!o.data.empty()) rc.data = o.data;
  if (!o.cache.empty()) rc.cache = o.cache;
  if (!o.checkpoint.empty()) rc.checkpoint = o.checkpoint;
  if (!o.out.empty()) rc.out = o.out;
  if (!o.split.empty()) rc.split = SplitRule::parse(o.split);
  if (o.seed) {
    rc.train.seed = *o.seed;
    rc.bar.seed = *o.seed;
  }
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.shapes) rc.shapes = *o.shapes;
  rc.train.validate();
  rc.bar.validate();
  return rc;
}

const std::string& need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
  return value;
}

void need_dir(const std::string& path, const char* flag) {
  if (!fs::is_directory(need(path, flag))) {
    throw DataError(std::string(flag) + " " + path + " is not a directory");
  }
}

void need_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(need(path, flag))) {
    throw DataError(std::string(flag) + " " + path + " does not exist");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw DataError("cannot write " + path.string());
}

// Unscaled features of every dataset mesh, from the cache when given.
std::vector<FeatureMatrix> dataset_features(const RunConfig& rc,
                                            const std::vector<TriangleMesh>& meshes,
                                            const TriangleMesh& reference) {
  if (!rc.cache.empty()) {
    FeatureCache cache = read_feature_cache(rc.cache);
    if (cache.raw.size() != meshes.size()) {
      throw DataError("cache holds " + std::to_string(cache.raw.size()) +
                      " shapes but the dataset has " + std::to_string(meshes.size()));
    }
    return std::move(cache.raw);
  }
  const CotanWeights weights = cotangent_weights(reference);
  const Adjacency adj = build_adjacency(reference);
  std::vector<FeatureMatrix> raw(meshes.size());
  parallel_for(meshes.size(), [&](std::size_t i) {
    raw[i] = encode_shape(reference, meshes[i], weights, adj);
  });
  return raw;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<int>& idx) {
  std::vector<T> out;
  for (int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

void cmd_gen(const Options& o) {
  const RunConfig rc = resolve(o);
  const std::string& out = need(rc.out.empty() ? rc.data : rc.out, "--out");
  const BarDataset data = gen_bar_dataset(rc.bar, rc.shapes);
  write_bar_dataset(rc.bar, data, out);
  std::printf("wrote %d shapes to %s\n", rc.shapes, out.c_str());
}

void cmd_encode(const Options& o) {
  const RunConfig rc = resolve(o);
  need_dir(rc.data, "--data");
  need(rc.cache, "--cache");
  const auto meshes = load_obj_directory(rc.data);
  EncodedDataset enc = encode_dataset(meshes, 0);
  FeatureCache cache;
  cache.raw = std::move(enc.raw);
  cache.scaler = enc.scaler;
  cache.reference_index = 0;
  for (const auto& m : meshes) cache.names.push_back(m.name);
  write_feature_cache(rc.cache, cache);
  std::printf("encoded %zu shapes into %s\n", meshes.size(), rc.cache.c_str());
}

void cmd_train(const Options& o) {
  const RunConfig rc = resolve(o);
  need_dir(rc.data, "--data");
  need(rc.checkpoint, "--checkpoint");
  if (!rc.cache.empty()) need_file(rc.cache, "--cache");
  const auto meshes = load_obj_directory(rc.data);
  const auto raw = dataset_features(rc, meshes, meshes[0]);
  const auto train_idx = rc.split.training(static_cast<int>(meshes.size()));
  std::vector<LossRow> log;
  const StackedModel model =
      train_model(meshes[0], pick(raw, train_idx), rc.train, &log);
  save_model(model, rc.checkpoint);
  const fs::path log_path =
      rc.out.empty() ? fs::path(rc.checkpoint).replace_extension(".loss.csv")
                     : fs::path(rc.out);
  write_text(log_path, loss_log_csv(log));
  int kept = 0;
  for (const auto& c : model.components) kept += c.kept;
  std::printf("trained on %zu shapes for %d epochs; %d of %zu components kept\n",
              train_idx.size(), rc.train.epochs, kept, model.components.size());
  std::printf("checkpoint %s, loss log %s\n", rc.checkpoint.c_str(),
              log_path.string().c_str());
}

std::string component_file(const ComponentInfo& c) {
  char name[64];
  if (c.level == 1) {
    std::snprintf(name, sizeof(name), "level1_%02d.obj", c.index);
  } else {
    std::snprintf(name, sizeof(name), "level2_ae%02d_%02d.obj", c.ae, c.index);
  }
  return name;
}

void cmd_components(const Options& o) {
  const RunConfig rc = resolve(o);
  need_file(rc.checkpoint, "--checkpoint");
  const fs::path out = need(rc.out, "--out");
  const ModelRuntime runtime(load_model(rc.checkpoint));
  fs::create_directories(out);
  const auto components = extract_components(runtime);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& c : components) {
    nlohmann::json entry = c.info.to_json();
    if (c.info.kept) {
      const std::string file = component_file(c.info);
      TriangleMesh mesh = apply_weights(
          runtime, {{c.info.level, c.info.ae, c.info.index, c.info.magnitude}});
      mesh.name = fs::path(file).stem().string();
      save_obj(mesh, out / file);
      entry["file"] = file;
    } else {
      entry["file"] = nullptr;
    }
    index.push_back(entry);
  }
  write_text(out / "components.json", index.dump(2) + "\n");
  const Eigen::MatrixXd sim = component_similarity(components);
  std::string csv;
  char cell[32];
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    for (Eigen::Index j = 0; j < sim.cols(); ++j) {
      std::snprintf(cell, sizeof(cell), "%s%.9f", j ? "," : "", sim(i, j));
      csv += cell;
    }
    csv += "\n";
  }
  write_text(out / "similarity.csv", csv);
  int kept = 0;
  for (const auto& c : components) kept += c.info.kept;
  std::printf("%d of %zu components kept; written to %s\n", kept, components.size(),
              out.string().c_str());
}

struct HeldOut {
  std::vector<TriangleMesh> meshes;
  std::vector<FeatureMatrix> raw;
};

HeldOut held_out(const RunConfig& rc, const TriangleMesh& reference) {
  const auto meshes = load_obj_directory(rc.data);
  const auto raw = dataset_features(rc, meshes, reference);
  const auto idx = rc.split.testing(static_cast<int>(meshes.size()));
  if (idx.empty()) throw UsageError("the split leaves no held-out shapes");
  return {pick(meshes, idx), pick(raw, idx)};
}

void cmd_recon(const Options& o) {
  const RunConfig rc = resolve(o);
  need_file(rc.checkpoint, "--checkpoint");
  need_dir(rc.data, "--data");
  const fs::path out = need(rc.out, "--out");
  const ModelRuntime runtime(load_model(rc.checkpoint));
  const HeldOut test = held_out(rc, runtime.model().reference);
  const auto recon = reconstruct_shapes(runtime, test.raw);
  fs::create_directories(out);
  for (std::size_t i = 0; i < recon.size(); ++i) {
    TriangleMesh m = recon[i];
    m.name = test.meshes[i].name;
    save_obj(m, out / (m.name + ".obj"));
  }
  std::printf("reconstructed %zu held-out shapes into %s\n", recon.size(),
              out.string().c_str());
}

void cmd_eval(const Options& o) {
  const RunConfig rc = resolve(o);
  need_dir(rc.data, "--data");
  EvalReport report;
  if (!o.recon.empty()) {
    need_dir(o.recon, "--recon");
    auto ground = load_obj_directory(rc.data);
    const TriangleMesh reference = ground[0];
    const auto idx = rc.split.testing(static_cast<int>(ground.size()));
    ground = pick(ground, idx);
    std::vector<TriangleMesh> recon;
    for (const auto& g : ground) {
      recon.push_back(load_obj(fs::path(o.recon) / (g.name + ".obj")));
    }
    report = evaluate_meshes(reference, ground, recon);
  } else {
    need_file(rc.checkpoint, "--checkpoint");
    const ModelRuntime runtime(load_model(rc.checkpoint));
    const HeldOut test = held_out(rc, runtime.model().reference);
    report = evaluate_model(runtime, test.meshes, test.raw);
  }
  std::fputs(report.to_table().c_str(), stdout);
  if (!rc.out.empty()) write_text(rc.out, report.to_json().dump(2) + "\n");
}

void cmd_edit(const Options& o) {
  const RunConfig rc = resolve(o);
  need_file(rc.checkpoint, "--checkpoint");
  need_file(o.constraints, "--constraints");
  const fs::path out = need(rc.out, "--out");
  const ModelRuntime runtime(load_model(rc.checkpoint));
  const auto constraints = load_constraints(o.constraints, runtime.vertex_count());
  const EditSolution sol = fit_latents(runtime, constraints);
  TriangleMesh mesh = sol.mesh;
  mesh.name = out.stem().string();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_obj(mesh, out);
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& w : solution_weights(runtime, sol)) {
    weights.push_back({{"level", w.level}, {"ae", w.ae}, {"index", w.index}, {"value", w.value}});
  }
  const nlohmann::json summary{{"residual", sol.residual},
                               {"iterations", sol.iterations},
                               {"aborted", sol.aborted},
                               {"weights", weights}};
  write_text(fs::path(out).replace_extension(".json"), summary.dump(2) + "\n");
  std::printf("residual %.9g after %d iterations%s; mesh %s\n", sol.residual,
              sol.iterations, sol.aborted ? " (aborted: non-finite objective)" : "",
              out.string().c_str());
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void cmd_serve(const Options& o) {
  const RunConfig rc = resolve(o);
  std::shared_ptr<const ModelRuntime> runtime;
  if (!rc.checkpoint.empty()) {
    need_file(rc.checkpoint, "--checkpoint");
    runtime = std::make_shared<const ModelRuntime>(load_model(rc.checkpoint));
  } else {
    std::fprintf(stderr, "no checkpoint given; every endpoint answers 503\n");
  }
  const Service service(runtime);
  HttpServer server(service);
  const int port = server.bind(o.host, o.port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("serving on http://%s:%d\n", o.host.c_str(), port);
  std::fflush(stdout);
  server.listen();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees large temporaries every step; keep them in
  // the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 28);

  CLI::App app{"Multiscale localized deformation components for meshes"};
  app.footer(kFormats);
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->footer(kFormats);
  };
  auto seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s; }, "random seed");
  };
  auto data = [&](CLI::App* cmd) {
    cmd->add_option("--data", o.data, "dataset directory of OBJ meshes");
  };
  auto cache = [&](CLI::App* cmd) {
    cmd->add_option("--cache", o.cache, "ACAP feature cache file");
  };
  auto checkpoint = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint file");
  };
  auto split = [&](CLI::App* cmd) {
    cmd->add_option("--split", o.split,
                    "train/test split: every-nth:n (default every-nth:10) or ratio:r");
  };

  auto* gen = app.add_subcommand("gen", "generate the synthetic bar dataset");
  add_common(gen);
  seed(gen);
  gen->add_option("--out", o.out, "output directory");
  gen->add_option_function<int>(
      "--shapes", [&](const int& n) { o.shapes = n; }, "number of shapes (default 50)");

  auto* encode = app.add_subcommand("encode", "encode a dataset into an ACAP cache");
  add_common(encode);
  data(encode);
  cache(encode);

  auto* train = app.add_subcommand("train", "train the stacked autoencoders");
  add_common(train);
  seed(train);
  data(train);
  cache(train);
  checkpoint(train);
  split(train);
  train->add_option_function<int>(
      "--epochs", [&](const int& n) { o.epochs = n; }, "training epochs (default 3000)");
  train->add_option("--out", o.out, "loss log CSV (default: checkpoint path with extension .loss.csv)");

  auto* components = app.add_subcommand("components", "export deformation components");
  add_common(components);
  checkpoint(components);
  components->add_option("--out", o.out,
                         "output directory for OBJs, components.json, similarity.csv");

  auto* recon = app.add_subcommand("recon", "reconstruct held-out shapes");
  add_common(recon);
  data(recon);
  cache(recon);
  checkpoint(recon);
  split(recon);
  recon->add_option("--out", o.out, "output directory for reconstructed OBJs");

  auto* eval = app.add_subcommand("eval", "evaluate held-out reconstructions");
  add_common(eval);
  data(eval);
  cache(eval);
  checkpoint(eval);
  split(eval);
  eval->add_option("--recon", o.recon,
                   "directory of reconstructed OBJs to score instead of a checkpoint");
  eval->add_option("--out", o.out, "JSON report file");

  auto* edit = app.add_subcommand("edit", "fit component weights to control points");
  add_common(edit);
  checkpoint(edit);
  edit->add_option("--constraints", o.constraints, "constraints JSON file");
  edit->add_option("--out", o.out, "output OBJ; a JSON summary is written beside it");

  auto* serve = app.add_subcommand("serve", "start the HTTP JSON service");
  add_common(serve);
  checkpoint(serve);
  serve->add_option("--port", o.port, "port (default 7878)");
  serve->add_option("--host", o.host, "bind address (default 127.0.0.1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) cmd_gen(o);
    if (*encode) cmd_encode(o);
    if (*train) cmd_train(o);
    if (*components) cmd_components(o);
    if (*recon) cmd_recon(o);
    if (*eval) cmd_eval(o);
    if (*edit) cmd_edit(o);
    if (*serve) cmd_serve(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  }
  return 0;
}
