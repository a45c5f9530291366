#include "meshmodes/service.h"

#include <httplib.h>

#include <cmath>

namespace meshmodes {

namespace {

using nlohmann::json;

ApiResponse error(int status, const std::string& message) {
  return {status, json{{"error", message}, {"code", status}}};
}

// Thrown while parsing requests; carries the HTTP status to report.
struct RequestError {
  int status;
  std::string message;
};

// Replaces bare NaN / Infinity / -Infinity tokens outside strings, as some
// JSON writers emit them, with null.
std::string null_non_finite_tokens(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < text.size()) {
        out += text[++i];
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') in_string = true;
    bool replaced = false;
    for (const std::string token : {"-Infinity", "Infinity", "NaN"}) {
      if (text.compare(i, token.size(), token) == 0) {
        out += "null";
        i += token.size() - 1;
        replaced = true;
        break;
      }
    }
    if (!replaced) out += c;
  }
  return out;
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::out_of_range& e) {
    // Number literals beyond double range.
    throw RequestError{422, std::string("non-finite number: ") + e.what()};
  } catch (const json::exception& e) {
    try {
      return json::parse(null_non_finite_tokens(body));
    } catch (const json::exception&) {
      throw RequestError{400, std::string("malformed JSON: ") + e.what()};
    }
  }
}

const json& require_array(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_array()) {
    throw RequestError{400, std::string("body needs an array \"") + key + "\""};
  }
  return j.at(key);
}

int require_int(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) {
    throw RequestError{400, std::string("\"") + key + "\" must be an integer"};
  }
  return j.at(key).get<int>();
}

// null stands in for NaN and infinities, which JSON cannot spell.
double require_number(const json& j, const char* key) {
  if (j.is_null()) {
    throw RequestError{422, std::string("\"") + key + "\" is not finite"};
  }
  if (!j.is_number()) {
    throw RequestError{400, std::string("\"") + key + "\" must be a number"};
  }
  const double v = j.get<double>();
  if (!std::isfinite(v)) {
    throw RequestError{422, std::string("\"") + key + "\" is not finite"};
  }
  return v;
}

std::vector<LatentWeight> parse_weights(const json& body, const LatentLayout& layout) {
  std::vector<LatentWeight> out;
  for (const auto& item : require_array(body, "weights")) {
    if (!item.is_object() || !item.contains("value")) {
      throw RequestError{400, "each weight needs level, ae, index and value"};
    }
    LatentWeight w;
    w.level = require_int(item, "level");
    w.ae = require_int(item, "ae");
    w.index = require_int(item, "index");
    try {
      layout.offset(w.level, w.ae, w.index);
    } catch (const UsageError& e) {
      throw RequestError{400, e.what()};
    }
    w.value = require_number(item.at("value"), "value");
    out.push_back(w);
  }
  return out;
}

std::vector<ControlConstraint> parse_constraints(const json& body, int vertex_count) {
  std::vector<ControlConstraint> out;
  for (const auto& item : require_array(body, "constraints")) {
    if (!item.is_object()) throw RequestError{400, "constraint must be an object"};
    ControlConstraint c;
    c.vertex = require_int(item, "vertex");
    if (c.vertex < 0 || c.vertex >= vertex_count) {
      throw RequestError{400, "vertex " + std::to_string(c.vertex) + " out of range"};
    }
    if (!item.contains("target") || !item.at("target").is_array() ||
        item.at("target").size() != 3) {
      throw RequestError{400, "target must be a list of 3 numbers"};
    }
    for (int a = 0; a < 3; ++a) c.target[a] = require_number(item.at("target").at(a), "target");
    if (item.contains("weight")) c.weight = require_number(item.at("weight"), "weight");
    if (!(c.weight > 0.0)) throw RequestError{400, "weight must be positive"};
    out.push_back(c);
  }
  if (out.empty()) throw RequestError{400, "at least one constraint is required"};
  return out;
}

json weights_to_json(const std::vector<LatentWeight>& weights) {
  json out = json::array();
  for (const auto& w : weights) {
    out.push_back({{"level", w.level}, {"ae", w.ae}, {"index", w.index}, {"value", w.value}});
  }
  return out;
}

template <typename Fn>
ApiResponse guarded(const std::shared_ptr<const ModelRuntime>& runtime, Fn&& fn) {
  if (!runtime) return error(503, "no model loaded");
  try {
    return fn(*runtime);
  } catch (const RequestError& e) {
    return error(e.status, e.message);
  } catch (const UsageError& e) {
    return error(400, e.what());
  } catch (const DataError& e) {
    return error(422, e.what());
  } catch (const NumericalError& e) {
    return error(422, e.what());
  }
}

}  // namespace

json mesh_to_json(const TriangleMesh& mesh) {
  std::vector<double> positions(mesh.positions.data(),
                                mesh.positions.data() + mesh.positions.size());
  std::vector<int> faces(mesh.faces.data(), mesh.faces.data() + mesh.faces.size());
  return json{{"positions", positions}, {"faces", faces}};
}

Service::Service(std::shared_ptr<const ModelRuntime> runtime, FitOptions fit_options)
    : runtime_(std::move(runtime)), fit_options_(fit_options) {}

ApiResponse Service::model_info() const {
  return guarded(runtime_, [](const ModelRuntime& rt) {
    const StackedModel& model = rt.model();
    const TrainConfig& cfg = model.config;
    json first = json::array();
    std::vector<json> second(model.blocks.second.size(), json::array());
    for (const auto& c : model.components) {
      json entry{{"index", c.index},     {"strength", c.strength},
                 {"magnitude", c.magnitude}, {"center", c.center},
                 {"kept", c.kept}};
      if (c.level == 1) {
        first.push_back(entry);
      } else if (c.kept) {
        second[static_cast<std::size_t>(c.ae)].push_back(entry);
      }
    }
    json second_level = json::array();
    for (std::size_t k = 0; k < second.size(); ++k) {
      second_level.push_back({{"ae", k}, {"parent", k}, {"kept", second[k]}});
    }
    json body{{"levels", cfg.levels},
              {"first_level", model.blocks.ae0.latent_dim()},
              {"first_level_components", first},
              {"second_level", second_level},
              {"second_level_size", model.blocks.second.empty()
                                        ? 0
                                        : model.blocks.second[0].latent_dim()},
              {"d", {cfg.d1, cfg.d2}},
              {"probe", {cfg.probe_level1, cfg.probe_level2}},
              {"epochs", cfg.epochs},
              {"vertex_count", rt.vertex_count()},
              {"face_count", model.reference.face_count()}};
    return ApiResponse{200, body};
  });
}

ApiResponse Service::reference() const {
  return guarded(runtime_, [](const ModelRuntime& rt) {
    return ApiResponse{200, mesh_to_json(rt.model().reference)};
  });
}

ApiResponse Service::decode(const std::string& body) const {
  return guarded(runtime_, [&](const ModelRuntime& rt) {
    const auto weights = parse_weights(parse_body(body), LatentLayout::of(rt));
    const TriangleMesh mesh = apply_weights(rt, weights);
    const Positions& ref = rt.model().reference.positions;
    std::vector<double> displacement(static_cast<std::size_t>(mesh.vertex_count()));
    for (int i = 0; i < mesh.vertex_count(); ++i) {
      displacement[static_cast<std::size_t>(i)] =
          (mesh.positions.row(i) - ref.row(i)).norm();
    }
    json out = mesh_to_json(mesh);
    out["displacement"] = displacement;
    return ApiResponse{200, out};
  });
}

ApiResponse Service::fit(const std::string& body) const {
  return guarded(runtime_, [&](const ModelRuntime& rt) {
    const auto constraints = parse_constraints(parse_body(body), rt.vertex_count());
    const EditSolution sol = fit_latents(rt, constraints, fit_options_);
    json out{{"weights", weights_to_json(solution_weights(rt, sol))},
             {"mesh", mesh_to_json(sol.mesh)},
             {"residual", sol.residual},
             {"iterations", sol.iterations},
             {"aborted", sol.aborted}};
    return ApiResponse{200, out};
  });
}

struct HttpServer::Impl {
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>()) {
  auto& s = impl_->server;
  s.Get("/api/model", [&service](const httplib::Request&, httplib::Response& res) {
    reply(res, service.model_info());
  });
  s.Get("/api/reference", [&service](const httplib::Request&, httplib::Response& res) {
    reply(res, service.reference());
  });
  s.Post("/api/decode", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.decode(req.body));
  });
  s.Post("/api/fit", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.fit(req.body));
  });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      reply(res, error(res.status, "no such endpoint"));
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = s.bind_to_any_port(host);
  } else if (!s.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    throw UsageError("cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace meshmodes
