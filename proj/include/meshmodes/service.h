#ifndef MESHMODES_SERVICE_H_
#define MESHMODES_SERVICE_H_

#include <json.hpp>
#include <memory>
#include <string>

#include "meshmodes/editing.h"
#include "meshmodes/stacked.h"

namespace meshmodes {

/// Status code and JSON body of one API call. Errors carry
/// {"error": text, "code": status}.
struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// {"positions": flat 3V list, "faces": flat 3F list}.
nlohmann::json mesh_to_json(const TriangleMesh& mesh);

/// Request handlers over a read-only model. A null runtime answers every
/// call with 503. All handlers are const and safe to call concurrently.
class Service {
 public:
  explicit Service(std::shared_ptr<const ModelRuntime> runtime,
                   FitOptions fit_options = {});

  ApiResponse model_info() const;
  ApiResponse reference() const;
  /// Body {"weights": [{level, ae, index, value}]}.
  ApiResponse decode(const std::string& body) const;
  /// Body {"constraints": [{vertex, target: [x, y, z], weight?}]}.
  ApiResponse fit(const std::string& body) const;

 private:
  std::shared_ptr<const ModelRuntime> runtime_;
  FitOptions fit_options_;
};

/// HTTP front end routing GET /api/model, GET /api/reference,
/// POST /api/decode and POST /api/fit to a Service.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to host:port; port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a successful bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace meshmodes

#endif  // MESHMODES_SERVICE_H_
