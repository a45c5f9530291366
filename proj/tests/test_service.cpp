#include <doctest.h>

#include <cmath>
#include <thread>

#include "fixtures.h"
#include "meshmodes/service.h"

// After Eigen: <resolv.h> defines a _res macro that collides with it.
#include <httplib.h>

using namespace meshmodes;
using nlohmann::json;

namespace {

std::shared_ptr<const ModelRuntime> shared_runtime() {
  static const auto rt = std::make_shared<const ModelRuntime>(fixtures::trained().model);
  return rt;
}

const Service& service() {
  static const Service s(shared_runtime());
  return s;
}

json weight(int level, int ae, int index, json value) {
  return {{"level", level}, {"ae", ae}, {"index", index}, {"value", value}};
}

Positions positions_of(const json& mesh) {
  const auto flat = mesh.at("positions").get<std::vector<double>>();
  Positions p(static_cast<Eigen::Index>(flat.size() / 3), 3);
  for (std::size_t i = 0; i < flat.size(); ++i) p.data()[i] = flat[i];
  return p;
}

}  // namespace

TEST_CASE("service without a model") {
  const Service empty(nullptr);
  CHECK(empty.model_info().status == 503);
  CHECK(empty.reference().status == 503);
  CHECK(empty.decode(R"({"weights": []})").status == 503);
  const ApiResponse r = empty.fit("{}");
  CHECK(r.status == 503);
  CHECK(r.body.at("code") == 503);
  CHECK(r.body.contains("error"));
}

TEST_CASE("model and reference endpoints") {
  const ApiResponse info = service().model_info();
  REQUIRE(info.status == 200);
  const auto& model = fixtures::trained().model;
  CHECK(info.body.at("levels") == 2);
  CHECK(info.body.at("first_level") == 4);
  CHECK(info.body.at("second_level_size") == 3);
  CHECK(info.body.at("first_level_components").size() == 4);
  CHECK(info.body.at("second_level").size() == 4);
  CHECK(info.body.at("vertex_count") == model.reference.vertex_count());
  std::size_t kept_second = 0;
  for (const auto& c : model.components) kept_second += c.level == 2 && c.kept;
  std::size_t listed = 0;
  for (const auto& block : info.body.at("second_level")) {
    CHECK(block.at("parent") == block.at("ae"));
    listed += block.at("kept").size();
  }
  CHECK(listed == kept_second);

  const ApiResponse ref = service().reference();
  REQUIRE(ref.status == 200);
  CHECK(positions_of(ref.body) == model.reference.positions);
  CHECK(ref.body.at("faces").size() == static_cast<std::size_t>(3 * model.reference.face_count()));
}

TEST_CASE("decode endpoint") {
  const auto rt = shared_runtime();
  const double bbox = bounding_box_diagonal(rt->model().reference);

  const ApiResponse zero = service().decode(R"({"weights": []})");
  REQUIRE(zero.status == 200);
  const Positions p0 = positions_of(zero.body);
  CHECK(std::sqrt((p0 - rt->model().reference.positions).rowwise().squaredNorm().mean()) < 1e-6 * bbox);
  CHECK(zero.body.at("displacement").size() == static_cast<std::size_t>(rt->vertex_count()));

  const json body = {{"weights", {weight(1, 0, 2, 1.5), weight(2, 1, 0, -0.4)}}};
  const ApiResponse a = service().decode(body.dump());
  const ApiResponse b = service().decode(body.dump());
  REQUIRE(a.status == 200);
  CHECK(a.body.dump() == b.body.dump());
  const TriangleMesh direct = apply_weights(*rt, {{1, 0, 2, 1.5}, {2, 1, 0, -0.4}});
  CHECK(positions_of(a.body) == direct.positions);
  const auto disp = a.body.at("displacement").get<std::vector<double>>();
  for (int v = 0; v < rt->vertex_count(); ++v) {
    CHECK(disp[v] == doctest::Approx((direct.positions.row(v) - rt->model().reference.positions.row(v)).norm()));
  }
}

TEST_CASE("decode errors") {
  CHECK(service().decode("{ nope").status == 400);
  CHECK(service().decode("[]").status == 400);
  CHECK(service().decode(R"({"weights": {}})").status == 400);
  CHECK(service().decode(json{{"weights", {weight(1, 0, 4, 1.0)}}}.dump()).status == 400);
  CHECK(service().decode(json{{"weights", {weight(2, 9, 0, 1.0)}}}.dump()).status == 400);
  CHECK(service().decode(json{{"weights", {weight(1, 0, 0, "x")}}}.dump()).status == 400);
  CHECK(service().decode(R"({"weights": [{"level": 1, "ae": 0, "index": 0}]})").status == 400);
  // Non-finite values arrive as null, bare NaN / Infinity tokens or
  // overflowing literals.
  for (const char* value : {"null", "NaN", "-Infinity", "1e999"}) {
    const std::string body =
        std::string(R"({"weights": [{"level": 1, "ae": 0, "index": 0, "value": )") + value + "}]}";
    const ApiResponse r = service().decode(body);
    CHECK(r.status == 422);
    CHECK(r.body.at("code") == 422);
  }
  CHECK(service().decode(R"({"weights": [], "note": "NaN"})").status == 200);
  CHECK(service().decode(R"({"weights": [Nope]})").status == 400);
}

TEST_CASE("fit endpoint") {
  const auto rt = shared_runtime();
  const TriangleMesh& ref = rt->model().reference;

  json cons = json::array();
  for (int v : {3, 17, 40}) {
    cons.push_back({{"vertex", v}, {"target", {ref.positions(v, 0), ref.positions(v, 1), ref.positions(v, 2)}}});
  }
  const ApiResponse still = service().fit(json{{"constraints", cons}}.dump());
  REQUIRE(still.status == 200);
  CHECK(still.body.at("residual").get<double>() < 1e-6);
  for (const auto& w : still.body.at("weights")) CHECK(std::abs(w.at("value").get<double>()) < 1e-6);
  CHECK(still.body.at("aborted") == false);

  const ComponentInfo& c = fixtures::strongest_kept(rt->model(), 2);
  const Positions target = apply_weights(*rt, {{c.level, c.ae, c.index, 1.0}}).positions;
  json realizable = json::array();
  for (int v = 0; v < ref.vertex_count(); ++v) {
    if (v == rt->model().anchor) continue;
    realizable.push_back({{"vertex", v}, {"target", {target(v, 0), target(v, 1), target(v, 2)}}, {"weight", 1.0}});
  }
  const ApiResponse fitted = service().fit(json{{"constraints", realizable}}.dump());
  REQUIRE(fitted.status == 200);
  double chosen = 0.0, other = 0.0;
  for (const auto& w : fitted.body.at("weights")) {
    const double v = std::abs(w.at("value").get<double>());
    if (w.at("level") == c.level && w.at("ae") == c.ae && w.at("index") == c.index) {
      chosen = v;
    } else {
      other = std::max(other, v);
    }
  }
  CHECK(chosen > 5.0 * other);

  // Round trip: decoding the returned weights gives the returned mesh.
  const ApiResponse again = service().decode(json{{"weights", fitted.body.at("weights")}}.dump());
  REQUIRE(again.status == 200);
  CHECK(again.body.at("positions") == fitted.body.at("mesh").at("positions"));
}

TEST_CASE("fit errors") {
  CHECK(service().fit("not json").status == 400);
  CHECK(service().fit(R"({"constraints": []})").status == 400);
  CHECK(service().fit(R"({"constraints": [{"vertex": 100000, "target": [0, 0, 0]}]})").status == 400);
  CHECK(service().fit(R"({"constraints": [{"vertex": 1, "target": [0, 0]}]})").status == 400);
  CHECK(service().fit(R"({"constraints": [{"vertex": 1, "target": [0, 0, 0], "weight": 0}]})").status == 400);
  CHECK(service().fit(R"({"constraints": [{"vertex": 1.5, "target": [0, 0, 0]}]})").status == 400);
  CHECK(service().fit(R"({"constraints": [{"vertex": 1, "target": [0, 1e999, 0]}]})").status == 422);
}

TEST_CASE("concurrent decodes agree") {
  const json body = {{"weights", {weight(1, 0, 1, 2.0), weight(2, 0, 2, 0.7)}}};
  const std::string expected = service().decode(body.dump()).body.dump();
  std::vector<std::string> results(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] { results[t] = service().decode(body.dump()).body.dump(); });
  }
  for (auto& t : threads) t.join();
  for (const auto& r : results) CHECK(r == expected);
}

TEST_CASE("http server") {
  HttpServer server(service());
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);
  const auto model = client.Get("/api/model");
  REQUIRE(model);
  CHECK(model->status == 200);
  CHECK(json::parse(model->body).at("first_level") == 4);

  const std::string body = json{{"weights", {weight(1, 0, 0, 1.0)}}}.dump();
  const auto decoded = client.Post("/api/decode", body, "application/json");
  REQUIRE(decoded);
  CHECK(decoded->status == 200);
  CHECK(json::parse(decoded->body).dump() == service().decode(body).body.dump());

  const auto bad = client.Post("/api/fit", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).at("code") == 400);

  const auto missing = client.Get("/api/nothing");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body).at("code") == 404);

  server.stop();
  loop.join();

  HttpServer second(service());
  CHECK_THROWS_AS(second.bind("256.0.0.1", 1), UsageError);
}

TEST_CASE("model info with every second-level component pruned") {
  StackedModel model = fixtures::trained().model;
  for (auto& c : model.components) {
    if (c.level == 2) c.kept = false;
  }
  const Service s(std::make_shared<const ModelRuntime>(model));
  const ApiResponse info = s.model_info();
  REQUIRE(info.status == 200);
  for (const auto& block : info.body.at("second_level")) CHECK(block.at("kept").empty());
}
