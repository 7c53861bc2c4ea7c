#include "shapeset/service.hpp"

#include <regex>
#include <string_view>

#include <httplib.h>
#include <json.hpp>

#include "shapeset/applications.hpp"
#include "shapeset/error.hpp"

namespace shapeset {

namespace {

using nlohmann::json;

// Malformed request (HTTP 400), optionally naming the offending field.
struct BadRequest {
  std::string field;
  std::string message;
};

// Well-formed request that violates a domain rule (HTTP 422).
struct Unprocessable {
  std::string field;
  std::string message;
};

HttpResponse error_response(int status, const std::string& code, const std::string& message, const std::string& field = {}) {
  json j;
  j["code"] = code;
  j["message"] = message;
  if (!field.empty()) j["field"] = field;
  return {status, j.dump()};
}

const json& require(const json& body, const std::string& field) {
  if (!body.is_object() || !body.contains(field)) throw BadRequest{field, "missing field '" + field + "'"};
  return body.at(field);
}

int get_int(const json& body, const std::string& field) {
  const auto& v = require(body, field);
  if (!v.is_number_integer()) throw BadRequest{field, "'" + field + "' must be an integer"};
  return v.get<int>();
}

int get_int_or(const json& body, const std::string& field, int fallback) {
  return body.contains(field) ? get_int(body, field) : fallback;
}

std::uint64_t get_seed(const json& body) {
  const auto& v = require(body, "seed");
  if (!v.is_number_integer() || v.get<long long>() < 0) throw BadRequest{"seed", "'seed' must be a nonnegative integer"};
  return v.get<std::uint64_t>();
}

double get_number(const json& body, const std::string& field) {
  const auto& v = require(body, field);
  if (!v.is_number()) throw BadRequest{field, "'" + field + "' must be a number"};
  return v.get<double>();
}

std::vector<double> get_numbers(const json& body, const std::string& field) {
  const auto& v = require(body, field);
  if (!v.is_array()) throw BadRequest{field, "'" + field + "' must be an array of numbers"};
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw BadRequest{field, "'" + field + "' must contain only numbers"};
    out.push_back(x.get<double>());
  }
  return out;
}

json flat_points(std::span<const Point3> points) {
  json arr = json::array();
  for (const auto& p : points) {
    arr.push_back(p.x);
    arr.push_back(p.y);
    arr.push_back(p.z);
  }
  return arr;
}

json latent_json(const ShapeLatent& z) {
  json values = json::array();
  for (int r = 0; r < z.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < z.values.cols(); ++c) row.push_back(z.values(r, c));
    values.push_back(row);
  }
  return json{{"values", values}, {"mask", std::vector<int>(z.mask.begin(), z.mask.end())}};
}

json shape_json(const Model& model, const ShapeLatent& z) {
  const auto classes = classify_rows(z, model.codebook, model.layout);
  json parts = json::array();
  for (int r = 0; r < model.layout.m; ++r) {
    const int c = classes[static_cast<std::size_t>(r)];
    if (c == model.codebook.padding_class()) continue;
    const GeometryLatent zv = z.values.row(r).head(model.layout.q).transpose();
    const auto cloud = decode_part(model.ssms[static_cast<std::size_t>(c)], zv);
    parts.push_back({{"row", r},
                     {"category", c},
                     {"name", model.category_names[static_cast<std::size_t>(c)]},
                     {"points", flat_points(cloud.points)},
                     {"latent", std::vector<double>(zv.data(), zv.data() + zv.size())}});
  }
  return json{{"parts", parts}, {"latent", latent_json(z)}};
}

ShapeLatent parse_latent(const Model& model, const json& body, const std::string& field) {
  const auto& v = require(body, field);
  // Accept either a latent object or a shape payload carrying one.
  const json& lat = v.is_object() && v.contains("latent") ? v.at("latent") : v;
  if (!lat.is_object() || !lat.contains("values") || !lat.contains("mask")) {
    throw BadRequest{field, "'" + field + "' must hold {values, mask}"};
  }
  const auto& rows = lat.at("values");
  const auto& mask = lat.at("mask");
  if (!rows.is_array() || !mask.is_array()) throw BadRequest{field, "'" + field + "' values/mask must be arrays"};
  const auto& layout = model.layout;
  if (static_cast<int>(rows.size()) != layout.m || static_cast<int>(mask.size()) != layout.m) {
    throw Unprocessable{field, "'" + field + "' must have m=" + std::to_string(layout.m) + " rows"};
  }
  ShapeLatent z;
  z.values.resize(layout.m, layout.width());
  for (int r = 0; r < layout.m; ++r) {
    const auto& row = rows.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<int>(row.size()) != layout.width()) {
      throw Unprocessable{field, "'" + field + "' rows must have q+m+1=" + std::to_string(layout.width()) + " entries"};
    }
    for (int c = 0; c < layout.width(); ++c) {
      const auto& x = row.at(static_cast<std::size_t>(c));
      if (!x.is_number()) throw BadRequest{field, "'" + field + "' must contain only numbers"};
      z.values(r, c) = x.get<double>();
    }
    const auto& mv = mask.at(static_cast<std::size_t>(r));
    if (!mv.is_number_integer() && !mv.is_boolean()) throw BadRequest{field, "'" + field + "' mask must be 0/1"};
    z.mask.push_back(static_cast<std::uint8_t>(mv.is_boolean() ? mv.get<bool>() : mv.get<int>() != 0));
  }
  return z;
}

int parse_category(const Model& model, const json& body) {
  const int c = get_int(body, "category");
  if (c < 0 || c >= model.layout.m) {
    throw Unprocessable{"category", "category must lie in [0, " + std::to_string(model.layout.m) + ")"};
  }
  return c;
}

GeometryLatent parse_z(const Model& model, const json& body) {
  const auto z = get_numbers(body, "z");
  if (static_cast<int>(z.size()) != model.layout.q) {
    throw Unprocessable{"z", "z has length " + std::to_string(z.size()) + ", expected q=" + std::to_string(model.layout.q)};
  }
  return Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
}

json model_info(const Model& model) {
  json cats = json::array();
  for (int j = 0; j < model.layout.m; ++j) {
    const auto& ssm = model.ssms[static_cast<std::size_t>(j)];
    cats.push_back({{"id", j},
                    {"name", model.category_names[static_cast<std::size_t>(j)]},
                    {"eigenvalues", std::vector<double>(ssm.eigenvalues.data(), ssm.eigenvalues.data() + ssm.eigenvalues.size())}});
  }
  return json{{"m", model.layout.m},
              {"q", model.layout.q},
              {"T", model.schedule.steps()},
              {"p", model.ssms.front().points_per_part},
              {"categories", cats}};
}

HttpResponse route(const Model& model, const std::string& method, const std::string& path, const std::string& body_text) {
  static const std::regex mean_path(R"(/api/ssm/(-?\d+)/mean)");
  std::smatch match;
  if (method == "GET") {
    if (path == "/api/model") return {200, model_info(model).dump()};
    if (std::regex_match(path, match, mean_path)) {
      const int c = std::stoi(match[1].str());
      if (c < 0 || c >= model.layout.m) return error_response(422, "invalid_field", "unknown category " + match[1].str(), "category");
      const auto& ssm = model.ssms[static_cast<std::size_t>(c)];
      return {200, json{{"category", c}, {"points", flat_points(unflatten(ssm.mean))}}.dump()};
    }
    return error_response(404, "not_found", "no route for GET " + path);
  }
  if (method != "POST") return error_response(405, "method_not_allowed", method + " not supported");

  json body;
  try {
    body = json::parse(body_text);
  } catch (const json::parse_error& e) {
    return error_response(400, "malformed_json", e.what());
  }
  if (!body.is_object()) return error_response(400, "malformed_request", "request body must be a JSON object");

  if (path == "/api/decode") {
    const int c = parse_category(model, body);
    const auto cloud = decode_part(model.ssms[static_cast<std::size_t>(c)], parse_z(model, body));
    return {200, json{{"category", c}, {"points", flat_points(cloud.points)}}.dump()};
  }
  if (path == "/api/sample") {
    const auto seed = get_seed(body);
    const int count = get_int_or(body, "count", 1);
    if (count < 1 || count > 64) throw Unprocessable{"count", "count must lie in [1, 64]"};
    json shapes = json::array();
    for (const auto& z : sample_latents(model, count, seed)) shapes.push_back(shape_json(model, z));
    return {200, json{{"seed", seed}, {"shapes", shapes}}.dump()};
  }
  if (path == "/api/complete") {
    const auto flat = get_numbers(body, "points");
    if (flat.empty() || flat.size() % 3 != 0) throw Unprocessable{"points", "points must be a nonempty flat xyz array"};
    PointCloud observed;
    for (std::size_t i = 0; i < flat.size(); i += 3) observed.push_back({flat[i], flat[i + 1], flat[i + 2]});
    const auto seed = get_seed(body);
    const int k = get_int_or(body, "k", 3);
    if (k < 1 || k > 16) throw Unprocessable{"k", "k must lie in [1, 16]"};
    const double ridge = body.contains("ridge") ? get_number(body, "ridge") : 1e-3;
    if (!(ridge >= 0.0)) throw Unprocessable{"ridge", "ridge must be >= 0"};
    const auto result = cascaded_complete(model, observed, k, seed, ridge);
    json shapes = json::array();
    for (const auto& z : result.latents) shapes.push_back(shape_json(model, z));
    return {200, json{{"category", result.match.category},
                      {"name", model.category_names[static_cast<std::size_t>(result.match.category)]},
                      {"ambiguous", result.match.ambiguous},
                      {"distances", result.match.distances},
                      {"residual", result.fit.residual},
                      {"iterations", result.fit.iterations},
                      {"shapes", shapes}}
                     .dump()};
  }
  if (path == "/api/interpolate") {
    const auto a = parse_latent(model, body, "shapeA");
    const auto b = parse_latent(model, body, "shapeB");
    const int row = get_int(body, "row");
    if (row < 0 || row >= model.layout.m || !a.mask[static_cast<std::size_t>(row)]) {
      throw Unprocessable{"row", "row must index a real part of shapeA"};
    }
    const double alpha = get_number(body, "alpha");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Unprocessable{"alpha", "alpha must lie in [0, 1]"};
    const int category = classify_rows(a, model.codebook, model.layout)[static_cast<std::size_t>(row)];
    return {200, shape_json(model, interpolate_part(model, a, b, category, alpha)).dump()};
  }
  if (path == "/api/edit/add" || path == "/api/edit/replace") {
    const auto shape = parse_latent(model, body, "shape");
    const int c = parse_category(model, body);
    const auto z = parse_z(model, body);
    const auto out = path == "/api/edit/add" ? add_part(model, shape, c, z) : replace_part(model, shape, c, z);
    return {200, shape_json(model, out).dump()};
  }
  return error_response(404, "not_found", "no route for POST " + path);
}

}  // namespace

ShapeService::ShapeService(Model model) : model_(std::move(model)) { model_.validate(); }

HttpResponse ShapeService::handle(const std::string& method, const std::string& path, const std::string& body) const {
  try {
    return route(model_, method, path, body);
  } catch (const BadRequest& e) {
    return error_response(400, "malformed_request", e.message, e.field);
  } catch (const Unprocessable& e) {
    return error_response(422, "invalid_field", e.message, e.field);
  } catch (const NumericalError& e) {
    return error_response(500, "numerical_failure", e.what());
  } catch (const ValidationError& e) {
    return error_response(422, "domain_violation", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "malformed_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal_error", e.what());
  }
}

void ShapeService::configure(httplib::Server& server) const {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const auto out = handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  server.Get(R"(/api/.*)", forward);
  server.Post(R"(/api/.*)", forward);
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

bool ShapeService::serve(const std::string& host, int port) const {
  httplib::Server server;
  configure(server);
  return server.listen(host, port);
}

}  // namespace shapeset
