#pragma once

#include <string>

#include "shapeset/diffusion.hpp"

namespace httplib {
class Server;
}

namespace shapeset {

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

/// JSON API over one immutable model. `handle` is transport-free so it can be
/// exercised directly; `serve` binds it to an HTTP listener.
class ShapeService {
 public:
  explicit ShapeService(Model model);

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  /// Installs the API routes and permissive CORS headers on `server`.
  void configure(httplib::Server& server) const;

  /// Blocks until the listener stops. Returns false if binding failed.
  bool serve(const std::string& host, int port) const;

  const Model& model() const { return model_; }

 private:
  Model model_;
};

}  // namespace shapeset
