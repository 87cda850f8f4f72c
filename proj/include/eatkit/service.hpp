#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "eatkit/error.hpp"

namespace eatkit {

struct ServiceOptions {
  std::string bind_address = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// Stage documents are written here when non-empty.
  std::filesystem::path state_dir;
  /// Min-tradeoff worker threads; 0 means the CPU count.
  unsigned workers = 0;
};

/// {"error": {"code", "message", "kind"}}
nlohmann::json error_body(const Error& e);
/// 400 for validation and I/O errors, 422 for solver failures.
int http_status(const Error& e);

/// HTTP front end over the pipeline stages:
///   POST /data-config, POST /parse-data, GET|POST /certificate,
///   POST /min-tradeoff, GET /jobs/{id}, POST /rates, GET /rates/{id}/grid
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace eatkit
