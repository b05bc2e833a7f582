#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "softseg/predictor.hpp"

namespace softseg::app {

struct ServiceOptions {
  std::size_t pixel_budget = std::size_t{1} << 22;  // per image
  std::size_t cache_capacity = 16;                   // decompositions kept for /api/recolor
  std::size_t max_body_bytes = std::size_t{256} << 20;
  std::string static_dir;  // optional web UI root served at /
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// JSON-over-HTTP front end for decomposition. Weights are fixed at
/// construction; handlers are safe to call concurrently.
class Service {
 public:
  Service(ModelWeights weights, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Transport-free handlers; bodies are JSON documents.
  Response health() const;
  Response palette(const std::string& body) const;
  Response decompose(const std::string& body);
  /// Multipart form: "image" (raw PNG/JPEG bytes), "palette" (palette text
  /// or JSON array), optional "options" (JSON object).
  Response decompose_multipart(const std::string& image, const std::string& palette, const std::string& options);
  Response recolor(const std::string& body);
  Response metrics(const std::string& body);

  const std::string& weights_hash() const;

  /// Binds to host:port (0 picks a free port) and serves on a background
  /// thread; returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace softseg::app
