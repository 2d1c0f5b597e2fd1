#pragma once

#include <memory>
#include <string>

#include "memeface/service.hpp"

namespace memeface::service {

// JSON over HTTP in front of a DemoService:
//   POST /generate     JSON, or server-sent events when "stream" is true or
//                      the client sends Accept: text/event-stream
//   GET  /checkpoints  [{epoch, file, sha256}]
//   GET  /templates    [{id, members, thumbnail_b64}]
//   GET  /health
class HttpServer {
 public:
  explicit HttpServer(DemoService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace memeface::service
