#include "memeface/http_server.hpp"

#include <httplib.h>

#include <stdexcept>

namespace memeface::service {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string sse_event(const std::string& name, const nlohmann::json& data) {
  return "event: " + name + "\ndata: " + data.dump() + "\n\n";
}

bool wants_stream(const httplib::Request& req, const GenerateRequest& g) {
  if (g.stream) return true;
  const std::string accept = req.get_header_value("Accept");
  return accept.find("text/event-stream") != std::string::npos;
}

nlohmann::json checkpoint_list(const DemoService& service) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : service.checkpoints()) {
    out.push_back({{"epoch", c.epoch}, {"file", c.path.filename().string()}, {"sha256", c.digest}});
  }
  return out;
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(DemoService& s) : service(s) {}

  DemoService& service;
  httplib::Server server;
  bool bound = false;

  void routes();
  void generate(const httplib::Request& req, httplib::Response& res);
};

void HttpServer::Impl::routes() {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Accept");
    res.status = 204;
  });
  server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, service.health());
  });
  server.Get("/checkpoints", [this](const httplib::Request&, httplib::Response& res) {
    try {
      send_json(res, 200, checkpoint_list(service));
    } catch (const std::exception& e) {
      send_json(res, 503, {{"error", e.what()}});
    }
  });
  server.Get("/templates", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, service.templates());
  });
  server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) { generate(req, res); });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send_json(res, 500, {{"error", what}});
  });
}

void HttpServer::Impl::generate(const httplib::Request& req, httplib::Response& res) {
  GenerateRequest g;
  try {
    const auto body = nlohmann::json::parse(req.body);
    g = parse_generate_request(body);
    service.check_request(g);
  } catch (const nlohmann::json::parse_error& e) {
    send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
    return;
  } catch (const ServiceError& e) {
    send_json(res, e.status(), e.body());
    return;
  }

  if (!wants_stream(req, g)) {
    try {
      send_json(res, 200, to_json(service.generate(g)));
    } catch (const ServiceError& e) {
      send_json(res, e.status(), e.body());
    }
    return;
  }

  // Headers are committed before the first frame, so late failures arrive
  // as an "error" event instead of a status code.
  res.set_header("Cache-Control", "no-cache");
  res.set_chunked_content_provider("text/event-stream", [this, g](std::size_t, httplib::DataSink& sink) {
    auto emit = [&sink](const std::string& chunk) {
      if (!sink.write(chunk.data(), chunk.size())) throw std::runtime_error("client disconnected");
    };
    try {
      const GenerateResponse r = service.generate(g, [&](const Frame* frame, const std::string& line) {
        if (frame) {
          nlohmann::json j = to_json(*frame);
          j["log"] = line;
          emit(sse_event("frame", j));
        } else {
          emit(sse_event("log", {{"line", line}}));
        }
      });
      emit(sse_event("done", {{"frames", r.frames.size()},
                              {"resolution", r.resolution},
                              {"seed", r.seed},
                              {"template_id", r.template_id}}));
    } catch (const ServiceError& e) {
      nlohmann::json body = e.body();
      body["status"] = e.status();
      try {
        emit(sse_event("error", body));
      } catch (const std::exception&) {
      }
    } catch (const std::exception&) {
      // client went away
    }
    sink.done();
    return true;
  });
}

HttpServer::HttpServer(DemoService& service) : impl_(std::make_unique<Impl>(service)) { impl_->routes(); }

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound_port = port;
  if (port == 0) {
    bound_port = impl_->server.bind_to_any_port(host);
    if (bound_port < 0) throw std::runtime_error("cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return bound_port;
}

void HttpServer::serve() {
  if (!impl_->bound) throw std::logic_error("HttpServer::serve before bind");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() { impl_->server.stop(); }

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace memeface::service
