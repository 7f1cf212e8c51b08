#ifndef ASSIST_SERVICE_HTTP_HPP_
#define ASSIST_SERVICE_HTTP_HPP_

#include <atomic>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

// Eigen (via service.hpp) must come before httplib: <resolv.h> defines a _res macro.
#include "assist/core/encoding.hpp"
#include "assist/service/service.hpp"

#include <httplib.h>
#include <json.hpp>

namespace assist::service {

struct HttpOptions {
  std::size_t max_upload_bytes = 8u << 20;
  std::filesystem::path static_dir;
};

namespace http_detail {

inline void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

inline std::string authorization(const httplib::Request& req) {
  return req.get_header_value("Authorization");
}

// Accepts multipart field "image", a JSON body with "image_base64", or a raw PNG body.
inline std::optional<std::vector<std::uint8_t>> upload_bytes(const httplib::Request& req,
                                                              std::string& problem) {
  if (req.is_multipart_form_data()) {
    if (!req.has_file("image")) {
      problem = "multipart upload needs an 'image' field";
      return std::nullopt;
    }
    const auto& c = req.get_file_value("image").content;
    return std::vector<std::uint8_t>(c.begin(), c.end());
  }
  const auto type = req.get_header_value("Content-Type");
  if (type.starts_with("application/json")) {
    try {
      const auto j = nlohmann::json::parse(req.body);
      if (!j.contains("image_base64") || !j["image_base64"].is_string()) {
        problem = "JSON upload needs an 'image_base64' string";
        return std::nullopt;
      }
      return base64_decode(j["image_base64"].get<std::string>());
    } catch (const std::exception& e) {
      problem = std::string("bad JSON upload: ") + e.what();
      return std::nullopt;
    }
  }
  return std::vector<std::uint8_t>(req.body.begin(), req.body.end());
}

}  // namespace http_detail

// Binds an AssistService to an httplib server. The service must outlive the server.
class HttpServer {
 public:
  HttpServer(AssistService& service, HttpOptions options) : service_(service), options_(std::move(options)) {
    using httplib::Request;
    using Res = httplib::Response;
    using namespace http_detail;
    server_.set_payload_max_length(options_.max_upload_bytes);
    server_.set_error_handler([](const Request&, Res& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 413 ? "payload_too_large"
                               : res.status == 404 ? "not_found"
                                                   : "http_error";
      res.set_content(nlohmann::json{{"error", {{"code", code}, {"message", httplib::status_message(res.status)}}}}.dump(),
                      "application/json");
    });
    server_.set_exception_handler([](const Request&, Res& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, error_response(500, "internal_error", what));
    });

    server_.Post("/api/v1/predict", [this](const Request& req, Res& res) {
      const auto auth = authorization(req);
      if (!service_.authenticate(auth)) return send(res, service_.predict(auth, {}));
      std::string problem;
      const auto bytes = upload_bytes(req, problem);
      if (!bytes) return send(res, error_response(422, "invalid_upload", problem));
      send(res, service_.predict(auth, *bytes));
    });
    server_.Post("/api/v1/feedback", [this](const Request& req, Res& res) {
      send(res, service_.feedback(authorization(req), req.body));
    });
    server_.Post("/api/v1/reads", [this](const Request& req, Res& res) {
      send(res, service_.record_read(authorization(req), req.body));
    });
    server_.Get("/api/v1/assignments", [this](const Request& req, Res& res) {
      send(res, service_.assignments(authorization(req)));
    });
    server_.Get("/api/v1/health", [this](const Request&, Res& res) { send(res, service_.health()); });
    server_.Get("/api/v1/export/reads", [this](const Request& req, Res& res) {
      send(res, service_.export_reads(authorization(req)));
    });
    server_.Get("/api/v1/export/feedback", [this](const Request& req, Res& res) {
      send(res, service_.export_feedback(authorization(req)));
    });
    if (!options_.static_dir.empty() && !server_.set_mount_point("/", options_.static_dir.string()))
      throw IoError("static directory not found: " + options_.static_dir.string());
  }

  // port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  // Blocks until stop().
  void listen() {
    if (!server_.listen_after_bind()) throw IoError("server stopped unexpectedly");
  }

  void stop() { server_.stop(); }
  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  AssistService& service_;
  HttpOptions options_;
  httplib::Server server_;
};

}  // namespace assist::service

#endif  // ASSIST_SERVICE_HTTP_HPP_
