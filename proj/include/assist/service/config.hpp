#ifndef ASSIST_SERVICE_CONFIG_HPP_
#define ASSIST_SERVICE_CONFIG_HPP_

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"

namespace assist::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint;
  std::string tokens;
  std::string event_log = "events.jsonl";
  std::string design;      // optional study design for read endpoints
  std::string static_dir;  // optional web bundle served at /
  std::size_t max_upload_bytes = 8u << 20;
  std::size_t max_pixels = 4096u * 4096u;
  double cam_alpha = 0.5;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ServiceConfig, host, port, checkpoint, tokens,
                                                event_log, design, static_dir, max_upload_bytes,
                                                max_pixels, cam_alpha)

// ASSIST_HOST, ASSIST_PORT, ASSIST_CHECKPOINT, ASSIST_TOKENS, ASSIST_EVENT_LOG,
// ASSIST_DESIGN and ASSIST_STATIC_DIR override the file values.
inline void apply_env_overrides(ServiceConfig& c) {
  auto env = [](const char* name) -> const char* { return std::getenv(name); };
  if (auto v = env("ASSIST_HOST")) c.host = v;
  if (auto v = env("ASSIST_PORT")) {
    try {
      c.port = std::stoi(v);
    } catch (const std::exception&) {
      throw PreconditionError(std::string("ASSIST_PORT is not a number: ") + v);
    }
  }
  if (auto v = env("ASSIST_CHECKPOINT")) c.checkpoint = v;
  if (auto v = env("ASSIST_TOKENS")) c.tokens = v;
  if (auto v = env("ASSIST_EVENT_LOG")) c.event_log = v;
  if (auto v = env("ASSIST_DESIGN")) c.design = v;
  if (auto v = env("ASSIST_STATIC_DIR")) c.static_dir = v;
}

inline ServiceConfig load_service_config(const std::filesystem::path& file) {
  ServiceConfig c;
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) throw IoError("missing service config " + file.string());
    c = nlohmann::json::parse(read_text(file)).get<ServiceConfig>();
  }
  apply_env_overrides(c);
  require(c.port >= 0 && c.port <= 65535, "port out of range");
  require(c.cam_alpha >= 0.0 && c.cam_alpha <= 1.0, "cam_alpha must be in [0, 1]");
  return c;
}

// Token file: JSON object mapping bearer token -> user id.
inline std::map<std::string, std::string> load_tokens(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw IoError("missing token file " + file.string());
  const auto j = nlohmann::json::parse(read_text(file));
  require(j.is_object(), "token file must be a JSON object of token -> user");
  auto tokens = j.get<std::map<std::string, std::string>>();
  for (const auto& [tok, user] : tokens) require(!tok.empty() && !user.empty(), "empty token or user id");
  return tokens;
}

}  // namespace assist::service

#endif  // ASSIST_SERVICE_CONFIG_HPP_
