#ifndef ASSIST_SERVICE_SERVICE_HPP_
#define ASSIST_SERVICE_SERVICE_HPP_

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/cam/cam.hpp"
#include "assist/core/encoding.hpp"
#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/infer/aggregate.hpp"
#include "assist/infer/predict.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/service/config.hpp"
#include "assist/service/event_log.hpp"
#include "assist/study/design.hpp"
#include "assist/study/records.hpp"

namespace assist::service {

using nlohmann::json;

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

inline Response json_response(int status, const json& body) {
  return {status, "application/json", body.dump()};
}

inline Response error_response(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}}}});
}

// RFC 4180 quoting for free-text fields.
inline std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\r\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Prediction {
  std::string user;
  double hcc = 0.0;
  double cc = 0.0;
};

struct FeedbackEntry {
  std::uint64_t sequence = 0;
  std::string timestamp;
  std::string request_id;
  std::string user;
  std::optional<bool> agree;
  std::string comment;
};

// Everything the service knows, rebuilt purely from events.
struct ServiceState {
  std::map<std::string, Prediction> predictions;
  std::vector<FeedbackEntry> feedback;
  std::vector<study::ReadRecord> reads;
  std::set<std::string> completed;  // assignment ids with a recorded read

  void apply(const Event& e) {
    const auto& p = e.payload;
    if (e.type == "predict") {
      predictions[p.at("request_id").get<std::string>()] = {
          p.at("user").get<std::string>(), p.at("probabilities").at("hcc").get<double>(),
          p.at("probabilities").at("cc").get<double>()};
    } else if (e.type == "feedback") {
      FeedbackEntry f{e.sequence, e.timestamp, p.at("request_id").get<std::string>(),
                      p.at("user").get<std::string>(), std::nullopt, p.value("comment", "")};
      if (p.contains("agree") && !p["agree"].is_null()) f.agree = p["agree"].get<bool>();
      feedback.push_back(std::move(f));
    } else if (e.type == "read") {
      completed.insert(p.at("assignment_id").get<std::string>());
      reads.push_back(p.at("record").get<study::ReadRecord>());
    } else {
      throw FormatError("unknown event type '" + e.type + "' at sequence " + std::to_string(e.sequence));
    }
  }
};

struct ServiceOptions {
  double cam_alpha = 0.5;
  std::size_t max_pixels = 4096u * 4096u;
};

class AssistService {
 public:
  AssistService(std::shared_ptr<const nn::Checkpoint> checkpoint, std::string checkpoint_id,
                std::map<std::string, std::string> tokens, std::optional<study::StudyDesign> design,
                const std::filesystem::path& event_log, ServiceOptions options = {})
      : checkpoint_(std::move(checkpoint)),
        checkpoint_id_(std::move(checkpoint_id)),
        tokens_(std::move(tokens)),
        design_(std::move(design)),
        log_(event_log),
        options_(options),
        started_(std::chrono::steady_clock::now()) {
    if (design_) {
      const auto violations = study::validate_design(*design_);
      if (!violations.empty())
        throw PreconditionError("study design is invalid: " + violations.front().rule + " (" +
                                violations.front().detail + ")");
      for (const auto& a : study::all_assignments(*design_)) assignments_.emplace(a.id, a);
    }
    for (const auto& e : log_.replayed()) state_.apply(e);
  }

  static std::unique_ptr<AssistService> from_config(const ServiceConfig& c) {
    std::shared_ptr<const nn::Checkpoint> ck;
    std::string id;
    if (!c.checkpoint.empty()) {
      const auto bytes = read_file(c.checkpoint);
      ck = std::make_shared<const nn::Checkpoint>(nn::deserialize(bytes));
      id = sha256_hex(bytes);
    }
    require(!c.tokens.empty(), "a token file is required");
    std::optional<study::StudyDesign> design;
    if (!c.design.empty()) design = study::load_design(c.design);
    return std::make_unique<AssistService>(ck, id, load_tokens(c.tokens), std::move(design),
                                           c.event_log, ServiceOptions{c.cam_alpha, c.max_pixels});
  }

  // "Bearer <token>" -> user id.
  std::optional<std::string> authenticate(const std::string& authorization) const {
    static constexpr std::string_view kPrefix = "Bearer ";
    if (authorization.size() <= kPrefix.size() || authorization.compare(0, kPrefix.size(), kPrefix) != 0)
      return std::nullopt;
    auto it = tokens_.find(authorization.substr(kPrefix.size()));
    if (it == tokens_.end()) return std::nullopt;
    return it->second;
  }

  Response predict(const std::string& authorization, std::span<const std::uint8_t> image) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto user = authenticate(authorization);
    if (!user) return unauthorized();
    if (!checkpoint_) return error_response(503, "model_unavailable", "no model is loaded");
    RgbImage upload;
    try {
      upload = decode_png(image, options_.max_pixels);
    } catch (const ImageTooLarge& e) {
      return error_response(413, "image_too_large", e.what());
    } catch (const std::exception& e) {
      return error_response(422, "undecodable_image", e.what());
    }
    const auto& ck = *checkpoint_;
    const auto e = infer::explain_patch(ck, infer::prepare_patch(ck, upload));
    json cams = json::object();
    for (const auto* h : {&e.hcc, &e.cc}) {
      const auto map = cam::upsample(h->scaled.map, std::size_t(upload.height), std::size_t(upload.width));
      RgbImage heat(upload.width, upload.height), intensity(upload.width, upload.height);
      for (int y = 0; y < upload.height; ++y)
        for (int x = 0; x < upload.width; ++x) {
          const double m = std::clamp(map[std::size_t(y) * upload.width + x], 0.0, 1.0);
          const auto c = cam::colormap(m);
          const auto g = static_cast<std::uint8_t>(std::lround(m * 255.0));
          for (int k = 0; k < 3; ++k) {
            heat.at(x, y, k) = c[k];
            intensity.at(x, y, k) = g;
          }
        }
      cams[patch::label_name(h->cls)] = {
          {"overlay_png_base64", base64_encode(encode_png(cam::overlay(upload, map, options_.cam_alpha)))},
          {"heatmap_png_base64", base64_encode(encode_png(heat))},
          {"intensity_png_base64", base64_encode(encode_png(intensity))},
          {"alpha", options_.cam_alpha},
          {"raw_min", h->scaled.raw_min},
          {"raw_max", h->scaled.raw_max},
          {"probability", h->probability},
          {"feature_height", h->raw.dim(0)},
          {"feature_width", h->raw.dim(1)},
          {"width", upload.width},
          {"height", upload.height}};
    }
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::string request_id;
    {
      std::lock_guard lock(mu_);
      request_id = "req-" + std::to_string(log_.next_sequence());
      json payload = {{"request_id", request_id},
                      {"user", *user},
                      {"checkpoint_id", checkpoint_id_},
                      {"probabilities", {{"hcc", e.probabilities.hcc}, {"cc", e.probabilities.cc}}},
                      {"image_sha256", sha256_hex(image)},
                      {"width", upload.width},
                      {"height", upload.height},
                      {"latency_ms", latency}};
      state_.apply(log_.append("predict", std::move(payload)));
    }
    return json_response(
        200, {{"request_id", request_id},
              {"probabilities", {{"hcc", e.probabilities.hcc}, {"cc", e.probabilities.cc}}},
              {"verdict", patch::label_name(e.probabilities.label())},
              {"cams", cams},
              {"checkpoint_id", checkpoint_id_},
              {"input", {{"width", upload.width},
                         {"height", upload.height},
                         {"model_input", ck.model.config.input_size},
                         {"resized", upload.width != ck.model.config.input_size ||
                                         upload.height != ck.model.config.input_size}}},
              {"latency_ms", latency}});
  }

  Response feedback(const std::string& authorization, const std::string& body) {
    const auto user = authenticate(authorization);
    if (!user) return unauthorized();
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception&) {
      return error_response(400, "bad_json", "request body is not valid JSON");
    }
    if (!j.is_object() || !j.contains("request_id") || !j["request_id"].is_string())
      return error_response(422, "invalid_feedback", "request_id (string) is required");
    const bool has_agree = j.contains("agree") && j["agree"].is_boolean();
    const bool has_comment = j.contains("comment") && j["comment"].is_string();
    if (j.contains("agree") && !has_agree && !j["agree"].is_null())
      return error_response(422, "invalid_feedback", "agree must be a boolean");
    if (!has_agree && !(has_comment && !j["comment"].get<std::string>().empty()))
      return error_response(422, "invalid_feedback", "feedback needs an agree flag or a comment");
    const auto request_id = j["request_id"].get<std::string>();
    std::lock_guard lock(mu_);
    if (!state_.predictions.count(request_id))
      return error_response(404, "unknown_request", "no prediction with id " + request_id);
    json payload = {{"request_id", request_id},
                    {"user", *user},
                    {"agree", has_agree ? json(j["agree"].get<bool>()) : json()},
                    {"comment", has_comment ? j["comment"].get<std::string>() : ""}};
    const auto e = log_.append("feedback", std::move(payload));
    state_.apply(e);
    return json_response(200, {{"status", "recorded"}, {"sequence", e.sequence}});
  }

  // Assistance status always comes from the design, never from the client.
  Response record_read(const std::string& authorization, const std::string& body) {
    const auto user = authenticate(authorization);
    if (!user) return unauthorized();
    if (!design_) return error_response(503, "no_study", "no study design is loaded");
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception&) {
      return error_response(400, "bad_json", "request body is not valid JSON");
    }
    if (!j.is_object() || !j.contains("assignment_id") || !j["assignment_id"].is_string())
      return error_response(422, "invalid_read", "assignment_id (string) is required");
    const auto assignment_id = j["assignment_id"].get<std::string>();
    auto it = assignments_.find(assignment_id);
    if (it == assignments_.end())
      return error_response(404, "unknown_assignment", "no study assignment " + assignment_id);
    const auto& a = it->second;
    if (a.reader_id != *user)
      return error_response(403, "wrong_reader", "assignment belongs to another reader");
    patch::Label diagnosis;
    try {
      diagnosis = patch::parse_label(j.value("diagnosis", ""));
    } catch (const std::exception&) {
      return error_response(422, "invalid_read", "diagnosis must be HCC or CC");
    }
    std::vector<std::string> refs;
    if (j.contains("prediction_request_id") && !j["prediction_request_id"].is_null()) {
      if (!j["prediction_request_id"].is_string())
        return error_response(422, "invalid_read", "prediction_request_id must be a string");
      refs.push_back(j["prediction_request_id"].get<std::string>());
    }
    if (j.contains("prediction_request_ids") && !j["prediction_request_ids"].is_null()) {
      if (!j["prediction_request_ids"].is_array())
        return error_response(422, "invalid_read", "prediction_request_ids must be an array");
      for (const auto& v : j["prediction_request_ids"]) {
        if (!v.is_string()) return error_response(422, "invalid_read", "prediction ids must be strings");
        refs.push_back(v.get<std::string>());
      }
    }

    std::lock_guard lock(mu_);
    if (state_.completed.count(assignment_id))
      return error_response(409, "duplicate_read", "a read for " + assignment_id + " is already recorded");
    if (!a.assisted && !refs.empty())
      return error_response(422, "protocol_violation",
                            "unassisted assignment must not reference a model prediction");
    if (a.assisted && refs.empty())
      return error_response(422, "protocol_violation",
                            "assisted assignment must reference the prediction(s) shown");
    std::vector<double> hcc;
    for (const auto& r : refs) {
      auto p = state_.predictions.find(r);
      if (p == state_.predictions.end() || p->second.user != *user)
        return error_response(422, "protocol_violation", "prediction " + r + " was not issued to this reader");
      hcc.push_back(p->second.hcc);
    }
    const auto& reader = design_->readers[design_->reader_index(a.reader_id)];
    study::ReadRecord rec;
    rec.reader_id = reader.id;
    rec.subgroup = reader.subgroup;
    rec.order = reader.order;
    rec.slide_id = a.slide_id;
    rec.test = a.test;
    rec.block = a.block;
    rec.position = a.position;
    rec.practice = a.practice;
    rec.assisted = a.assisted;
    rec.diagnosis = diagnosis;
    rec.reference = a.reference;
    if (a.assisted) rec.model_verdict = infer::aggregate_slide(hcc).label;
    rec.grade = a.grade;
    rec.timestamp = utc_now();
    const auto e = log_.append("read", {{"assignment_id", assignment_id},
                                        {"prediction_request_ids", refs},
                                        {"record", rec}});
    state_.apply(e);
    return json_response(200, {{"status", "recorded"},
                                {"sequence", e.sequence},
                                {"assignment_id", assignment_id},
                                {"assisted", a.assisted}});
  }

  // The caller's schedule in reading order with completion status.
  Response assignments(const std::string& authorization) const {
    const auto user = authenticate(authorization);
    if (!user) return unauthorized();
    if (!design_) return error_response(503, "no_study", "no study design is loaded");
    std::size_t ri;
    try {
      ri = design_->reader_index(*user);
    } catch (const PreconditionError&) {
      return error_response(404, "not_a_reader", "user " + *user + " has no study assignments");
    }
    std::lock_guard lock(mu_);
    json list = json::array();
    std::optional<std::string> next;
    for (const auto& a : study::assignments_for(*design_, ri)) {
      const bool done = state_.completed.count(a.id) > 0;
      if (!done && !next) next = a.id;
      list.push_back({{"assignment_id", a.id},
                      {"slide_id", a.slide_id},
                      {"practice", a.practice},
                      {"test", a.test},
                      {"block", a.block},
                      {"position", a.position},
                      {"assisted", a.assisted},
                      {"completed", done}});
    }
    const auto& r = design_->readers[ri];
    return json_response(200, {{"reader", {{"id", r.id}, {"subgroup", r.subgroup}, {"order", r.order}}},
                               {"next", next ? json(*next) : json()},
                               {"assignments", list}});
  }

  Response health() const {
    const double uptime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return json_response(200, {{"status", checkpoint_ ? "ok" : "degraded"},
                               {"model_loaded", checkpoint_ != nullptr},
                               {"checkpoint_id", checkpoint_id_},
                               {"uptime_s", uptime},
                               {"events", log_.count()},
                               {"design_loaded", design_.has_value()}});
  }

  std::string reads_csv() const {
    std::lock_guard lock(mu_);
    return study::records_csv(state_.reads);
  }

  std::string feedback_csv() const {
    std::lock_guard lock(mu_);
    std::ostringstream os;
    os << "sequence,timestamp,request_id,user_id,agree,comment\n";
    for (const auto& f : state_.feedback)
      os << f.sequence << ',' << f.timestamp << ',' << csv_field(f.request_id) << ','
         << csv_field(f.user) << ',' << (f.agree ? (*f.agree ? "1" : "0") : "") << ','
         << csv_field(f.comment) << '\n';
    return os.str();
  }

  Response export_reads(const std::string& authorization) const {
    if (!authenticate(authorization)) return unauthorized();
    return {200, "text/csv", reads_csv()};
  }

  Response export_feedback(const std::string& authorization) const {
    if (!authenticate(authorization)) return unauthorized();
    return {200, "text/csv", feedback_csv()};
  }

  std::uint64_t event_count() const { return log_.count(); }
  const std::string& checkpoint_id() const { return checkpoint_id_; }
  const std::shared_ptr<const nn::Checkpoint>& checkpoint() const { return checkpoint_; }

 private:
  static Response unauthorized() {
    return error_response(401, "unauthorized", "missing or invalid bearer token");
  }

  std::shared_ptr<const nn::Checkpoint> checkpoint_;
  std::string checkpoint_id_;
  std::map<std::string, std::string> tokens_;
  std::optional<study::StudyDesign> design_;
  std::map<std::string, study::Assignment> assignments_;
  EventLog log_;
  ServiceOptions options_;
  std::chrono::steady_clock::time_point started_;
  mutable std::mutex mu_;
  ServiceState state_;
};

}  // namespace assist::service

#endif  // ASSIST_SERVICE_SERVICE_HPP_
