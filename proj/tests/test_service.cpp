#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "assist/infer/aggregate.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/service/config.hpp"
#include "assist/service/service.hpp"
#include "assist/service/http.hpp"
#include "oracles.hpp"
#include "sim_support.hpp"

using namespace assist;
using service::AssistService;
using nlohmann::json;

namespace {

const std::map<std::string, std::string> kTokens{
    {"tok-r01", "R01"}, {"tok-r02", "R02"}, {"tok-admin", "admin"}};
const std::string kR01 = "Bearer tok-r01";
const std::string kR02 = "Bearer tok-r02";

std::vector<std::uint8_t> noise_png(int w, int h, std::uint64_t seed) {
  RgbImage img(w, h);
  auto rng = CounterRng::stream(seed, "upload");
  for (auto& p : img.pixels) p = std::uint8_t(rng.uniform_int(256));
  return encode_png(img);
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = oracle::scratch(::testing::UnitTest::GetInstance()->current_test_info()->name());
    nn::Checkpoint ck;
    ck.model = nn::init_model<float>(nn::NetworkConfig::toy(), 5);
    ck.norm = {{120, 120, 120}, {70, 70, 70}};
    checkpoint_path_ = dir_ / "model.ck";
    nn::save_checkpoint(checkpoint_path_, ck);
    checkpoint_ = std::make_shared<const nn::Checkpoint>(nn::load_checkpoint(checkpoint_path_));
    design_ = sim::design(1);
    reopen();
  }

  void reopen(service::ServiceOptions opt = {}) {
    svc_.reset();
    svc_ = std::make_unique<AssistService>(checkpoint_, "ck-test", kTokens, design_, dir_ / "events.jsonl", opt);
  }

  static json body(const service::Response& r) { return json::parse(r.body); }

  std::string predict_id(const std::string& auth, std::uint64_t seed = 1) {
    const auto r = svc_->predict(auth, noise_png(8, 8, seed));
    EXPECT_EQ(r.status, 200) << r.body;
    return body(r).at("request_id");
  }

  // First assignment of R01 with the requested assistance status.
  study::Assignment assignment(bool assisted, bool practice = false) const {
    for (const auto& a : study::assignments_for(design_, 0))
      if (a.assisted == assisted && a.practice == practice) return a;
    throw std::logic_error("no such assignment");
  }

  std::filesystem::path dir_, checkpoint_path_;
  std::shared_ptr<const nn::Checkpoint> checkpoint_;
  study::StudyDesign design_;
  std::unique_ptr<AssistService> svc_;
};

TEST_F(ServiceTest, RejectsMissingOrUnknownTokensWithoutLogging) {
  const auto png = noise_png(8, 8, 1);
  for (const std::string auth : {"", "tok-r01", "Bearer ", "Bearer nope", "Basic tok-r01"}) {
    EXPECT_EQ(svc_->predict(auth, png).status, 401) << auth;
    EXPECT_EQ(svc_->feedback(auth, R"({"request_id":"req-1","agree":true})").status, 401);
    EXPECT_EQ(svc_->record_read(auth, R"({"assignment_id":"R01-P-0","diagnosis":"HCC"})").status, 401);
    EXPECT_EQ(svc_->assignments(auth).status, 401);
    EXPECT_EQ(svc_->export_reads(auth).status, 401);
    EXPECT_EQ(svc_->export_feedback(auth).status, 401);
  }
  EXPECT_EQ(svc_->event_count(), 0u);
  EXPECT_EQ(body(svc_->predict("", png)).at("error").at("code"), "unauthorized");
}

TEST_F(ServiceTest, PredictReturnsProbabilitiesAndBothCams) {
  const auto png = noise_png(20, 12, 2);
  const auto r = svc_->predict(kR01, png);
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(r.content_type, "application/json");
  const auto j = body(r);
  const double hcc = j.at("probabilities").at("hcc"), cc = j.at("probabilities").at("cc");
  EXPECT_NEAR(hcc + cc, 1.0, 1e-12);
  EXPECT_EQ(j.at("verdict"), hcc > 0.5 ? "HCC" : "CC");
  EXPECT_EQ(j.at("checkpoint_id"), "ck-test");
  EXPECT_TRUE(j.at("input").at("resized").get<bool>());
  for (const char* cls : {"HCC", "CC"}) {
    const auto& c = j.at("cams").at(cls);
    for (const char* key : {"overlay_png_base64", "heatmap_png_base64", "intensity_png_base64"}) {
      const auto img = decode_png(base64_decode(c.at(key).get<std::string>()));
      EXPECT_EQ(img.width, 20);
      EXPECT_EQ(img.height, 12);
    }
    EXPECT_DOUBLE_EQ(c.at("probability").get<double>(), std::string(cls) == "HCC" ? hcc : cc);
  }
  EXPECT_EQ(svc_->event_count(), 1u);
}

TEST_F(ServiceTest, PredictMatchesOfflineInference) {
  const auto png = noise_png(8, 8, 3);
  const auto j = body(svc_->predict(kR01, png));
  const auto offline = infer::predict_patch(*checkpoint_, infer::prepare_patch(*checkpoint_, decode_png(png)));
  EXPECT_DOUBLE_EQ(j.at("probabilities").at("hcc").get<double>(), offline.hcc);
}

TEST_F(ServiceTest, RepeatedUploadsGetDistinctIdsAndIdenticalProbabilities) {
  const auto png = noise_png(8, 8, 4);
  std::set<std::string> ids;
  std::optional<double> first;
  for (int i = 0; i < 5; ++i) {
    const auto j = body(svc_->predict(kR01, png));
    EXPECT_TRUE(ids.insert(j.at("request_id")).second);
    const double p = j.at("probabilities").at("hcc");
    if (!first) first = p;
    EXPECT_EQ(p, *first);
  }
}

TEST_F(ServiceTest, PredictErrorStatuses) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4};
  EXPECT_EQ(svc_->predict(kR01, junk).status, 422);
  EXPECT_EQ(body(svc_->predict(kR01, junk)).at("error").at("code"), "undecodable_image");
  reopen({0.5, 100});
  EXPECT_EQ(svc_->predict(kR01, noise_png(20, 20, 1)).status, 413);
  EXPECT_EQ(svc_->predict(kR01, noise_png(10, 10, 1)).status, 200);
  AssistService no_model(nullptr, "", kTokens, std::nullopt, dir_ / "other.jsonl");
  EXPECT_EQ(no_model.predict(kR01, noise_png(8, 8, 1)).status, 503);
  EXPECT_EQ(body(no_model.health()).at("status"), "degraded");
  EXPECT_EQ(no_model.record_read(kR01, "{}").status, 503);
}

TEST_F(ServiceTest, FeedbackValidationAndExportOrder) {
  const auto id = predict_id(kR01);
  EXPECT_EQ(svc_->feedback(kR01, "not json").status, 400);
  EXPECT_EQ(svc_->feedback(kR01, R"({"request_id":"req-999","agree":true})").status, 404);
  EXPECT_EQ(svc_->feedback(kR01, json{{"request_id", id}}.dump()).status, 422);
  EXPECT_EQ(svc_->feedback(kR01, json{{"request_id", id}, {"comment", ""}}.dump()).status, 422);
  EXPECT_EQ(svc_->feedback(kR01, json{{"request_id", id}, {"agree", "yes"}}.dump()).status, 422);
  EXPECT_EQ(svc_->feedback(kR01, json{{"request_id", id}, {"agree", false}}.dump()).status, 200);
  EXPECT_EQ(svc_->feedback(kR02, json{{"request_id", id}, {"comment", "looks, \"odd\""}}.dump()).status, 200);
  const auto csv = svc_->export_feedback(kR01);
  EXPECT_EQ(csv.content_type, "text/csv");
  std::istringstream is(csv.body);
  std::string header, l1, l2;
  std::getline(is, header);
  std::getline(is, l1);
  std::getline(is, l2);
  EXPECT_EQ(header, "sequence,timestamp,request_id,user_id,agree,comment");
  EXPECT_TRUE(l1.starts_with("2,"));
  EXPECT_TRUE(l1.ends_with("," + id + ",R01,0,"));
  EXPECT_TRUE(l2.starts_with("3,"));
  EXPECT_TRUE(l2.ends_with(",R02,,\"looks, \"\"odd\"\"\""));
}

TEST_F(ServiceTest, ReadsFollowTheDesign) {
  const auto unassisted = assignment(false), assisted = assignment(true);
  const auto id = predict_id(kR01);
  const auto other = predict_id(kR02);
  auto read = [&](const std::string& auth, const json& j) { return svc_->record_read(auth, j.dump()); };
  EXPECT_EQ(read(kR01, {{"assignment_id", "R01-T9-0"}, {"diagnosis", "HCC"}}).status, 404);
  EXPECT_EQ(read(kR02, {{"assignment_id", unassisted.id}, {"diagnosis", "HCC"}}).status, 403);
  EXPECT_EQ(read(kR01, {{"assignment_id", unassisted.id}, {"diagnosis", "maybe"}}).status, 422);
  EXPECT_EQ(read(kR01, {{"assignment_id", unassisted.id}, {"diagnosis", "CC"}, {"prediction_request_id", id}}).status, 422);
  EXPECT_EQ(read(kR01, {{"assignment_id", assisted.id}, {"diagnosis", "CC"}}).status, 422);
  EXPECT_EQ(read(kR01, {{"assignment_id", assisted.id}, {"diagnosis", "CC"}, {"prediction_request_id", other}}).status, 422);
  EXPECT_EQ(read(kR01, {{"assignment_id", unassisted.id}, {"diagnosis", "CC"}}).status, 200);
  const auto dup = read(kR01, {{"assignment_id", unassisted.id}, {"diagnosis", "HCC"}});
  EXPECT_EQ(dup.status, 409);
  EXPECT_EQ(body(dup).at("error").at("code"), "duplicate_read");
  const auto id2 = predict_id(kR01, 9);
  const auto ok = read(kR01, {{"assignment_id", assisted.id}, {"diagnosis", "HCC"}, {"prediction_request_ids", {id, id2}}});
  ASSERT_EQ(ok.status, 200) << ok.body;
  EXPECT_TRUE(body(ok).at("assisted").get<bool>());

  const auto reads = study::parse_records_csv(svc_->export_reads(kR02).body);
  ASSERT_EQ(reads.size(), 2u);
  EXPECT_FALSE(reads[0].assisted);
  EXPECT_FALSE(reads[0].model_verdict);
  EXPECT_TRUE(reads[1].assisted);
  // The recorded model verdict aggregates the referenced predictions.
  const auto& pred = checkpoint_;
  std::vector<double> hcc;
  for (auto seed : {1u, 9u})
    hcc.push_back(infer::predict_patch(*pred, infer::prepare_patch(*pred, decode_png(noise_png(8, 8, seed)))).hcc);
  EXPECT_EQ(*reads[1].model_verdict, infer::aggregate_slide(hcc).label);
  EXPECT_EQ(reads[1].slide_id, assisted.slide_id);
  EXPECT_EQ(reads[1].reference, assisted.reference);
}

TEST_F(ServiceTest, AssignmentsTrackCompletion) {
  auto j = body(svc_->assignments(kR01));
  EXPECT_EQ(j.at("reader").at("id"), "R01");
  EXPECT_EQ(j.at("assignments").size(), 164u);
  EXPECT_EQ(j.at("next"), "R01-P-0");
  const auto id = predict_id(kR01);
  ASSERT_EQ(svc_->record_read(kR01, json{{"assignment_id", "R01-P-0"}, {"diagnosis", "HCC"}, {"prediction_request_id", id}}.dump()).status, 200);
  j = body(svc_->assignments(kR01));
  EXPECT_TRUE(j.at("assignments")[0].at("completed").get<bool>());
  EXPECT_EQ(j.at("next"), "R01-P-1");
  EXPECT_EQ(svc_->assignments("Bearer tok-admin").status, 404);
}

TEST_F(ServiceTest, RestartReplaysTheEventLog) {
  const auto id = predict_id(kR01);
  svc_->feedback(kR01, json{{"request_id", id}, {"agree", true}, {"comment", "fine"}}.dump());
  svc_->record_read(kR01, json{{"assignment_id", "R01-P-0"}, {"diagnosis", "CC"}, {"prediction_request_id", id}}.dump());
  svc_->record_read(kR01, json{{"assignment_id", "R01-P-2"}, {"diagnosis", "HCC"}}.dump());
  const auto reads = svc_->reads_csv(), feedback = svc_->feedback_csv();
  const auto events = svc_->event_count();
  reopen();
  EXPECT_EQ(svc_->reads_csv(), reads);
  EXPECT_EQ(svc_->feedback_csv(), feedback);
  EXPECT_EQ(svc_->event_count(), events);
  EXPECT_EQ(svc_->record_read(kR01, json{{"assignment_id", "R01-P-2"}, {"diagnosis", "HCC"}}.dump()).status, 409);
  EXPECT_EQ(svc_->feedback(kR01, json{{"request_id", id}, {"agree", false}}.dump()).status, 200);
  EXPECT_EQ(predict_id(kR01), "req-" + std::to_string(events + 2));
}

TEST_F(ServiceTest, TornFinalLineIsDroppedOnReplay) {
  predict_id(kR01);
  predict_id(kR01);
  svc_.reset();
  {
    std::ofstream f(dir_ / "events.jsonl", std::ios::app);
    f << R"({"sequence":3,"timestamp":"x","type":"read","payl)";
  }
  reopen();
  EXPECT_EQ(svc_->event_count(), 2u);
  EXPECT_EQ(predict_id(kR01), "req-3");
  reopen();
  EXPECT_EQ(svc_->event_count(), 3u);
}

TEST_F(ServiceTest, CorruptLogIsRejected) {
  predict_id(kR01);
  svc_.reset();
  {
    std::ofstream f(dir_ / "events.jsonl", std::ios::app);
    f << "garbage\n";
  }
  EXPECT_THROW(reopen(), FormatError);
}

TEST_F(ServiceTest, ConfigLoadsCheckpointAndHashesIt) {
  write_text(dir_ / "tokens.json", json(kTokens).dump());
  service::ServiceConfig c;
  c.checkpoint = checkpoint_path_.string();
  c.tokens = (dir_ / "tokens.json").string();
  c.event_log = (dir_ / "cfg_events.jsonl").string();
  const auto svc = AssistService::from_config(c);
  const auto h = body(svc->health());
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("checkpoint_id"), sha256_hex(read_file(checkpoint_path_)));
  EXPECT_FALSE(h.at("design_loaded").get<bool>());
  c.tokens.clear();
  EXPECT_THROW(AssistService::from_config(c), PreconditionError);
  c.tokens = (dir_ / "missing.json").string();
  EXPECT_THROW(AssistService::from_config(c), IoError);
}

TEST_F(ServiceTest, InvalidDesignIsRefused) {
  auto bad = design_;
  bad.flags.pop_back();
  EXPECT_THROW(AssistService(checkpoint_, "x", kTokens, bad, dir_ / "e.jsonl"), PreconditionError);
}

TEST(ServiceCsv, FieldQuoting) {
  EXPECT_EQ(service::csv_field("plain"), "plain");
  EXPECT_EQ(service::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(service::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(service::csv_field("two\nlines"), "\"two\nlines\"");
}

class HttpTest : public ServiceTest {
 protected:
  void SetUp() override {
    ServiceTest::SetUp();
    server_ = std::make_unique<service::HttpServer>(*svc_, service::HttpOptions{64 * 1024, {}});
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->listen(); });
    server_->wait_until_ready();
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }
  httplib::Headers auth(const std::string& token = "tok-r01") const {
    return {{"Authorization", "Bearer " + token}};
  }

  std::unique_ptr<service::HttpServer> server_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(HttpTest, UploadFormats) {
  auto c = client();
  const auto png = noise_png(8, 8, 6);
  const std::string raw(png.begin(), png.end());
  httplib::MultipartFormDataItems form{{"image", raw, "patch.png", "image/png"}};
  const auto a = c.Post("/api/v1/predict", auth(), form);
  ASSERT_TRUE(a);
  ASSERT_EQ(a->status, 200) << a->body;
  const auto b = c.Post("/api/v1/predict", auth(), json{{"image_base64", base64_encode(png)}}.dump(), "application/json");
  ASSERT_EQ(b->status, 200);
  const auto d = c.Post("/api/v1/predict", auth(), raw, "image/png");
  ASSERT_EQ(d->status, 200);
  const auto pa = json::parse(a->body).at("probabilities"), pb = json::parse(b->body).at("probabilities"),
             pd = json::parse(d->body).at("probabilities");
  EXPECT_EQ(pa, pb);
  EXPECT_EQ(pa, pd);
  EXPECT_EQ(c.Post("/api/v1/predict", auth(), json{{"nope", 1}}.dump(), "application/json")->status, 422);
  httplib::MultipartFormDataItems wrong{{"file", raw, "patch.png", "image/png"}};
  EXPECT_EQ(c.Post("/api/v1/predict", auth(), wrong)->status, 422);
}

TEST_F(HttpTest, StatusCodesOverTheWire) {
  auto c = client();
  const auto png = noise_png(8, 8, 7);
  const std::string raw(png.begin(), png.end());
  EXPECT_EQ(c.Post("/api/v1/predict", raw, "image/png")->status, 401);
  EXPECT_EQ(c.Post("/api/v1/predict", auth("bad"), raw, "image/png")->status, 401);
  EXPECT_EQ(svc_->event_count(), 0u);
  const auto big = c.Post("/api/v1/predict", auth(), std::string(100 * 1024, 'x'), "image/png");
  EXPECT_EQ(big->status, 413);
  EXPECT_EQ(c.Post("/api/v1/predict", auth(), "xxxx", "image/png")->status, 422);
  const auto h = c.Get("/api/v1/health");
  ASSERT_EQ(h->status, 200);
  EXPECT_EQ(json::parse(h->body).at("checkpoint_id"), "ck-test");
  EXPECT_EQ(c.Get("/api/v1/nowhere")->status, 404);
  const auto id = json::parse(c.Post("/api/v1/predict", auth(), raw, "image/png")->body).at("request_id").get<std::string>();
  EXPECT_EQ(c.Post("/api/v1/feedback", auth(), json{{"request_id", id}, {"agree", true}}.dump(), "application/json")->status, 200);
  const auto read = json{{"assignment_id", "R01-P-2"}, {"diagnosis", "HCC"}}.dump();
  EXPECT_EQ(c.Post("/api/v1/reads", auth(), read, "application/json")->status, 200);
  EXPECT_EQ(c.Post("/api/v1/reads", auth(), read, "application/json")->status, 409);
  EXPECT_EQ(c.Post("/api/v1/reads", auth("tok-r02"), read, "application/json")->status, 403);
  const auto ex = c.Get("/api/v1/export/reads", auth());
  ASSERT_EQ(ex->status, 200);
  EXPECT_EQ(ex->get_header_value("Content-Type"), "text/csv");
  EXPECT_EQ(study::parse_records_csv(ex->body).size(), 1u);
  EXPECT_EQ(c.Get("/api/v1/export/feedback")->status, 401);
  const auto as = c.Get("/api/v1/assignments", auth());
  EXPECT_EQ(json::parse(as->body).at("next"), "R01-P-0");
}

TEST_F(HttpTest, ConcurrentPredictionsGetUniqueIds) {
  std::vector<std::thread> workers;
  std::mutex mu;
  std::set<std::string> ids;
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&, t] {
      auto c = client();
      const auto png = noise_png(8, 8, 100 + t);
      for (int i = 0; i < 5; ++i) {
        const auto r = c.Post("/api/v1/predict", auth(), std::string(png.begin(), png.end()), "image/png");
        if (!r || r->status != 200) continue;
        std::lock_guard lock(mu);
        ids.insert(json::parse(r->body).at("request_id").get<std::string>());
      }
    });
  for (auto& w : workers) w.join();
  EXPECT_EQ(ids.size(), 20u);
  EXPECT_EQ(svc_->event_count(), 20u);
}

}  // namespace
