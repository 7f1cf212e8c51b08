// assist: command-line entry point for the diagnostic-assistant pipeline.
//
// Workdir layout:
//   catalog/   synthetic slides + manifest.json          (data gen)
//   search/    search.jsonl, audit.jsonl, checkpoints/  (train)
//   model/     model.ck, selection.json, audit.jsonl,
//              evaluation.{csv,json}                    (select, evaluate)
//   study/     design.{json,csv}, tokens.json, reads.csv (study)
//   stats/     summary.{csv,json}, analysis.json         (stats)
//   service/   events.jsonl                              (serve)

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "assist/cam/cam.hpp"
#include "assist/core/encoding.hpp"
#include "assist/core/error.hpp"
#include "assist/infer/aggregate.hpp"
#include "assist/infer/predict.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/patch/catalog.hpp"
#include "assist/service/http.hpp"
#include "assist/stats/reads_model.hpp"
#include "assist/study/design.hpp"
#include "assist/study/model_verdicts.hpp"
#include "assist/study/simulate.hpp"
#include "assist/study/summary.hpp"
#include "assist/train/search.hpp"
#include "assist/train/select.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace assist;

namespace {

// Top-level config file; ASSIST_PROFILE / ASSIST_SEED / ASSIST_JOBS override it.
struct Settings {
  std::string profile = "desk";
  std::uint64_t seed = 7;
  int jobs = 1;
  service::ServiceConfig service;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Settings, profile, seed, jobs, service)

Settings load_settings(const std::string& file) {
  Settings s;
  if (!file.empty()) {
    if (!fs::exists(file)) throw IoError("missing config file " + file);
    try {
      s = json::parse(read_text(file)).get<Settings>();
    } catch (const json::exception& e) {
      throw FormatError("malformed config file " + file + ": " + e.what());
    }
  }
  auto number = [](const char* name, const char* v) {
    try {
      return std::stoll(v);
    } catch (const std::exception&) {
      throw PreconditionError(std::string(name) + " is not a number: " + v);
    }
  };
  if (auto v = std::getenv("ASSIST_PROFILE")) s.profile = v;
  if (auto v = std::getenv("ASSIST_SEED")) s.seed = static_cast<std::uint64_t>(number("ASSIST_SEED", v));
  if (auto v = std::getenv("ASSIST_JOBS")) s.jobs = static_cast<int>(number("ASSIST_JOBS", v));
  service::apply_env_overrides(s.service);
  return s;
}

struct Context {
  fs::path workdir = ".";
  std::string config;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;

  Settings settings;

  void resolve() {
    settings = load_settings(config);
    if (profile) settings.profile = *profile;
    if (seed) settings.seed = *seed;
    if (jobs) settings.jobs = *jobs;
    require(settings.jobs >= 1, "jobs must be at least 1");
  }

  train::Profile the_profile() const {
    auto p = train::Profile::named(settings.profile);
    p.validate();
    return p;
  }

  fs::path dir(const char* sub) const { return workdir / sub; }
  fs::path catalog() const { return dir("catalog"); }
  fs::path search() const { return dir("search"); }
  fs::path model() const { return dir("model"); }
  fs::path study() const { return dir("study"); }
  fs::path stats() const { return dir("stats"); }
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

patch::Catalog require_catalog(const Context& c) {
  if (!fs::exists(c.catalog() / "manifest.json"))
    throw IoError("no catalog in " + c.catalog().string() + "; run 'assist data gen' first");
  return patch::load_catalog(c.catalog());
}

std::shared_ptr<const nn::Checkpoint> load_model(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string() + "; run 'assist select' first");
  return std::make_shared<const nn::Checkpoint>(nn::load_checkpoint(path));
}

// ---- data ------------------------------------------------------------------

void cmd_data_gen(const Context& c) {
  const auto profile = c.the_profile();
  const auto catalog = patch::generate_catalog(c.catalog(), c.settings.seed, profile.generator, profile.counts);
  const auto problems = patch::validate_catalog(c.catalog(), catalog);
  if (!problems.empty()) throw FormatError("generated catalog failed validation: " + problems.front());
  const auto manifest = read_file(c.catalog() / "manifest.json");
  std::cout << "catalog " << c.catalog().string() << " slides=" << catalog.slides.size()
            << " train=" << profile.counts.train << " tune=" << profile.counts.tune
            << " validation=" << profile.counts.validation << " external=" << profile.counts.external
            << " practice=" << profile.counts.practice << " manifest_sha256=" << sha256_hex(manifest)
            << "\n";
}

void cmd_data_validate(const Context& c) {
  const auto catalog = require_catalog(c);
  const auto problems = patch::validate_catalog(c.catalog(), catalog);
  for (const auto& p : problems) std::cout << "violation: " << p << "\n";
  if (!problems.empty()) throw FormatError(std::to_string(problems.size()) + " catalog violation(s)");
  std::cout << "catalog ok (" << catalog.slides.size() << " slides)\n";
}

// ---- train / select / evaluate ---------------------------------------------

struct TrainArgs {
  std::optional<int> trials;
  std::optional<std::int64_t> iterations;
};

void cmd_train(const Context& c, const TrainArgs& a) {
  const auto profile = c.the_profile();
  const auto catalog = require_catalog(c);
  log_line("sampling patches (seed " + std::to_string(c.settings.seed) + ")");
  const auto sets = train::build_patch_sets(c.catalog(), catalog, profile, c.settings.seed);
  train::SearchOptions opt;
  opt.profile = profile;
  opt.seed = c.settings.seed;
  opt.trials = a.trials.value_or(profile.trials);
  opt.iterations = a.iterations.value_or(profile.iterations);
  opt.jobs = c.settings.jobs;
  opt.on_trial = [](const train::TrialResult& t) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "trial %3d lr=%.3g %s tune_acc=%.4f final_loss=%.4f", t.index,
                  t.hyperparams.learning_rate, t.failed ? "FAILED" : "ok", t.tune_accuracy, t.final_loss);
    log_line(buf);
  };
  train::AuditLog audit;
  const auto report = train::run_search(sets, opt, c.search(), audit);
  write_text(c.search() / "audit.jsonl", audit.jsonl());
  int failed = 0;
  for (const auto& t : report.trials) failed += t.failed;
  std::cout << "search " << (c.search() / "search.jsonl").string() << " trials=" << report.trials.size()
            << " failed=" << failed << "\n";
}

void cmd_select(const Context& c, std::optional<int> finalists) {
  const auto report_path = c.search() / "search.jsonl";
  if (!fs::exists(report_path))
    throw IoError("no search results in " + c.search().string() + "; run 'assist train' first");
  const auto report = train::read_search_report(report_path);
  const auto profile = c.the_profile();
  const auto catalog = require_catalog(c);
  const auto seed = report.header.value("seed", c.settings.seed);
  const auto sets = train::build_patch_sets(c.catalog(), catalog, profile, seed);

  train::AuditLog audit;
  for (const auto& t : report.trials)
    if (!t.failed) audit.record(t.index, "tune", t.tune_accuracy);
  std::vector<infer::Evaluation> details;
  const auto sel = train::select_trial(report.trials, finalists.value_or(profile.finalists),
                                       train::validation_evaluator(c.search(), sets.validation, &details),
                                       audit);
  const auto& win = sel.winning_trial();

  fs::create_directories(c.model());
  auto ck = nn::load_checkpoint(c.search() / win.checkpoint);
  ck.metadata["selected_trial"] = win.index;
  ck.metadata["search_seed"] = seed;
  nn::save_checkpoint(c.model() / "model.ck", ck);
  write_text(c.model() / "audit.jsonl", audit.jsonl());
  write_text(c.model() / "selection.json", json{{"winner", sel.winner},
                                                {"finalists", sel.finalists},
                                                {"validation_calls", audit.trials_on("validation").size()},
                                                {"checkpoint_id", nn::checkpoint_id(ck)},
                                                {"trials", sel.trials}}
                                                   .dump(2) + "\n");
  for (std::size_t i = 0; i < sel.finalists.size(); ++i)
    if (sel.finalists[i] == sel.winner) infer::write_evaluation(c.model(), "evaluation", details[i]);
  std::cout << "selected trial " << sel.winner << " validation_accuracy=" << *win.validation_accuracy
            << " finalists=" << sel.finalists.size() << " model=" << (c.model() / "model.ck").string() << "\n";
}

void cmd_evaluate(const Context& c, const std::string& split_name, const std::string& checkpoint) {
  const auto ck = load_model(checkpoint.empty() ? c.model() / "model.ck" : fs::path(checkpoint));
  const auto profile = c.the_profile();
  const auto catalog = require_catalog(c);
  patch::Split split;
  int per_slide;
  if (split_name == "validation") {
    split = patch::Split::validation;
    per_slide = profile.validation_patches_per_slide;
  } else if (split_name == "external") {
    split = patch::Split::external;
    per_slide = profile.validation_patches_per_slide;
  } else {
    throw PreconditionError("split must be validation or external, got '" + split_name + "'");
  }
  const auto slides = train::sample_split(c.catalog(), catalog, split, per_slide, ck->model.config.input_size,
                                          train::derive_seed(c.settings.seed, "evaluate-" + split_name));
  const auto ev = infer::evaluate_slides(*ck, train::normalized_slides(slides, ck->norm));
  fs::create_directories(c.model());
  infer::write_evaluation(c.model(), "evaluation_" + split_name, ev);
  std::cout << split_name << " accuracy " << study::format_accuracy(ev.interval) << " (" << ev.correct << "/"
            << ev.slides.size() << ")\n";
}

// ---- cam -------------------------------------------------------------------

void cmd_cam(const Context& c, const std::string& image, const std::string& checkpoint, std::string out,
             double alpha) {
  const auto ck = load_model(checkpoint.empty() ? c.model() / "model.ck" : fs::path(checkpoint));
  if (!fs::exists(image)) throw IoError("missing image " + image);
  const auto img = load_png(image);
  const auto e = infer::explain_patch(*ck, infer::prepare_patch(*ck, img));
  if (out.empty()) out = (c.workdir / "cam").string();
  fs::create_directories(out);
  const auto stem = fs::path(image).stem().string();
  for (const auto* h : {&e.hcc, &e.cc}) {
    auto up = *h;
    up.upsampled = cam::upsample(h->scaled.map, std::size_t(img.height), std::size_t(img.width));
    cam::export_cam(out, stem, img, up, alpha);
  }
  std::cout << "P(HCC)=" << e.probabilities.hcc << " P(CC)=" << e.probabilities.cc
            << " verdict=" << patch::label_name(e.probabilities.label()) << " overlays=" << out << "\n";
}

// ---- serve -----------------------------------------------------------------

struct ServeArgs {
  std::optional<int> port;
  std::string host, checkpoint, tokens, design, event_log, static_dir;
};

void cmd_serve(const Context& c, const ServeArgs& a) {
  auto cfg = c.settings.service;
  if (a.port) cfg.port = *a.port;
  if (!a.host.empty()) cfg.host = a.host;
  if (!a.checkpoint.empty()) cfg.checkpoint = a.checkpoint;
  if (!a.tokens.empty()) cfg.tokens = a.tokens;
  if (!a.design.empty()) cfg.design = a.design;
  if (!a.event_log.empty()) cfg.event_log = a.event_log;
  if (!a.static_dir.empty()) cfg.static_dir = a.static_dir;
  // Fall back to the workdir artifacts.
  if (cfg.checkpoint.empty() && fs::exists(c.model() / "model.ck")) cfg.checkpoint = (c.model() / "model.ck").string();
  if (cfg.tokens.empty() && fs::exists(c.study() / "tokens.json")) cfg.tokens = (c.study() / "tokens.json").string();
  if (cfg.design.empty() && fs::exists(c.study() / "design.json")) cfg.design = (c.study() / "design.json").string();
  if (fs::path(cfg.event_log).is_relative()) cfg.event_log = (c.dir("service") / cfg.event_log).string();
  require(cfg.port >= 0 && cfg.port <= 65535, "port out of range");
  if (cfg.tokens.empty()) throw PreconditionError("no token file: pass --tokens or run 'assist study design'");
  fs::create_directories(fs::path(cfg.event_log).parent_path());

  // Signals are handled on a dedicated thread so stop() runs outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  auto svc = service::AssistService::from_config(cfg);
  service::HttpServer server(*svc, {cfg.max_upload_bytes, cfg.static_dir});
  const int port = server.bind(cfg.host, cfg.port);
  std::cout << "listening on http://" << cfg.host << ":" << port << " checkpoint="
            << (svc->checkpoint_id().empty() ? "none" : svc->checkpoint_id()) << " events=" << svc->event_count()
            << std::endl;
  std::jthread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
}

// ---- study -----------------------------------------------------------------

std::string make_token(std::uint64_t seed, std::size_t i) {
  auto rng = CounterRng::stream(seed, "tokens", i);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng.next_u64()),
                static_cast<unsigned long long>(rng.next_u64()));
  return buf;
}

void cmd_study_design(const Context& c) {
  const auto catalog = require_catalog(c);
  const auto d = study::generate_design(study::default_readers(),
                                        study::design_slides(catalog, patch::Split::external),
                                        study::design_slides(catalog, patch::Split::practice), c.settings.seed);
  const auto violations = study::validate_design(d);
  if (!violations.empty()) throw FormatError("generated design is invalid: " + violations.front().rule);
  fs::create_directories(c.study());
  write_text(c.study() / "design.json", json(d).dump(2) + "\n");
  write_text(c.study() / "design.csv", study::design_csv(d));
  json tokens = json::object();
  for (std::size_t i = 0; i < d.readers.size(); ++i) tokens[make_token(c.settings.seed, i)] = d.readers[i].id;
  write_text(c.study() / "tokens.json", tokens.dump(2) + "\n");
  std::cout << "design " << (c.study() / "design.json").string() << " readers=" << d.readers.size()
            << " slides=" << d.sequence.size() << " tokens=" << (c.study() / "tokens.json").string() << "\n";
}

void cmd_study_validate(const Context& c, const std::string& path) {
  const auto d = study::load_design(path.empty() ? c.study() / "design.json" : fs::path(path));
  const auto violations = study::validate_design(d);
  for (const auto& v : violations)
    std::cout << "violation " << v.rule << " reader=" << v.reader << " slide=" << v.slide << ": " << v.detail
              << "\n";
  if (!violations.empty()) throw FormatError(std::to_string(violations.size()) + " design violation(s)");
  std::cout << "design ok\n";
}

struct SimulateArgs {
  double anchoring = 0.0;
  std::optional<double> model_accuracy;
  std::uint64_t replication = 0;
  bool include_practice = false;
  std::string policies;
  std::string out;
};

void cmd_study_simulate(const Context& c, const SimulateArgs& a) {
  const auto design = study::load_design(c.study() / "design.json");
  study::PolicySet policies = study::PolicySet::calibrated(a.anchoring);
  if (!a.policies.empty()) {
    if (!fs::exists(a.policies)) throw IoError("missing policy file " + a.policies);
    policies = json::parse(read_text(a.policies)).get<study::PolicySet>();
  }
  study::VerdictFn verdicts;
  std::string source;
  if (a.model_accuracy) {
    verdicts = study::simulated_model(*a.model_accuracy, c.settings.seed);
    source = "simulated model (accuracy " + std::to_string(*a.model_accuracy) + ")";
  } else {
    const auto profile = c.the_profile();
    verdicts = study::checkpoint_verdicts(load_model(c.model() / "model.ck"), c.catalog(), require_catalog(c),
                                          profile.study_patches_per_read, c.settings.seed);
    source = "checkpoint " + (c.model() / "model.ck").string();
  }
  const auto records =
      study::run_study(design, policies, verdicts, {c.settings.seed, a.replication, a.include_practice});
  const fs::path out = a.out.empty() ? c.study() / "reads.csv" : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, study::records_csv(records));
  std::cout << "reads " << out.string() << " records=" << records.size() << " verdicts=" << source << "\n";
}

// ---- stats -----------------------------------------------------------------

std::vector<study::ReadRecord> load_reads(const Context& c, const std::string& path) {
  const fs::path p = path.empty() ? c.study() / "reads.csv" : fs::path(path);
  if (!fs::exists(p)) throw IoError("missing read records " + p.string());
  return study::parse_records_csv(read_text(p));
}

void cmd_stats_summarize(const Context& c, const std::string& reads) {
  const auto records = load_reads(c, reads);
  const auto s = study::summarize(records);
  fs::create_directories(c.stats());
  write_text(c.stats() / "summary.csv", study::summary_csv(s));
  write_text(c.stats() / "summary.json", study::summary_json(s).dump(2) + "\n");
  std::cout << study::summary_csv(s);
}

void cmd_stats_fit(const Context& c, const std::string& reads) {
  const auto records = load_reads(c, reads);
  const auto analysis = stats::analyze_reads(records);
  fs::create_directories(c.stats());
  write_text(c.stats() / "analysis.json", analysis.dump(2) + "\n");
  std::cout << analysis.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"assist: train, serve and evaluate a two-class liver-tumour patch classifier"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--workdir", ctx.workdir, "Directory holding all artifacts")->envname("ASSIST_WORKDIR");
  app.add_option("--config", ctx.config, "JSON config file (profile, seed, jobs, service)")
      ->envname("ASSIST_CONFIG");
  app.add_option("--profile", ctx.profile, "Scale profile: desk or paper");
  app.add_option("--seed", ctx.seed, "Master seed");
  app.add_option("--jobs", ctx.jobs, "Parallel training trials");

  std::function<void()> action;

  auto* data = app.add_subcommand("data", "Synthetic slide catalog");
  data->require_subcommand(1);
  data->add_subcommand("gen", "Generate the slide catalog and split manifest")->callback([&] {
    action = [&] { cmd_data_gen(ctx); };
  });
  data->add_subcommand("validate", "Check the catalog against its manifest")->callback([&] {
    action = [&] { cmd_data_validate(ctx); };
  });

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "Random hyperparameter search over training trials");
  train->add_option("--trials", targs.trials, "Number of trials (profile default)");
  train->add_option("--iterations", targs.iterations, "Iterations per trial (profile default)");
  train->callback([&] { action = [&] { cmd_train(ctx, targs); }; });

  std::optional<int> finalists;
  auto* select = app.add_subcommand("select", "Pick the checkpoint: top tune trials scored on validation");
  select->add_option("--finalists", finalists, "Trials allowed to touch the validation set");
  select->callback([&] { action = [&] { cmd_select(ctx, finalists); }; });

  std::string eval_split = "validation", eval_ck;
  auto* evaluate = app.add_subcommand("evaluate", "Slide-level accuracy of a checkpoint");
  evaluate->add_option("--split", eval_split, "validation or external");
  evaluate->add_option("--checkpoint", eval_ck, "Checkpoint (default: model/model.ck)");
  evaluate->callback([&] { action = [&] { cmd_evaluate(ctx, eval_split, eval_ck); }; });

  std::string cam_image, cam_ck, cam_out;
  double cam_alpha = 0.5;
  auto* camc = app.add_subcommand("cam", "Write class-activation overlays for one patch");
  camc->add_option("image", cam_image, "PNG patch")->required();
  camc->add_option("--checkpoint", cam_ck, "Checkpoint (default: model/model.ck)");
  camc->add_option("--out", cam_out, "Output directory (default: <workdir>/cam)");
  camc->add_option("--alpha", cam_alpha, "Overlay opacity")->check(CLI::Range(0.0, 1.0));
  camc->callback([&] { action = [&] { cmd_cam(ctx, cam_image, cam_ck, cam_out, cam_alpha); }; });

  ServeArgs sargs;
  auto* serve = app.add_subcommand("serve", "Run the HTTP assistant service");
  serve->add_option("--port", sargs.port, "TCP port (0 picks a free one)");
  serve->add_option("--host", sargs.host, "Bind address");
  serve->add_option("--checkpoint", sargs.checkpoint, "Checkpoint to serve");
  serve->add_option("--tokens", sargs.tokens, "JSON token -> user file");
  serve->add_option("--design", sargs.design, "Study design JSON for the read endpoints");
  serve->add_option("--event-log", sargs.event_log, "Event log path");
  serve->add_option("--static-dir", sargs.static_dir, "Static web bundle served at /");
  serve->callback([&] { action = [&] { cmd_serve(ctx, sargs); }; });

  auto* studyc = app.add_subcommand("study", "Crossover reader study");
  studyc->require_subcommand(1);
  studyc->add_subcommand("design", "Generate the crossover design and reader tokens")->callback([&] {
    action = [&] { cmd_study_design(ctx); };
  });
  std::string design_path;
  auto* sv = studyc->add_subcommand("validate", "Check a design file");
  sv->add_option("design", design_path, "Design JSON (default: study/design.json)");
  sv->callback([&] { action = [&] { cmd_study_validate(ctx, design_path); }; });
  SimulateArgs simargs;
  auto* sim = studyc->add_subcommand("simulate", "Run the study with simulated readers");
  sim->add_option("--anchoring", simargs.anchoring, "Probability of adopting the shown verdict")
      ->check(CLI::Range(0.0, 1.0));
  sim->add_option("--model-accuracy", simargs.model_accuracy,
                  "Use a simulated model of this accuracy instead of the checkpoint")
      ->check(CLI::Range(0.0, 1.0));
  sim->add_option("--replication", simargs.replication, "Replication index");
  sim->add_flag("--include-practice", simargs.include_practice, "Also emit practice reads");
  sim->add_option("--policies", simargs.policies, "Reader policy JSON (default: calibrated)");
  sim->add_option("--out", simargs.out, "Output CSV (default: study/reads.csv)");
  sim->callback([&] { action = [&] { cmd_study_simulate(ctx, simargs); }; });

  auto* statsc = app.add_subcommand("stats", "Accuracy intervals and mixed-effects analysis");
  statsc->require_subcommand(1);
  std::string reads_path;
  auto* summ = statsc->add_subcommand("summarize", "Wilson intervals per subgroup and condition");
  summ->add_option("--reads", reads_path, "Read CSV (default: study/reads.csv)");
  summ->callback([&] { action = [&] { cmd_stats_summarize(ctx, reads_path); }; });
  auto* fit = statsc->add_subcommand("fit", "Mixed-effects logistic regression with Wald tests");
  fit->add_option("--reads", reads_path, "Read CSV (default: study/reads.csv)");
  fit->callback([&] { action = [&] { cmd_stats_fit(ctx, reads_path); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    ctx.resolve();
    if (action) action();
    return 0;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
