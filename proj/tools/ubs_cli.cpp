// ubs: staged insider-threat pipeline.
//
//   ubs <command> [--config run.json] [--out DIR] [--seed N] [--threads N]
//
// Errors print one line, "error: <Code>: <message>", and exit nonzero.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ubs/pipeline.hpp"

namespace {

struct GlobalOpts {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

ubs::config::RunConfig load_config(const GlobalOpts& g) {
  ubs::config::RunConfig cfg = g.config.empty() ? ubs::config::RunConfig{} : ubs::config::load(g.config);
  if (!g.out.empty()) cfg.out = g.out;
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  return cfg;
}

void print_report(const ubs::eval::Report& rep, const std::filesystem::path& path) {
  std::printf("report %s (%s)\n", path.string().c_str(), rep.run_id.c_str());
  for (const auto& r : rep.rows) {
    const auto& m = r.metrics;
    std::printf("%-12s %-8s %-10s acc %.4f prec %.4f rec %.4f f1 %.4f auc %s fpr %.4f\n", r.model.c_str(),
                r.detector.c_str(), r.test_set.c_str(), m.accuracy, m.precision, m.recall, m.f1,
                m.auroc ? std::to_string(*m.auroc).c_str() : "n/a", m.fpr);
  }
}

int error_exit(const std::string& code, const std::string& msg) {
  std::string one_line = msg;
  for (auto& c : one_line)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "error: %s: %s\n", code.c_str(), one_line.c_str());
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UBS insider-threat pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOpts g;
  app.add_option("--config", g.config, "Run configuration JSON");
  app.add_option("--out", g.out, "Run directory (overrides config)");
  app.add_option("--seed", g.seed, "Master seed (overrides config)");
  app.add_option("--threads", g.threads, "Worker threads (overrides config)");

  std::string model = "transformer";
  std::string method = "all";
  const std::string models = "transformer, auto-tab, auto-ubs";

  auto* synth = app.add_subcommand("synth", "Generate synthetic CERT-schema logs");
  auto* ingest = app.add_subcommand("ingest", "Parse logs into session feature records");
  auto* build = app.add_subcommand("build-ubs", "Build normalized UBS tensors and the train/test split");
  auto* train = app.add_subcommand("train", "Train a reconstruction model");
  train->add_option("--model", model, models);
  auto* score = app.add_subcommand("score", "Score every user with a trained model");
  score->add_option("--model", model, models);
  auto* detect = app.add_subcommand("detect", "Fit detectors on training scores, judge test users");
  detect->add_option("--model", model, models);
  detect->add_option("--method", method, "ocsvm, lof, iforest or all");
  auto* evalc = app.add_subcommand("eval", "Compute metrics and write the report");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("ConfigError", e.what());
  }

  try {
    ubs::pipeline::Run run(load_config(g));
    if (*synth) run.synth();
    else if (*ingest) run.ingest();
    else if (*build) run.build_ubs();
    else if (*train) run.train(model);
    else if (*score) run.score(model);
    else if (*detect) run.detect(model, method);
    else if (*evalc) print_report(run.evaluate(), run.report_path());
    else if (*pipeline) print_report(run.run_all(), run.report_path());
  } catch (const ubs::Error& e) {
    return error_exit(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_exit("StageFailure", e.what());
  }
  return 0;
}
