#pragma once

// Pipeline stages. Every stage reads its inputs from, and writes its
// artifacts to, the run directory, plus a meta_<stage>.json record.
//
//   synth     -> logs/{logon,device,file,http,email}.csv, logs/labels.csv
//   ingest    -> sessions.tsv
//   build-ubs -> ubs.bin (normalized), norm.json, split.json
//   train     -> model_<m>.ckpt, train_<m>.json
//   score     -> scores_<m>.csv
//   detect    -> verdicts_<m>_<method>.csv
//   eval      -> report.json, roc_<m>_<method>_<set>.csv

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/config.hpp"
#include "ubs/sequencing.hpp"

namespace ubs::pipeline {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;
using config::RunConfig;
using nlohmann::json;

struct Split {
  std::vector<std::string> train;
  eval::TestSets test_sets;

  std::vector<std::string> all_test_users() const {
    std::set<std::string> u;
    for (const auto& [_, members] : test_sets) u.insert(members.begin(), members.end());
    return {u.begin(), u.end()};
  }
};

inline json to_json(const Split& s) { return {{"train", s.train}, {"test_sets", s.test_sets}}; }
inline Split split_from_json(const json& j) {
  return {j.at("train").get<std::vector<std::string>>(), j.at("test_sets").get<eval::TestSets>()};
}

class Run {
 public:
  explicit Run(RunConfig cfg) : cfg_(std::move(cfg)), dir_(cfg_.out) {
    config::validate(cfg_);
    hash_ = hex64(config::config_hash(cfg_));
  }

  const RunConfig& config() const { return cfg_; }
  const fs::path& dir() const { return dir_; }
  const std::string& config_hash() const { return hash_; }

  fs::path logs_dir() const { return cfg_.logs_dir.empty() ? dir_ / "logs" : fs::path(cfg_.logs_dir); }
  fs::path labels_path() const { return cfg_.labels.empty() ? logs_dir() / "labels.csv" : fs::path(cfg_.labels); }
  fs::path sessions_path() const { return dir_ / "sessions.tsv"; }
  fs::path ubs_path() const { return dir_ / "ubs.bin"; }
  fs::path norm_path() const { return dir_ / "norm.json"; }
  fs::path split_path() const { return dir_ / "split.json"; }
  fs::path checkpoint_path(const std::string& m) const { return dir_ / ("model_" + m + ".ckpt"); }
  fs::path train_report_path(const std::string& m) const { return dir_ / ("train_" + m + ".json"); }
  fs::path scores_path(const std::string& m) const { return dir_ / ("scores_" + m + ".csv"); }
  fs::path verdicts_path(const std::string& m, const std::string& method) const {
    return dir_ / ("verdicts_" + m + "_" + method + ".csv");
  }
  fs::path report_path() const { return dir_ / "report.json"; }

  void synth() {
    timed("synth", [&](json& extra) {
      const auto res = synth::generate(cfg_.synth_config(), logs_dir());
      extra["rows"] = res.rows_per_file;
      extra["users"] = res.users.size();
    });
  }

  void ingest() {
    timed("ingest", [&](json& extra) {
      const auto files = ingest::standard_log_files(logs_dir());
      const auto parsed = ingest::parse_logs(files, cfg_.window(), cfg_.ingest.max_malformed_fraction);
      const auto records = ingest::build_records(parsed.events, cfg_.window(), cfg_.feature_config());
      ingest::write_sessions(sessions_path(), records);
      extra["rows"] = parsed.stats.rows;
      extra["malformed"] = parsed.stats.malformed;
      extra["out_of_window"] = parsed.stats.out_of_window;
      extra["sessions"] = records.size();
    });
  }

  void build_ubs() {
    timed("build-ubs", [&](json& extra) {
      const auto records = ingest::read_sessions(sessions_path());
      const auto labeled = synth::read_labels(labels_path());
      LabelMap labels;
      for (const auto& u : labeled) labels[u.user] = u.label;
      UserDataMap raw = ubs::build_ubs(records, cfg_.dims(), labels);

      std::vector<eval::PoolUser> pool;
      for (const auto& u : labeled) {
        if (u.label == Label::Unknown) continue;
        if (!raw.count(u.user)) {
          log_warn("user " + u.user + " has no sessions; left out of the pool");
          continue;
        }
        pool.push_back({u.user, u.label, u.source});
      }
      Split split;
      const auto roster = eval::sample_training(pool, cfg_.split.train_benign, cfg_.stage_seed(2), cfg_.split.source);
      split.train.assign(roster.begin(), roster.end());
      const auto specs = cfg_.test_specs();
      split.test_sets = eval::build_test_sets(pool, roster, specs);

      UserDataMap train_raw;
      for (const auto& u : split.train) train_raw.emplace(u, raw.at(u));
      const NormStats stats = fit_norm(train_raw);
      UserDataMap kept;
      for (const auto& u : split.train) kept.emplace(u, apply_norm(raw.at(u), stats));
      for (const auto& u : split.all_test_users()) kept.emplace(u, apply_norm(raw.at(u), stats));
      write_ubs(ubs_path(), kept, cfg_.dims());
      write_json(norm_path(), stats.to_json());
      write_json(split_path(), to_json(split));
      extra["users"] = kept.size();
      extra["train"] = split.train.size();
    });
  }

  void train(const std::string& model) {
    timed("train-" + model, [&](json& extra) {
      const auto file = read_ubs(ubs_path(), cfg_.dims());
      const Split split = load_split();
      UserDataMap train_map;
      for (const auto& u : split.train) train_map.emplace(u, file.users.at(u));
      json report;
      if (model == "transformer") {
        transformer::EncoderModel m(cfg_.transformer_config());
        report = transformer::train(m, train_map).to_json();
        transformer::save(m, checkpoint_path(model));
      } else {
        const auto v = variant(model);
        autoencoder::MlpAutoencoder m(cfg_.autoencoder_config(v));
        report = autoencoder::train(v, m, train_map).to_json();
        autoencoder::save(v, m, checkpoint_path(model));
      }
      write_json(train_report_path(model), report);
      extra["parameter_count"] = report.at("parameter_count");
      extra["epochs_run"] = report.at("epoch_loss").size();
    });
  }

  void score(const std::string& model) {
    timed("score-" + model, [&](json& extra) {
      const auto file = read_ubs(ubs_path(), cfg_.dims());
      std::vector<UserScore> scores;
      if (model == "transformer") {
        scores = transformer::score(transformer::load(checkpoint_path(model)), file.users, cfg_.threads);
      } else {
        const auto v = variant(model);
        scores = autoencoder::score(v, autoencoder::load(v, checkpoint_path(model)), file.users);
      }
      write_scores(scores_path(model), scores);
      extra["users"] = scores.size();
    });
  }

  // method: ocsvm | lof | iforest | all
  void detect(const std::string& model, const std::string& method) {
    std::vector<std::string> methods;
    if (method == "all") {
      for (auto m : detectors::kAllMethods) methods.emplace_back(detectors::to_string(m));
    } else {
      methods.emplace_back(detectors::to_string(detectors::parse_method(method)));
    }
    timed("detect-" + model, [&](json& extra) {
      const auto scores = read_scores(scores_path(model));
      const Split split = load_split();
      const std::set<std::string> train_users(split.train.begin(), split.train.end());
      const auto test_list = split.all_test_users();
      const std::set<std::string> test_users(test_list.begin(), test_list.end());
      std::vector<UserScore> train, test;
      for (const auto& s : scores) {
        if (train_users.count(s.user)) train.push_back(s);
        else if (test_users.count(s.user)) test.push_back(s);
      }
      const auto params = cfg_.detector_params();
      for (const auto& m : methods) {
        const auto method_id = detectors::parse_method(m);
        const auto verdicts = detectors::detect(train, test, method_id, params);
        detectors::write_verdicts(verdicts_path(model, m), verdicts, method_id);
      }
      extra["methods"] = methods;
      extra["train_users"] = train.size();
      extra["test_users"] = test.size();
    });
  }

  eval::Report evaluate() {
    eval::Report rep;
    timed("eval", [&](json& extra) {
      const Split split = load_split();
      rep.config_hash = hash_;
      rep.run_id = run_id();
      std::vector<std::vector<detectors::DetectorVerdict>> per_row;
      for (const auto& model : cfg_.models) {
        for (const auto& method : cfg_.methods) {
          const auto path = verdicts_path(model, method);
          if (!fs::exists(path)) fail("MissingInput", "missing verdicts " + path.string());
          const auto all = detectors::read_verdicts(path);
          for (const auto& [set_name, members] : split.test_sets) {
            const std::set<std::string> in_set(members.begin(), members.end());
            std::vector<detectors::DetectorVerdict> vs;
            for (const auto& v : all)
              if (in_set.count(v.user)) vs.push_back(v);
            auto row = eval::compute_metrics(vs);
            row.model = model;
            row.detector = method;
            row.test_set = set_name;
            rep.rows.push_back(std::move(row));
            per_row.push_back(std::move(vs));
          }
        }
      }
      eval::emit_report(dir_, rep, per_row);
      extra["rows"] = rep.rows.size();
    });
    return rep;
  }

  // All stages through the same files the individual commands use.
  eval::Report run_all() {
    if (cfg_.logs_dir.empty()) synth();
    ingest();
    build_ubs();
    for (const auto& m : cfg_.models) {
      train(m);
      score(m);
      detect(m, "all");
    }
    return evaluate();
  }

  // Deterministic id: a function of the config hash only.
  std::string run_id() const { return "run-" + hash_.substr(0, 12); }

 private:
  static autoencoder::Variant variant(const std::string& model) {
    if (model == "auto-tab") return autoencoder::Variant::Tab;
    if (model == "auto-ubs") return autoencoder::Variant::Ubs;
    fail("ConfigError", "unknown model '" + model + "'");
  }

  Split load_split() const { return split_from_json(json::parse(io::read_file(split_path()))); }

  static void write_json(const fs::path& path, const json& j) {
    auto out = io::open_out(path);
    out << j.dump(2) << '\n';
  }

  template <typename Fn>
  void timed(const std::string& stage, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    json extra = json::object();
    log_info("stage " + stage + " started");
    try {
      fn(extra);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail("StageFailure", stage + ": " + e.what());
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json meta = {{"stage", stage},     {"version", kVersion},        {"seed", cfg_.seed},
                 {"threads", cfg_.threads}, {"config_hash", hash_}, {"wall_seconds", wall},
                 {"compiler", __VERSION__}, {"details", extra}};
    write_json(dir_ / ("meta_" + stage + ".json"), meta);
    log_info("stage " + stage + " finished in " + std::to_string(wall) + " s");
  }

  RunConfig cfg_;
  fs::path dir_;
  std::string hash_;
};

}  // namespace ubs::pipeline
