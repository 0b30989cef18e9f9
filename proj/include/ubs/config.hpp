#pragma once

// Run configuration: one JSON document for every stage. Unknown keys are
// rejected at every level; omitted keys keep their defaults.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/autoencoder.hpp"
#include "ubs/common.hpp"
#include "ubs/detectors.hpp"
#include "ubs/eval.hpp"
#include "ubs/ingest.hpp"
#include "ubs/synth.hpp"
#include "ubs/transformer.hpp"

namespace ubs::config {

using nlohmann::json;

struct IngestSection {
  std::string window_start = "2010-01-04";
  int window_days = 501;
  int sessions_per_day = ingest::kDefaultSessionsPerDay;
  std::string internal_domain = "dtaa.com";
  json url_keywords = json::object();  // category -> keyword list
  double max_malformed_fraction = 0.01;
};

struct SplitSection {
  std::string source = "synth";
  std::size_t train_benign = 70;
  std::vector<eval::TestSetSpec> test_sets{{"test", {{"synth", 30, 10}}, {}, 0}};
};

struct DetectSection {
  double nu = 0.1;
  std::optional<double> gamma;
  std::size_t lof_k = 20;
  std::size_t n_trees = 100;
  std::size_t psi = 0;
  double ocsvm_threshold = 0.0;
  double lof_threshold = 1.5;
  double iforest_threshold = 0.55;
  std::string features = "summary";
};

struct RunConfig {
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::string out = "run";
  // Externally supplied logs; empty means the synth stage provides them.
  std::string logs_dir;
  std::string labels;
  synth::SynthConfig synth;
  IngestSection ingest;
  SplitSection split;
  transformer::EncoderConfig transformer;
  autoencoder::MlpAeConfig auto_tab;
  autoencoder::MlpAeConfig auto_ubs;
  DetectSection detect;
  std::vector<std::string> models{"transformer"};
  std::vector<std::string> methods{"ocsvm", "lof", "iforest"};

  UbsDims dims() const {
    return {ingest.window_days, ingest.sessions_per_day, static_cast<int>(ingest::kFeatureCount)};
  }
  ingest::Window window() const { return {io::parse_date(ingest.window_start), ingest.window_days}; }
  ingest::FeatureConfig feature_config() const {
    ingest::FeatureConfig f;
    f.sessions_per_day = ingest.sessions_per_day;
    f.internal_domain = ingest.internal_domain;
    f.keywords = ingest::UrlKeywords::from_json(ingest.url_keywords);
    return f;
  }

  // Stage seeds are derived from the single top-level seed.
  std::uint64_t stage_seed(std::uint64_t stream) const { return derive_seed(seed, stream); }

  transformer::EncoderConfig transformer_config() const {
    auto c = transformer;
    c.seed = stage_seed(3);
    c.dims = dims();
    return c;
  }
  autoencoder::MlpAeConfig autoencoder_config(autoencoder::Variant v) const {
    auto c = v == autoencoder::Variant::Tab ? auto_tab : auto_ubs;
    c.seed = stage_seed(v == autoencoder::Variant::Tab ? 4 : 5);
    const auto F = static_cast<int>(ingest::kFeatureCount);
    c.input_width = v == autoencoder::Variant::Tab ? F : dims().slots() * F;
    return c;
  }
  synth::SynthConfig synth_config() const {
    auto c = synth;
    c.seed = stage_seed(1);
    c.start_date = ingest.window_start;
    return c;
  }
  detectors::DetectorParams detector_params() const {
    detectors::DetectorParams p;
    p.nu = detect.nu;
    p.gamma = detect.gamma;
    p.lof_k = detect.lof_k;
    p.n_trees = detect.n_trees;
    p.psi = detect.psi;
    p.seed = stage_seed(6);
    p.ocsvm_threshold = detect.ocsvm_threshold;
    p.lof_threshold = detect.lof_threshold;
    p.iforest_threshold = detect.iforest_threshold;
    if (detect.features == "summary") p.features = ScoreFeatures::Summary;
    else if (detect.features == "mean") p.features = ScoreFeatures::Mean;
    else fail("ConfigError", "detect.features must be 'summary' or 'mean'");
    return p;
  }
  std::vector<eval::TestSetSpec> test_specs() const {
    auto specs = split.test_sets;
    for (std::size_t i = 0; i < specs.size(); ++i) specs[i].seed = stage_seed(100 + i);
    return specs;
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail("ConfigError", where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) fail("ConfigError", "unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

// Overlays `patch` onto the JSON form of `defaults`; keys outside that form
// are rejected. `seed` and derived fields are not user-settable.
template <typename T>
T overlay(const T& defaults, const json& patch, const std::string& where, std::initializer_list<const char*> hidden) {
  json base = defaults;
  for (const char* h : hidden) base.erase(h);
  if (!patch.is_object()) fail("ConfigError", where + " must be an object");
  for (const auto& [k, v] : patch.items()) {
    if (!base.contains(k)) fail("ConfigError", "unknown key '" + where + "." + k + "'");
    base[k] = v;
  }
  json full = defaults;
  full.update(base);
  return full.get<T>();
}

template <typename T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline void to_json(json& j, const synth::SynthConfig& c) {
  std::vector<std::string> mix;
  for (auto s : c.scenario_mix) mix.emplace_back(synth::to_string(s));
  j = {{"n_benign", c.n_benign},
       {"n_malicious", c.n_malicious},
       {"n_days", c.n_days},
       {"day_start_hour", c.day_start_hour},
       {"max_sessions_per_day", c.max_sessions_per_day},
       {"http_rate", c.http_rate},
       {"email_rate", c.email_rate},
       {"file_rate", c.file_rate},
       {"device_rate", c.device_rate},
       {"external_email_prob", c.external_email_prob},
       {"secondary_pc_prob", c.secondary_pc_prob},
       {"scenario_sessions", c.scenario_sessions},
       {"active_window_days", c.active_window_days},
       {"scenario_mix", mix}};
}

inline synth::SynthConfig synth_from_json(const json& j) {
  detail::check_keys(j,
                     {"n_benign", "n_malicious", "n_days", "day_start_hour", "max_sessions_per_day", "http_rate",
                      "email_rate", "file_rate", "device_rate", "external_email_prob", "secondary_pc_prob",
                      "scenario_sessions", "active_window_days", "scenario_mix"},
                     "synth");
  synth::SynthConfig c;
  detail::get_if(j, "n_benign", c.n_benign);
  detail::get_if(j, "n_malicious", c.n_malicious);
  detail::get_if(j, "n_days", c.n_days);
  detail::get_if(j, "day_start_hour", c.day_start_hour);
  detail::get_if(j, "max_sessions_per_day", c.max_sessions_per_day);
  detail::get_if(j, "http_rate", c.http_rate);
  detail::get_if(j, "email_rate", c.email_rate);
  detail::get_if(j, "file_rate", c.file_rate);
  detail::get_if(j, "device_rate", c.device_rate);
  detail::get_if(j, "external_email_prob", c.external_email_prob);
  detail::get_if(j, "secondary_pc_prob", c.secondary_pc_prob);
  detail::get_if(j, "scenario_sessions", c.scenario_sessions);
  detail::get_if(j, "active_window_days", c.active_window_days);
  if (j.contains("scenario_mix")) {
    c.scenario_mix.clear();
    for (const auto& s : j.at("scenario_mix")) c.scenario_mix.push_back(synth::parse_scenario(s.get<std::string>()));
  }
  return c;
}

inline json to_json(const RunConfig& c) {
  json detect = {{"nu", c.detect.nu},
                 {"lof_k", c.detect.lof_k},
                 {"n_trees", c.detect.n_trees},
                 {"psi", c.detect.psi},
                 {"ocsvm_threshold", c.detect.ocsvm_threshold},
                 {"lof_threshold", c.detect.lof_threshold},
                 {"iforest_threshold", c.detect.iforest_threshold},
                 {"features", c.detect.features}};
  if (c.detect.gamma) detect["gamma"] = *c.detect.gamma;
  json tr = c.transformer;
  tr.erase("seed");
  tr.erase("dims");
  json tab = c.auto_tab, ub = c.auto_ubs;
  for (json* a : {&tab, &ub}) {
    a->erase("seed");
    a->erase("input_width");
  }
  json synth_j;
  to_json(synth_j, c.synth);
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"out", c.out},
          {"logs_dir", c.logs_dir},
          {"labels", c.labels},
          {"synth", synth_j},
          {"ingest",
           {{"window_start", c.ingest.window_start},
            {"window_days", c.ingest.window_days},
            {"sessions_per_day", c.ingest.sessions_per_day},
            {"internal_domain", c.ingest.internal_domain},
            {"url_keywords", c.ingest.url_keywords},
            {"max_malformed_fraction", c.ingest.max_malformed_fraction}}},
          {"split", {{"source", c.split.source}, {"train_benign", c.split.train_benign}, {"test_sets", [&] {
                       json arr = json::array();
                       for (const auto& s : c.split.test_sets) {
                         json e = s;
                         e.erase("seed");
                         arr.push_back(e);
                       }
                       return arr;
                     }()}}},
          {"transformer", tr},
          {"auto_tab", tab},
          {"auto_ubs", ub},
          {"detect", detect},
          {"models", c.models},
          {"methods", c.methods}};
}

inline RunConfig from_json(const json& j) {
  using detail::get_if;
  detail::check_keys(j,
                     {"seed", "threads", "out", "logs_dir", "labels", "synth", "ingest", "split", "transformer",
                      "auto_tab", "auto_ubs", "detect", "models", "methods"},
                     "");
  RunConfig c;
  try {
    get_if(j, "seed", c.seed);
    get_if(j, "threads", c.threads);
    get_if(j, "out", c.out);
    get_if(j, "logs_dir", c.logs_dir);
    get_if(j, "labels", c.labels);
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
    if (j.contains("ingest")) {
      const auto& s = j.at("ingest");
      detail::check_keys(s,
                         {"window_start", "window_days", "sessions_per_day", "internal_domain", "url_keywords",
                          "max_malformed_fraction"},
                         "ingest");
      get_if(s, "window_start", c.ingest.window_start);
      get_if(s, "window_days", c.ingest.window_days);
      get_if(s, "sessions_per_day", c.ingest.sessions_per_day);
      get_if(s, "internal_domain", c.ingest.internal_domain);
      get_if(s, "url_keywords", c.ingest.url_keywords);
      get_if(s, "max_malformed_fraction", c.ingest.max_malformed_fraction);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::check_keys(s, {"source", "train_benign", "test_sets"}, "split");
      get_if(s, "source", c.split.source);
      get_if(s, "train_benign", c.split.train_benign);
      if (s.contains("test_sets")) c.split.test_sets = s.at("test_sets").get<std::vector<eval::TestSetSpec>>();
    }
    if (j.contains("transformer"))
      c.transformer = detail::overlay(c.transformer, j.at("transformer"), "transformer", {"seed", "dims"});
    if (j.contains("auto_tab"))
      c.auto_tab = detail::overlay(c.auto_tab, j.at("auto_tab"), "auto_tab", {"seed", "input_width"});
    if (j.contains("auto_ubs"))
      c.auto_ubs = detail::overlay(c.auto_ubs, j.at("auto_ubs"), "auto_ubs", {"seed", "input_width"});
    if (j.contains("detect")) {
      const auto& s = j.at("detect");
      detail::check_keys(s,
                         {"nu", "gamma", "lof_k", "n_trees", "psi", "ocsvm_threshold", "lof_threshold",
                          "iforest_threshold", "features"},
                         "detect");
      get_if(s, "nu", c.detect.nu);
      if (s.contains("gamma") && !s.at("gamma").is_null()) c.detect.gamma = s.at("gamma").get<double>();
      get_if(s, "lof_k", c.detect.lof_k);
      get_if(s, "n_trees", c.detect.n_trees);
      get_if(s, "psi", c.detect.psi);
      get_if(s, "ocsvm_threshold", c.detect.ocsvm_threshold);
      get_if(s, "lof_threshold", c.detect.lof_threshold);
      get_if(s, "iforest_threshold", c.detect.iforest_threshold);
      get_if(s, "features", c.detect.features);
    }
    get_if(j, "models", c.models);
    get_if(j, "methods", c.methods);
  } catch (const json::exception& e) {
    fail("ConfigError", std::string("bad config value: ") + e.what());
  }
  return c;
}

// Checks cross-field consistency; throws ConfigError.
inline void validate(const RunConfig& c) {
  if (c.threads == 0) fail("ConfigError", "threads must be >= 1");
  if (c.ingest.window_days <= 0) fail("ConfigError", "ingest.window_days must be positive");
  if (c.ingest.sessions_per_day <= 0) fail("ConfigError", "ingest.sessions_per_day must be positive");
  io::parse_date(c.ingest.window_start);
  if (c.synth.n_days > c.ingest.window_days) fail("ConfigError", "synth.n_days exceeds ingest.window_days");
  c.synth_config().validate();
  c.transformer_config().validate();
  c.autoencoder_config(autoencoder::Variant::Tab).validate();
  c.autoencoder_config(autoencoder::Variant::Ubs).validate();
  c.detector_params();
  c.feature_config();
  if (c.detect.nu <= 0.0 || c.detect.nu > 1.0) fail("ConfigError", "detect.nu must be in (0,1]");
  for (const auto& m : c.models)
    if (m != "transformer" && m != "auto-tab" && m != "auto-ubs") fail("ConfigError", "unknown model '" + m + "'");
  for (const auto& m : c.methods) detectors::parse_method(m);
  if (c.split.test_sets.empty()) fail("ConfigError", "split.test_sets must not be empty");
}

inline RunConfig load(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("ConfigError", path.string() + ": " + e.what());
  }
  return from_json(j);
}

// FNV-1a over the canonical (sorted-key, compact) JSON dump. The output
// directory is left out so relocated runs hash alike.
inline std::uint64_t config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out");
  return fnv1a(j.dump());
}

}  // namespace ubs::config
