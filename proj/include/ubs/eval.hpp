#pragma once

// Stratified test sets, confusion-matrix metrics, AUROC, and reports.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/detectors.hpp"
#include "ubs/io.hpp"

namespace ubs::eval {

// ---------------------------------------------------------------------------
// Test sets

struct PoolUser {
  std::string user;
  Label label = Label::Unknown;
  std::string source = "synth";
};

struct Stratum {
  std::string source;
  std::size_t benign = 0;
  std::size_t malicious = 0;
};

// Either sampled from strata, or the union of earlier-named sets.
struct TestSetSpec {
  std::string name;
  std::vector<Stratum> strata;
  std::vector<std::string> union_of;
  std::uint64_t seed = 0;
};

using TestSets = std::map<std::string, std::vector<std::string>>;

inline void to_json(nlohmann::json& j, const Stratum& s) {
  j = {{"source", s.source}, {"benign", s.benign}, {"malicious", s.malicious}};
}
inline void from_json(const nlohmann::json& j, Stratum& s) {
  for (const auto& [k, _] : j.items())
    if (k != "source" && k != "benign" && k != "malicious") fail("ConfigError", "unknown stratum key '" + k + "'");
  s.source = j.value("source", "synth");
  s.benign = j.value("benign", std::size_t{0});
  s.malicious = j.value("malicious", std::size_t{0});
}
inline void to_json(nlohmann::json& j, const TestSetSpec& s) {
  j = {{"name", s.name}, {"strata", s.strata}, {"union_of", s.union_of}, {"seed", s.seed}};
}
inline void from_json(const nlohmann::json& j, TestSetSpec& s) {
  for (const auto& [k, _] : j.items())
    if (k != "name" && k != "strata" && k != "union_of" && k != "seed")
      fail("ConfigError", "unknown test set key '" + k + "'");
  s.name = j.at("name");
  s.strata = j.value("strata", std::vector<Stratum>{});
  s.union_of = j.value("union_of", std::vector<std::string>{});
  s.seed = j.value("seed", std::uint64_t{0});
}

namespace detail {
// k distinct picks from `from` (sorted input, seeded), returned sorted.
inline std::vector<std::string> sample(std::vector<std::string> from, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(from[i], from[i + uniform_index(rng, from.size() - i)]);
  from.resize(k);
  std::sort(from.begin(), from.end());
  return from;
}
}  // namespace detail

// Samples every stratum without replacement. Sampled sets never share users
// with each other or with `training`; union sets are assembled afterwards.
inline TestSets build_test_sets(std::span<const PoolUser> pool, const std::set<std::string>& training,
                                std::span<const TestSetSpec> specs) {
  std::set<std::string> used(training.begin(), training.end());
  TestSets out;
  for (const auto& spec : specs) {
    if (!spec.union_of.empty()) continue;
    if (out.count(spec.name)) fail("ConfigError", "duplicate test set " + spec.name);
    std::vector<std::string> members;
    for (std::size_t si = 0; si < spec.strata.size(); ++si) {
      const auto& st = spec.strata[si];
      for (Label lab : {Label::Benign, Label::Malicious}) {
        const std::size_t want = lab == Label::Benign ? st.benign : st.malicious;
        if (want == 0) continue;
        std::vector<std::string> avail;
        for (const auto& u : pool)
          if (u.source == st.source && u.label == lab && !used.count(u.user)) avail.push_back(u.user);
        std::sort(avail.begin(), avail.end());
        avail.erase(std::unique(avail.begin(), avail.end()), avail.end());
        if (avail.size() < want)
          fail("InsufficientUsers", spec.name + ": wanted " + std::to_string(want) + " " +
                                        std::string(to_string(lab)) + " users from " + st.source + ", " +
                                        std::to_string(avail.size()) + " available");
        Rng rng(derive_seed(spec.seed, si * 2 + (lab == Label::Malicious ? 1 : 0)));
        for (auto& u : detail::sample(std::move(avail), want, rng)) {
          used.insert(u);
          members.push_back(std::move(u));
        }
      }
    }
    std::sort(members.begin(), members.end());
    out.emplace(spec.name, std::move(members));
  }
  for (const auto& spec : specs) {
    if (spec.union_of.empty()) continue;
    std::set<std::string> merged;
    for (const auto& part : spec.union_of) {
      auto it = out.find(part);
      if (it == out.end()) fail("ConfigError", spec.name + " unions unknown set " + part);
      merged.insert(it->second.begin(), it->second.end());
    }
    out.emplace(spec.name, std::vector<std::string>(merged.begin(), merged.end()));
  }
  return out;
}

// Training roster: n benign users from `source`, sampled with `seed`.
inline std::set<std::string> sample_training(std::span<const PoolUser> pool, std::size_t n, std::uint64_t seed,
                                             const std::string& source = "synth") {
  std::vector<std::string> avail;
  for (const auto& u : pool)
    if (u.label == Label::Benign && u.source == source) avail.push_back(u.user);
  std::sort(avail.begin(), avail.end());
  if (avail.size() < n)
    fail("InsufficientUsers", "wanted " + std::to_string(n) + " benign training users, have " +
                                  std::to_string(avail.size()));
  Rng rng(derive_seed(seed, 0x7261696e));
  auto picked = detail::sample(std::move(avail), n, rng);
  return {picked.begin(), picked.end()};
}

// Four CERT evaluation sets: per-release sets 1-3 and their
// union as set 4 (30+60+120 benign, 70+99+5 malicious).
inline std::vector<TestSetSpec> cert_test_specs(std::uint64_t seed = 0) {
  return {
      {"Test-1", {{"r4.2", 30, 70}}, {}, seed},
      {"Test-2", {{"r5.2", 60, 99}}, {}, seed},
      {"Test-3", {{"r6.2", 120, 5}}, {}, seed},
      {"Test-4", {}, {"Test-1", "Test-2", "Test-3"}, seed},
  };
}

// ---------------------------------------------------------------------------
// Metrics (malicious = positive)

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auroc;
  double fnr = 0.0;
  double fpr = 0.0;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct MetricsReport {
  std::string model;
  std::string detector;
  std::string test_set;
  Metrics metrics;
  ConfusionMatrix confusion;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

namespace detail {
inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

// Zero denominators give 0.
inline Metrics metrics_from_confusion(const ConfusionMatrix& c) {
  using detail::ratio;
  Metrics m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.fnr = ratio(c.fn, c.fn + c.tp);
  m.fpr = ratio(c.fp, c.fp + c.tn);
  return m;
}

// Mann-Whitney U / (n_pos * n_neg) with midranks for ties; nullopt when a
// class is missing.
inline std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) fail("ShapeMismatch", "scores/labels length differ");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto p : positive) n_pos += p ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (positive[order[t]]) rank_sum += midrank;
    i = j + 1;
  }
  const double u = rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline ConfusionMatrix confusion(std::span<const detectors::DetectorVerdict> verdicts) {
  ConfusionMatrix c;
  for (const auto& v : verdicts) {
    if (v.label == Label::Unknown) fail("ConfigError", "verdict for " + v.user + " has no ground-truth label");
    const bool actual = v.label == Label::Malicious;
    const bool predicted = v.predicted == Label::Malicious;
    if (actual && predicted) ++c.tp;
    else if (actual) ++c.fn;
    else if (predicted) ++c.fp;
    else ++c.tn;
  }
  return c;
}

inline MetricsReport compute_metrics(std::span<const detectors::DetectorVerdict> verdicts) {
  MetricsReport r;
  r.confusion = confusion(verdicts);
  r.metrics = metrics_from_confusion(r.confusion);
  std::vector<double> scores;
  std::vector<std::uint8_t> pos;
  for (const auto& v : verdicts) {
    scores.push_back(v.raw_score);
    pos.push_back(v.label == Label::Malicious ? 1 : 0);
  }
  r.metrics.auroc = auroc(scores, pos);
  if (!r.metrics.auroc) log_warn("single-class verdict set; AUROC not reported");
  return r;
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // predict positive when score >= threshold
};

// From (0,0) at +inf down to (1,1) at the lowest score.
inline std::vector<RocPoint> roc_curve(std::span<const detectors::DetectorVerdict> verdicts) {
  std::vector<std::pair<double, bool>> s;
  std::size_t n_pos = 0;
  for (const auto& v : verdicts) {
    const bool p = v.label == Label::Malicious;
    s.emplace_back(v.raw_score, p);
    n_pos += p ? 1 : 0;
  }
  const std::size_t n_neg = s.size() - n_pos;
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < s.size()) {
    const double thr = s[i].first;
    while (i < s.size() && s[i].first == thr) {
      (s[i].second ? tp : fp) += 1;
      ++i;
    }
    out.push_back({detail::ratio(fp, n_neg), detail::ratio(tp, n_pos), thr});
  }
  return out;
}

inline void write_roc(const std::filesystem::path& path, std::span<const RocPoint> pts) {
  auto out = io::open_out(path);
  out << "fpr,tpr,threshold\n";
  char buf[96];
  for (const auto& p : pts) {
    if (std::isinf(p.threshold)) std::snprintf(buf, sizeof buf, "%.17g,%.17g,inf\n", p.fpr, p.tpr);
    else std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Report JSON: {run_id, config_hash, rows: [{model, detector, test_set,
// metrics{...}, confusion{...}}]}

struct Report {
  std::string run_id;
  std::string config_hash;
  std::vector<MetricsReport> rows;
  friend bool operator==(const Report&, const Report&) = default;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  const auto& m = r.metrics;
  nlohmann::json metrics = {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
                            {"f1", m.f1},             {"fnr", m.fnr},             {"fpr", m.fpr}};
  metrics["auroc"] = m.auroc ? nlohmann::json(*m.auroc) : nlohmann::json(nullptr);
  return {{"model", r.model},
          {"detector", r.detector},
          {"test_set", r.test_set},
          {"metrics", metrics},
          {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}}}};
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.model = j.at("model");
  r.detector = j.at("detector");
  r.test_set = j.at("test_set");
  const auto& m = j.at("metrics");
  r.metrics.accuracy = m.at("accuracy");
  r.metrics.precision = m.at("precision");
  r.metrics.recall = m.at("recall");
  r.metrics.f1 = m.at("f1");
  r.metrics.fnr = m.at("fnr");
  r.metrics.fpr = m.at("fpr");
  if (!m.at("auroc").is_null()) r.metrics.auroc = m.at("auroc").get<double>();
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp"), c.at("fp"), c.at("tn"), c.at("fn")};
  return r;
}

inline nlohmann::json to_json(const Report& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) rows.push_back(to_json(r));
  return {{"run_id", rep.run_id}, {"config_hash", rep.config_hash}, {"rows", rows}};
}

inline Report report_from_json(const nlohmann::json& j) {
  Report rep;
  rep.run_id = j.at("run_id");
  rep.config_hash = j.at("config_hash");
  for (const auto& r : j.at("rows")) rep.rows.push_back(metrics_report_from_json(r));
  return rep;
}

inline void write_report(const std::filesystem::path& path, const Report& rep) {
  auto out = io::open_out(path);
  out << to_json(rep).dump(2) << '\n';
}

inline Report read_report(const std::filesystem::path& path) {
  return report_from_json(nlohmann::json::parse(io::read_file(path)));
}

// Report JSON plus one ROC CSV per row, named roc_<model>_<detector>_<set>.csv.
// `verdicts` is parallel to rep.rows.
inline void emit_report(const std::filesystem::path& dir, const Report& rep,
                        std::span<const std::vector<detectors::DetectorVerdict>> verdicts) {
  if (verdicts.size() != rep.rows.size()) fail("ShapeMismatch", "one verdict list per report row required");
  write_report(dir / "report.json", rep);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    write_roc(dir / ("roc_" + r.model + "_" + r.detector + "_" + r.test_set + ".csv"), roc_curve(verdicts[i]));
  }
}

}  // namespace ubs::eval
