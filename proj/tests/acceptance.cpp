// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"
#include "ubs/pipeline.hpp"

using namespace ubs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. metric arithmetic

Outcome metric_table() {
  const auto m = eval::metrics_from_confusion({173, 12, 198, 1});
  const std::pair<double, double> checks[] = {
      {m.accuracy, 0.9661}, {m.precision, 0.9351}, {m.recall, 0.9943}, {m.f1, 0.9638}, {m.fpr, 0.0571}};
  bool ok = true;
  for (auto [got, want] : checks) ok = ok && std::abs(got - want) <= 1e-4;
  std::ostringstream d;
  d << "acc " << fmt("%.4f", m.accuracy) << " prec " << fmt("%.4f", m.precision) << " rec "
    << fmt("%.4f", m.recall) << " f1 " << fmt("%.4f", m.f1) << " fpr " << fmt("%.4f", m.fpr);
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 2. test-set cardinalities

Outcome test_set_sizes() {
  std::vector<eval::PoolUser> pool;
  auto add = [&](const std::string& src, int benign, int malicious) {
    for (int i = 0; i < benign; ++i) pool.push_back({src + "/B" + std::to_string(i), Label::Benign, src});
    for (int i = 0; i < malicious; ++i) pool.push_back({src + "/M" + std::to_string(i), Label::Malicious, src});
  };
  add("r4.2", 930, 70);
  add("r5.2", 1901, 99);
  add("r6.2", 3995, 5);
  std::map<std::string, Label> labels;
  for (const auto& u : pool) labels[u.user] = u.label;
  const auto sets = eval::build_test_sets(pool, {}, eval::cert_test_specs(1));
  auto n = [&](const char* s) { return sets.at(s).size(); };
  std::size_t benign4 = 0, mal4 = 0;
  for (const auto& u : sets.at("Test-4")) (labels.at(u) == Label::Benign ? benign4 : mal4) += 1;
  const bool ok = n("Test-1") == 100 && n("Test-2") == 159 && n("Test-3") == 125 && n("Test-4") == 384 &&
                  benign4 == 210 && mal4 == 174;
  std::ostringstream d;
  d << n("Test-1") << "/" << n("Test-2") << "/" << n("Test-3") << "/" << n("Test-4") << " users; Test-4 "
    << benign4 << " benign + " << mal4 << " malicious";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 3. gradient checks

UbsTensor random_tensor(const UbsDims& dims, Rng& rng) {
  UbsTensor t("u", dims, Label::Benign);
  for (std::size_t s = 0; s < dims.slots(); ++s) {
    if (s > 0 && uniform01(rng) < 0.4) continue;
    t.mask[s] = 1;
    for (int f = 0; f < dims.features; ++f)
      t.values[s * static_cast<std::size_t>(dims.features) + static_cast<std::size_t>(f)] =
          static_cast<float>(normal(rng, 0.0, 1.0));
  }
  return t;
}

Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_enc = 0, worst_tab = 0, worst_ubs = 0;
  constexpr int kSeeds = 20;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(derive_seed(2024, static_cast<std::uint64_t>(seed)));
    const UbsDims dims{2, 3, static_cast<int>(ingest::kFeatureCount)};
    {
      transformer::EncoderConfig c;
      c.d_model = 4;
      c.n_blocks = 1;
      c.n_heads = 2;
      c.d_ff = 8;
      c.seed = static_cast<std::uint64_t>(seed);
      c.dims = dims;
      transformer::EncoderModel m(c);
      const auto u = random_tensor(dims, rng);
      auto value = [&] {
        nn::Tape t;
        Rng r(0);
        return transformer::user_loss(m, t, u, false, r).value().data[0];
      };
      auto backward = [&] {
        nn::Tape t;
        Rng r(0);
        t.backward(transformer::user_loss(m, t, u, false, r));
      };
      worst_enc = std::max(worst_enc, testutil::gradcheck(value, backward, m.parameters()));
    }
    for (auto variant : {autoencoder::Variant::Tab, autoencoder::Variant::Ubs}) {
      autoencoder::MlpAeConfig c;
      c.input_width = variant == autoencoder::Variant::Tab ? dims.features : static_cast<int>(dims.cells());
      c.hidden = {16, 4};
      c.seed = static_cast<std::uint64_t>(seed);
      autoencoder::MlpAutoencoder m(c);
      // Nonzero biases keep ReLU inputs off the kink at zero.
      for (auto* p : m.parameters())
        if (p->value.rows == 1)
          for (auto& v : p->value.data) v = normal(rng, 0.0, 0.2);
      const auto u = random_tensor(dims, rng);
      nn::Mat x;
      std::vector<std::uint8_t> mask;
      if (variant == autoencoder::Variant::Tab) {
        x = autoencoder::session_rows(u);
        mask.assign(x.size(), 1);
      } else {
        const auto f = autoencoder::flatten_user(u);
        x = f.row;
        mask = f.mask;
      }
      auto loss = [&](nn::Tape& t) {
        Rng r(0);
        return nn::mse_masked(m.forward(t, x, false, r), x, mask);
      };
      auto value = [&] {
        nn::Tape t;
        return loss(t).value().data[0];
      };
      auto backward = [&] {
        nn::Tape t;
        t.backward(loss(t));
      };
      const double e = testutil::gradcheck(value, backward, m.parameters());
      (variant == autoencoder::Variant::Tab ? worst_tab : worst_ubs) = std::max(
          variant == autoencoder::Variant::Tab ? worst_tab : worst_ubs, e);
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_enc < 1e-4 && worst_tab < 1e-4 && worst_ubs < 1e-4 && secs < 30.0;
  std::ostringstream d;
  d << kSeeds << " seeds, worst rel err encoder " << fmt("%.2e", worst_enc) << " auto-tab "
    << fmt("%.2e", worst_tab) << " auto-ubs " << fmt("%.2e", worst_ubs) << ", " << fmt("%.1f", secs) << " s";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 4. detector oracles

std::vector<detectors::Point> cloud(std::size_t n, std::size_t dim, Rng& rng, double sd = 1.0) {
  std::vector<detectors::Point> pts(n, detectors::Point(dim));
  for (auto& p : pts)
    for (auto& v : p) v = normal(rng, 0.0, sd);
  return pts;
}

Outcome detector_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  double lof_err = 0;
  for (std::size_t k : {2u, 5u, 10u})
    for (std::size_t n : {16u, 40u, 64u}) {
      Rng rng(derive_seed(k, n));
      const auto pts = cloud(n, 4, rng);
      const auto m = detectors::lof_fit(pts, k);
      for (const auto& q : cloud(10, 4, rng, 2.0)) lof_err = std::max(lof_err, std::abs(m.score(q) - oracles::naive_lof(pts, q, k)));
    }

  double svm_err = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(77, seed));
    const std::size_t n = 3 + seed % 6;
    const auto pts = cloud(n, 2, rng);
    const double nu = 0.2 + 0.04 * static_cast<double>(seed);
    const auto m = detectors::ocsvm_fit(pts, nu, 0.5);
    const auto a = oracles::ocsvm_qp(pts, 0.5, nu);
    svm_err = std::max(svm_err, std::abs(m.dual_objective() - oracles::ocsvm_dual(pts, a, 0.5)));
  }

  const bool c2 = detectors::average_path_length(2) == 1.0;
  bool half = true;
  for (std::size_t psi : {2u, 16u, 256u}) half = half && std::abs(detectors::anomaly_score(detectors::average_path_length(psi), psi) - 0.5) < 1e-15;

  Rng rng(99);
  const auto pts = cloud(128, 2, rng);
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto m = detectors::iforest_fit(pts, 100, 0, seed);
    const double far = m.score(detectors::Point{10.0, -10.0});
    bool top = true;
    for (const auto& p : pts) top = top && far > m.score(p);
    wins += top;
  }
  const double secs = seconds_since(t0);
  const bool ok = lof_err <= 1e-9 && svm_err <= 1e-3 && c2 && half && wins >= 95 && secs < 120.0;
  std::ostringstream d;
  d << "lof max err " << fmt("%.1e", lof_err) << ", ocsvm dual gap " << fmt("%.1e", svm_err) << ", c(2)=1 "
    << (c2 ? "yes" : "no") << ", s=0.5 " << (half ? "yes" : "no") << ", far point top in " << wins << "/100, "
    << fmt("%.1f", secs) << " s";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 5 and 6. desk-scale runs

struct SeedRun {
  std::uint64_t seed = 0;
  eval::Report report;
  std::map<std::string, std::vector<detectors::DetectorVerdict>> transformer_verdicts;  // by method
  double transformer_seconds = 0;  // synth through transformer detect
};

std::vector<SeedRun> desk_runs(const fs::path& root) {
  std::vector<SeedRun> runs;
  const auto base = config::load(fs::path(UBS_SOURCE_DIR) / "configs" / "desk.json");
  for (std::uint64_t i = 0; i < 5; ++i) {
    auto cfg = base;
    cfg.seed = 42 + i;
    cfg.out = (root / ("seed" + std::to_string(cfg.seed))).string();
    pipeline::Run run(cfg);
    SeedRun r;
    r.seed = cfg.seed;
    auto t0 = std::chrono::steady_clock::now();
    run.synth();
    run.ingest();
    run.build_ubs();
    run.train("transformer");
    run.score("transformer");
    run.detect("transformer", "all");
    r.transformer_seconds = seconds_since(t0);
    for (const auto& m : cfg.models) {
      if (m == "transformer") continue;
      run.train(m);
      run.score(m);
      run.detect(m, "all");
    }
    r.report = run.evaluate();
    for (const auto& method : cfg.methods) r.transformer_verdicts[method] = detectors::read_verdicts(run.verdicts_path("transformer", method));
    std::fprintf(stderr, "  desk seed %llu done (transformer path %.1f s)\n", static_cast<unsigned long long>(r.seed),
                 r.transformer_seconds);
    runs.push_back(std::move(r));
  }
  return runs;
}

Outcome desk_end_to_end(const std::vector<SeedRun>& runs) {
  bool metrics_ok = true;
  int agreeing_seeds = 0;
  double slowest = 0;
  std::ostringstream d;
  for (const auto& r : runs) {
    int good = 0;
    for (const auto& row : r.report.rows)
      if (row.model == "transformer" && row.metrics.recall >= 0.9 && row.metrics.auroc && *row.metrics.auroc >= 0.9) ++good;
    metrics_ok = metrics_ok && good >= 2;

    // Agreement: every detector gives each test user the same verdict.
    std::size_t disagree = 0;
    const auto& first = r.transformer_verdicts.begin()->second;
    for (std::size_t u = 0; u < first.size(); ++u)
      for (const auto& [_, vs] : r.transformer_verdicts)
        if (vs[u].user != first[u].user || vs[u].predicted != first[u].predicted) {
          ++disagree;
          break;
        }
    agreeing_seeds += disagree == 0;
    slowest = std::max(slowest, r.transformer_seconds);
    d << "seed " << r.seed << ": " << good << "/3 detectors at recall,auroc>=0.9, " << disagree
      << " users split; ";
  }
  d << "detectors agree on " << agreeing_seeds << "/5 seeds; slowest run " << fmt("%.1f", slowest) << " s";
  return {metrics_ok && agreeing_seeds >= 1 && slowest < 300.0, d.str()};
}

Outcome model_ordering(const std::vector<SeedRun>& runs) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : runs)
    for (const auto& row : r.report.rows)
      if (row.metrics.auroc) {
        acc[row.model].first += *row.metrics.auroc;
        acc[row.model].second += 1;
      }
  auto mean = [&](const char* m) { return acc[m].second ? acc[m].first / acc[m].second : 0.0; };
  const double tr = mean("transformer"), ub = mean("auto-ubs"), tab = mean("auto-tab");
  constexpr double kTie = 0.02;
  const bool ok = tr + kTie >= ub && ub + kTie >= tab;
  std::ostringstream d;
  d << "mean AUROC transformer " << fmt("%.4f", tr) << " >= auto-ubs " << fmt("%.4f", ub) << " >= auto-tab "
    << fmt("%.4f", tab) << " (tie band 0.02)";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 7. determinism and formats

Outcome determinism(const fs::path& root) {
  std::vector<std::string> problems;
  Rng rng(5);
  const UbsDims dims{7, 3, static_cast<int>(ingest::kFeatureCount)};
  UserDataMap users;
  for (int i = 0; i < 6; ++i) {
    auto t = random_tensor(dims, rng);
    t.user = "U" + std::to_string(i);
    t.label = i % 2 ? Label::Malicious : Label::Benign;
    users.emplace(t.user, t);
  }
  write_ubs(root / "a.ubs", users, dims);
  const auto back = read_ubs(root / "a.ubs", dims);
  write_ubs(root / "b.ubs", back.users, dims);
  bool ubs_ok = io::read_file(root / "a.ubs") == io::read_file(root / "b.ubs");
  for (const auto& [id, t] : users) {
    const auto& b = back.users.at(id);
    ubs_ok = ubs_ok && b.values == t.values && b.mask == t.mask && b.label == t.label;
  }
  if (!ubs_ok) problems.push_back("ubs round-trip");

  transformer::EncoderConfig ec;
  ec.d_model = 8;
  ec.n_blocks = 2;
  ec.n_heads = 2;
  ec.d_ff = 16;
  ec.epochs = 2;
  ec.dims = dims;
  transformer::EncoderModel model(ec);
  UserDataMap benign;
  for (const auto& [id, t] : users)
    if (t.label == Label::Benign) benign.emplace(id, t);
  transformer::train(model, benign);
  transformer::save(model, root / "a.ckpt");
  const auto loaded = transformer::load(root / "a.ckpt");
  transformer::save(loaded, root / "b.ckpt");
  const bool ck_ok = io::read_file(root / "a.ckpt") == io::read_file(root / "b.ckpt") &&
                     transformer::session_errors(loaded, users.at("U1")) == transformer::session_errors(model, users.at("U1"));
  if (!ck_ok) problems.push_back("checkpoint round-trip");

  auto cfg = config::from_json(nlohmann::json::parse(R"({
    "seed": 11, "threads": 2,
    "synth": {"n_benign": 24, "n_malicious": 6, "n_days": 21},
    "ingest": {"window_start": "2010-01-04", "window_days": 21},
    "split": {"train_benign": 14, "test_sets": [{"name": "t", "strata": [{"benign": 10, "malicious": 6}]}]},
    "transformer": {"d_model": 8, "n_blocks": 1, "n_heads": 2, "d_ff": 16, "epochs": 3},
    "auto_tab": {"hidden": [8, 4], "epochs": 3},
    "auto_ubs": {"hidden": [16, 4], "epochs": 3},
    "models": ["transformer", "auto-tab", "auto-ubs"]
  })"));
  std::string reports[2];
  for (int i = 0; i < 2; ++i) {
    cfg.out = (root / ("run" + std::to_string(i))).string();
    pipeline::Run run(cfg);
    run.run_all();
    reports[i] = io::read_file(run.report_path());
  }
  if (reports[0] != reports[1]) problems.push_back("reports differ for identical seeds");

  const auto pe = transformer::positional_encoding(dims.slots(), 16);
  double pe_err = 0;
  for (std::size_t pos = 0; pos < pe.rows; ++pos)
    for (std::size_t i = 0; i < 16; i += 2) {
      const double angle = static_cast<double>(pos) * std::exp(-std::log(10000.0) * static_cast<double>(i) / 16.0);
      pe_err = std::max({pe_err, std::abs(pe(pos, i) - std::sin(angle)), std::abs(pe(pos, i + 1) - std::cos(angle))});
    }
  if (pe_err > 1e-12) problems.push_back("positional encoding off by " + fmt("%.1e", pe_err));

  std::ostringstream d;
  d << "ubs.bin and checkpoint bit-exact, identical reports for identical seeds (2 threads), PE max err "
    << fmt("%.1e", pe_err);
  if (!problems.empty()) {
    d.str("");
    for (const auto& p : problems) d << p << "; ";
  }
  return {problems.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 8. padding invariance

Outcome padding_invariance() {
  const UbsDims dims{5, 4, static_cast<int>(ingest::kFeatureCount)};
  transformer::EncoderConfig ec;
  ec.d_model = 8;
  ec.n_blocks = 2;
  ec.n_heads = 2;
  ec.d_ff = 16;
  ec.dims = dims;
  const transformer::EncoderModel tr(ec);
  autoencoder::MlpAeConfig tab_c, ubs_c;
  tab_c.input_width = dims.features;
  tab_c.hidden = {16, 4};
  ubs_c.input_width = static_cast<int>(dims.cells());
  ubs_c.hidden = {32, 8};
  const autoencoder::MlpAutoencoder tab(tab_c), ubsm(ubs_c);

  double worst = 0;
  auto track = [&](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(8, seed));
    const auto u = random_tensor(dims, rng);
    auto noisy = u;
    for (std::size_t s = 0; s < dims.slots(); ++s)
      if (!u.mask[s])
        for (int f = 0; f < dims.features; ++f)
          noisy.values[s * static_cast<std::size_t>(dims.features) + static_cast<std::size_t>(f)] =
              static_cast<float>(normal(rng, 0.0, 1e3));
    UserDataMap a{{"u", u}}, b{{"u", noisy}};
    auto loss = [&](const UbsTensor& t) {
      nn::Tape tape;
      Rng r(0);
      return transformer::user_loss(tr, tape, t, false, r).value().data[0];
    };
    track({loss(u)}, {loss(noisy)});
    auto scores = [&](const std::vector<UserScore>& s) {
      std::vector<double> out = s.at(0).session_errors;
      out.insert(out.end(), s.at(0).summary.begin(), s.at(0).summary.end());
      return out;
    };
    track(scores(transformer::score(tr, a)), scores(transformer::score(tr, b)));
    track(scores(autoencoder::score(autoencoder::Variant::Tab, tab, a)),
          scores(autoencoder::score(autoencoder::Variant::Tab, tab, b)));
    track(scores(autoencoder::score(autoencoder::Variant::Ubs, ubsm, a)),
          scores(autoencoder::score(autoencoder::Variant::Ubs, ubsm, b)));
  }
  return {worst <= 1e-9, "20 users, padding noise sd 1e3, max change in loss or score " + fmt("%.1e", worst)};
}

}  // namespace

int main() {
  setenv("UBS_LOG", "error", 0);
  testutil::TempDir scratch("acceptance");
  std::vector<SeedRun> runs;
  std::string run_error;
  auto ensure_runs = [&] {
    if (runs.empty() && run_error.empty()) {
      try {
        runs = desk_runs(scratch.path());
      } catch (const std::exception& e) {
        run_error = e.what();
      }
    }
    if (!run_error.empty()) throw std::runtime_error("desk runs failed: " + run_error);
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric-table", metric_table},
      {"test-set-cardinalities", test_set_sizes},
      {"gradient-checks", gradient_checks},
      {"detector-oracles", detector_oracles},
      {"desk-end-to-end", [&] { ensure_runs(); return desk_end_to_end(runs); }},
      {"model-ordering", [&] { ensure_runs(); return model_ordering(runs); }},
      {"determinism-formats", [&] { return determinism(scratch.path()); }},
      {"padding-invariance", padding_invariance},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
