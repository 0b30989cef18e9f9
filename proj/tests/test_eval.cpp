#include <gtest/gtest.h>

#include "test_util.hpp"
#include "ubs/eval.hpp"

using namespace ubs;
using namespace ubs::eval;
using detectors::DetectorVerdict;

namespace {

// Release pools the size of the public CERT releases.
std::vector<PoolUser> cert_sized_pool() {
  std::vector<PoolUser> pool;
  auto add = [&](const std::string& src, int benign, int malicious) {
    for (int i = 0; i < benign; ++i) pool.push_back({src + "/B" + std::to_string(i), Label::Benign, src});
    for (int i = 0; i < malicious; ++i) pool.push_back({src + "/M" + std::to_string(i), Label::Malicious, src});
  };
  add("r4.2", 930, 70);
  add("r5.2", 1901, 99);
  add("r6.2", 3995, 5);
  return pool;
}

std::size_t count_label(const std::vector<std::string>& users, const std::vector<PoolUser>& pool, Label l) {
  std::map<std::string, Label> by_id;
  for (const auto& u : pool) by_id[u.user] = u.label;
  return static_cast<std::size_t>(std::count_if(users.begin(), users.end(), [&](const auto& u) { return by_id.at(u) == l; }));
}

// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
double brute_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

std::vector<DetectorVerdict> verdicts_for(const ConfusionMatrix& c) {
  std::vector<DetectorVerdict> v;
  auto add = [&](std::size_t n, Label pred, Label truth, double score) {
    for (std::size_t i = 0; i < n; ++i) v.push_back({"u" + std::to_string(v.size()), score, pred, truth});
  };
  add(c.tp, Label::Malicious, Label::Malicious, 0.9);
  add(c.fn, Label::Benign, Label::Malicious, 0.4);
  add(c.fp, Label::Malicious, Label::Benign, 0.8);
  add(c.tn, Label::Benign, Label::Benign, 0.1);
  return v;
}

}  // namespace

TEST(Metrics, Test4ConfusionRow) {
  const auto m = metrics_from_confusion({173, 12, 198, 1});
  EXPECT_NEAR(m.accuracy, 0.9661, 1e-4);
  EXPECT_NEAR(m.precision, 0.9351, 1e-4);
  EXPECT_NEAR(m.recall, 0.9943, 1e-4);
  EXPECT_NEAR(m.f1, 0.9638, 1e-4);
  EXPECT_NEAR(m.fpr, 0.0571, 1e-4);
  EXPECT_NEAR(m.fnr, 0.0057, 1e-4);
  const auto r = compute_metrics(verdicts_for({173, 12, 198, 1}));
  EXPECT_EQ(r.confusion, (ConfusionMatrix{173, 12, 198, 1}));
  EXPECT_EQ(r.metrics.accuracy, m.accuracy);
}

TEST(Metrics, IdentitiesOnRandomMatrices) {
  Rng rng(1);
  for (int it = 0; it < 200; ++it) {
    ConfusionMatrix c{uniform_index(rng, 20) + 1, uniform_index(rng, 20) + 1, uniform_index(rng, 20) + 1,
                      uniform_index(rng, 20) + 1};
    const auto m = metrics_from_confusion(c);
    EXPECT_NEAR(m.recall + m.fnr, 1.0, 1e-15);
    EXPECT_NEAR(1.0 / m.f1, 0.5 * (1.0 / m.precision + 1.0 / m.recall), 1e-12);
    const double p = static_cast<double>(c.tp + c.fn), n = static_cast<double>(c.fp + c.tn);
    EXPECT_NEAR(m.accuracy, (m.recall * p + (1.0 - m.fpr) * n) / (p + n), 1e-12);
  }
}

TEST(Metrics, ZeroDenominatorsGiveZero) {
  const auto m = metrics_from_confusion({0, 0, 5, 0});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_EQ(m.fnr, 0.0);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(metrics_from_confusion({}).accuracy, 0.0);
}

TEST(Metrics, UnlabeledVerdictRejected) {
  const std::vector<DetectorVerdict> v{{"x", 1.0, Label::Benign, Label::Unknown}};
  EXPECT_THROW(compute_metrics(v), Error);
}

TEST(Auroc, MatchesPairwiseDefinition) {
  Rng rng(2);
  for (int it = 0; it < 50; ++it) {
    const std::size_t n = 2 + uniform_index(rng, 40);
    std::vector<double> s(n);
    std::vector<std::uint8_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 6));  // many ties
      pos[i] = uniform01(rng) < 0.4;
    }
    pos[0] = 1;
    pos[1] = 0;
    EXPECT_NEAR(*auroc(s, pos), brute_auroc(s, pos), 1e-12);
  }
}

TEST(Auroc, EdgeCases) {
  const std::vector<std::uint8_t> pos{0, 0, 1, 1};
  EXPECT_EQ(*auroc(std::vector<double>{1, 2, 3, 4}, pos), 1.0);
  EXPECT_EQ(*auroc(std::vector<double>{4, 3, 2, 1}, pos), 0.0);
  EXPECT_EQ(*auroc(std::vector<double>{7, 7, 7, 7}, pos), 0.5);
  EXPECT_FALSE(auroc(std::vector<double>{1, 2}, std::vector<std::uint8_t>{1, 1}).has_value());
  EXPECT_THROW(auroc(std::vector<double>{1}, pos), Error);
}

TEST(Roc, EndpointsAndMonotone) {
  Rng rng(3);
  std::vector<DetectorVerdict> v;
  for (int i = 0; i < 30; ++i)
    v.push_back({"u" + std::to_string(i), std::floor(uniform01(rng) * 8), Label::Benign,
                 i % 3 == 0 ? Label::Malicious : Label::Benign});
  const auto roc = roc_curve(v);
  EXPECT_EQ(roc.front().fpr, 0.0);
  EXPECT_EQ(roc.front().tpr, 0.0);
  EXPECT_TRUE(std::isinf(roc.front().threshold));
  EXPECT_EQ(roc.back().fpr, 1.0);
  EXPECT_EQ(roc.back().tpr, 1.0);
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    EXPECT_GE(roc[i].fpr, roc[i - 1].fpr);
    EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
    EXPECT_LT(roc[i].threshold, roc[i - 1].threshold);
    area += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
  }
  // Trapezoids over tie groups equal the midrank statistic.
  EXPECT_NEAR(area, *compute_metrics(v).metrics.auroc, 1e-12);
}

TEST(TestSets, CertPoolCardinalities) {
  const auto pool = cert_sized_pool();
  const auto sets = build_test_sets(pool, {}, cert_test_specs(5));
  ASSERT_EQ(sets.size(), 4u);
  EXPECT_EQ(sets.at("Test-1").size(), 100u);
  EXPECT_EQ(sets.at("Test-2").size(), 159u);
  EXPECT_EQ(sets.at("Test-3").size(), 125u);
  EXPECT_EQ(sets.at("Test-4").size(), 384u);
  EXPECT_EQ(count_label(sets.at("Test-4"), pool, Label::Benign), 210u);
  EXPECT_EQ(count_label(sets.at("Test-4"), pool, Label::Malicious), 174u);
  EXPECT_EQ(count_label(sets.at("Test-1"), pool, Label::Malicious), 70u);
  std::set<std::string> seen;
  for (const char* name : {"Test-1", "Test-2", "Test-3"})
    for (const auto& u : sets.at(name)) EXPECT_TRUE(seen.insert(u).second) << u;
  for (const auto& u : sets.at("Test-3")) EXPECT_EQ(u.rfind("r6.2/", 0), 0u);
}

TEST(TestSets, DisjointFromTrainingAndDeterministic) {
  const auto pool = cert_sized_pool();
  const auto train = sample_training(pool, 500, 9, "r4.2");
  EXPECT_EQ(train.size(), 500u);
  const auto a = build_test_sets(pool, train, cert_test_specs(1));
  const auto b = build_test_sets(pool, train, cert_test_specs(1));
  EXPECT_EQ(a, b);
  for (const auto& u : a.at("Test-4")) EXPECT_FALSE(train.count(u));
  EXPECT_NE(a, build_test_sets(pool, train, cert_test_specs(2)));
}

TEST(TestSets, InsufficientUsers) {
  auto pool = cert_sized_pool();
  const auto train = sample_training(pool, 901, 1, "r4.2");
  try {
    build_test_sets(pool, train, cert_test_specs());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InsufficientUsers");
  }
  EXPECT_THROW(sample_training(pool, 931, 1, "r4.2"), Error);
  std::vector<TestSetSpec> bad{{"U", {}, {"missing"}, 0}};
  EXPECT_THROW(build_test_sets(pool, {}, bad), Error);
}

TEST(Report, JsonRoundTripAndRocFiles) {
  testutil::TempDir dir("eval");
  Report rep{"run-abc", "0123", {}};
  std::vector<std::vector<DetectorVerdict>> per_row;
  for (const char* det : {"ocsvm", "lof"}) {
    auto vs = verdicts_for({3, 1, 4, 2});
    auto row = compute_metrics(vs);
    row.model = "transformer";
    row.detector = det;
    row.test_set = "desk";
    rep.rows.push_back(row);
    per_row.push_back(vs);
  }
  rep.rows[1].metrics.auroc.reset();
  emit_report(dir.path(), rep, per_row);
  EXPECT_EQ(read_report(dir / "report.json"), rep);
  EXPECT_TRUE(std::filesystem::exists(dir / "roc_transformer_lof_desk.csv"));
  const auto roc = io::read_file(dir / "roc_transformer_ocsvm_desk.csv");
  EXPECT_EQ(roc.rfind("fpr,tpr,threshold\n0,0,inf\n", 0), 0u);
  per_row.pop_back();
  EXPECT_THROW(emit_report(dir.path(), rep, per_row), Error);
}
