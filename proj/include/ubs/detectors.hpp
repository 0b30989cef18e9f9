#pragma once

// Novelty detectors over per-user error summaries. Each is fit on benign
// training points only, and every raw score is oriented so that higher means
// more anomalous.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ubs/common.hpp"
#include "ubs/score.hpp"

namespace ubs::detectors {

using Point = std::vector<double>;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail("ShapeMismatch", "points of different dimension");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

namespace detail {
inline void check_points(std::span<const Point> pts, std::size_t min_n, const char* who) {
  if (pts.size() < min_n) fail("InsufficientData", std::string(who) + " needs at least " + std::to_string(min_n) + " points");
  for (const auto& p : pts) {
    if (p.size() != pts[0].size() || p.empty()) fail("ShapeMismatch", std::string(who) + ": ragged or empty points");
    for (double v : p)
      if (!std::isfinite(v)) fail("NonFinite", std::string(who) + ": non-finite input");
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// One-class SVM, RBF kernel
//
// Dual: minimize 1/2 a^T K a  subject to 0 <= a_i <= 1/(nu n), sum a = 1.
// Solved by SMO on the maximal violating pair.

inline constexpr double kKktTolerance = 1e-6;

struct OcsvmModel {
  std::vector<Point> points;
  std::vector<double> alpha;
  double rho = 0.0;
  double gamma = 1.0;
  double nu = 0.1;
  bool degenerate = false;  // all training points identical
  std::size_t iterations = 0;

  double kernel(std::span<const double> a, std::span<const double> b) const {
    return std::exp(-gamma * squared_distance(a, b));
  }

  // rho - sum_i a_i K(x_i, x); positive outside the learned boundary.
  double score(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (alpha[i] != 0.0) s += alpha[i] * kernel(points[i], x);
    return rho - s;
  }

  double upper_bound() const { return 1.0 / (nu * static_cast<double>(points.size())); }

  // 1/2 a^T K a
  double dual_objective() const {
    double obj = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = 0; j < points.size(); ++j) obj += alpha[i] * alpha[j] * kernel(points[i], points[j]);
    return 0.5 * obj;
  }

  // Largest KKT violation m(a) - M(a) over the sum-constrained box.
  double kkt_violation() const {
    const double C = upper_bound();
    double up = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      double g = 0.0;
      for (std::size_t j = 0; j < points.size(); ++j) g += alpha[j] * kernel(points[i], points[j]);
      if (alpha[i] < C) up = std::max(up, -g);
      if (alpha[i] > 0.0) low = std::min(low, -g);
    }
    return std::max(0.0, up - low);
  }
};

// gamma = 1 / (d * var(all coordinates)); 1 when the variance is zero.
inline double scale_gamma(std::span<const Point> pts) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& p : pts)
    for (double v : p) {
      sum += v;
      sq += v * v;
      ++n;
    }
  if (n == 0) return 1.0;
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  const double d = static_cast<double>(pts[0].size());
  return var > 1e-300 ? 1.0 / (d * var) : 1.0;
}

inline OcsvmModel ocsvm_fit(std::span<const Point> train, double nu, std::optional<double> gamma = std::nullopt,
                            std::size_t max_iter = 1'000'000) {
  detail::check_points(train, 2, "ocsvm");
  if (!(nu > 0.0 && nu <= 1.0)) fail("ConfigError", "nu must be in (0,1]");
  OcsvmModel m;
  m.points.assign(train.begin(), train.end());
  m.nu = nu;
  m.gamma = gamma.value_or(scale_gamma(train));
  if (!(m.gamma > 0.0)) fail("ConfigError", "gamma must be positive");
  const std::size_t n = train.size();
  const double C = m.upper_bound();

  std::vector<double> K(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) K[i * n + j] = K[j * n + i] = m.kernel(train[i], train[j]);

  m.degenerate = std::all_of(train.begin(), train.end(), [&](const Point& p) { return p == train[0]; });

  // Feasible start: fill the first floor(nu n) at the bound, remainder next.
  m.alpha.assign(n, 0.0);
  double remaining = 1.0;
  for (std::size_t i = 0; i < n && remaining > 0.0; ++i) {
    m.alpha[i] = std::min(C, remaining);
    remaining -= m.alpha[i];
  }

  std::vector<double> G(n, 0.0);  // gradient K a
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) G[i] += K[i * n + j] * m.alpha[j];

  constexpr double kTau = 1e-12;
  for (; m.iterations < max_iter; ++m.iterations) {
    // i: can grow and has the smallest gradient; j: can shrink with the largest.
    std::size_t i = n, j = n;
    double gmin = std::numeric_limits<double>::infinity();
    double gmax = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (m.alpha[t] < C && G[t] < gmin) {
        gmin = G[t];
        i = t;
      }
      if (m.alpha[t] > 0.0 && G[t] > gmax) {
        gmax = G[t];
        j = t;
      }
    }
    if (i == n || j == n || gmax - gmin < kKktTolerance) break;
    const double quad = std::max(K[i * n + i] + K[j * n + j] - 2.0 * K[i * n + j], kTau);
    double delta = (gmax - gmin) / quad;
    delta = std::min({delta, C - m.alpha[i], m.alpha[j]});
    m.alpha[i] += delta;
    m.alpha[j] -= delta;
    if (C - m.alpha[i] < 1e-15) m.alpha[i] = C;
    if (m.alpha[j] < 1e-15) m.alpha[j] = 0.0;
    for (std::size_t t = 0; t < n; ++t) G[t] += delta * (K[t * n + i] - K[t * n + j]);
  }

  // rho: mean gradient over free multipliers, else the midpoint of the bounds.
  double free_sum = 0.0;
  std::size_t n_free = 0;
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    if (m.alpha[t] > 0.0 && m.alpha[t] < C) {
      free_sum += G[t];
      ++n_free;
    } else if (m.alpha[t] <= 0.0) {
      ub = std::min(ub, G[t]);
    } else {
      lb = std::max(lb, G[t]);
    }
  }
  if (n_free > 0) m.rho = free_sum / static_cast<double>(n_free);
  else if (std::isfinite(ub) && std::isfinite(lb)) m.rho = 0.5 * (ub + lb);
  else m.rho = std::isfinite(ub) ? ub : lb;
  return m;
}

inline double ocsvm_score(const OcsvmModel& m, std::span<const double> x) { return m.score(x); }

// ---------------------------------------------------------------------------
// Local outlier factor (novelty mode: queries look up training neighbors)

inline constexpr double kDistanceFloor = 1e-12;

struct LofModel {
  std::size_t k = 20;
  std::vector<Point> points;
  std::vector<double> k_distance;
  std::vector<double> lrd;

  // k nearest training points to x; `skip` excludes one training index.
  // Ties break by lower index.
  std::vector<std::pair<double, std::size_t>> neighbors(std::span<const double> x,
                                                        std::optional<std::size_t> skip = std::nullopt) const {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
      if (!skip || *skip != i) d.emplace_back(std::max(distance(points[i], x), kDistanceFloor), i);
    const auto kk = std::min(k, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
    d.resize(kk);
    return d;
  }

  double local_reachability_density(const std::vector<std::pair<double, std::size_t>>& nbrs) const {
    double reach = 0.0;
    for (const auto& [dist, o] : nbrs) reach += std::max(k_distance[o], dist);
    return static_cast<double>(nbrs.size()) / reach;
  }

  double score(std::span<const double> x) const {
    const auto nbrs = neighbors(x);
    const double lrd_x = local_reachability_density(nbrs);
    double ratio = 0.0;
    for (const auto& [_, o] : nbrs) ratio += lrd[o];
    return ratio / (static_cast<double>(nbrs.size()) * lrd_x);
  }
};

inline LofModel lof_fit(std::span<const Point> train, std::size_t k) {
  detail::check_points(train, 2, "lof");
  if (k < 1 || k >= train.size()) fail("ConfigError", "lof needs 1 <= k < n");
  LofModel m;
  m.k = k;
  m.points.assign(train.begin(), train.end());
  const std::size_t n = train.size();
  std::vector<std::vector<std::pair<double, std::size_t>>> nbrs(n);
  m.k_distance.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    nbrs[i] = m.neighbors(train[i], i);
    m.k_distance[i] = nbrs[i].back().first;
  }
  m.lrd.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.lrd[i] = m.local_reachability_density(nbrs[i]);
  return m;
}

inline double lof_score(const LofModel& m, std::span<const double> x) { return m.score(x); }

// ---------------------------------------------------------------------------
// Isolation forest

inline constexpr double kEulerGamma = 0.5772156649;

// Average unsuccessful-search path length in a BST of m points.
inline double average_path_length(std::size_t m) {
  if (m <= 1) return 0.0;
  if (m == 2) return 1.0;
  const double mm = static_cast<double>(m);
  return 2.0 * (std::log(mm - 1.0) + kEulerGamma) - 2.0 * (mm - 1.0) / mm;
}

// s = 2^(-E[h] / c(psi))
inline double anomaly_score(double mean_path, std::size_t psi) {
  return std::pow(2.0, -mean_path / average_path_length(psi));
}

struct IsolationTree {
  struct Node {
    int feature = -1;  // -1 marks an external node
    double split = 0.0;
    std::size_t size = 0;
    int left = -1;
    int right = -1;
  };
  std::vector<Node> nodes;

  double path_length(std::span<const double> x) const {
    int cur = 0;
    double depth = 0.0;
    while (nodes[static_cast<std::size_t>(cur)].feature >= 0) {
      const Node& nd = nodes[static_cast<std::size_t>(cur)];
      cur = x[static_cast<std::size_t>(nd.feature)] < nd.split ? nd.left : nd.right;
      depth += 1.0;
    }
    return depth + average_path_length(nodes[static_cast<std::size_t>(cur)].size);
  }

  int height(int node = 0) const {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    if (nd.feature < 0) return 0;
    return 1 + std::max(height(nd.left), height(nd.right));
  }
};

struct IforestModel {
  std::size_t n_trees = 100;
  std::size_t psi = 256;
  std::uint64_t seed = 0;
  std::vector<IsolationTree> trees;

  double mean_path_length(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.path_length(x);
    return s / static_cast<double>(trees.size());
  }

  double score(std::span<const double> x) const { return anomaly_score(mean_path_length(x), psi); }
};

namespace detail {
inline int grow(IsolationTree& tree, std::span<const Point> pts, std::vector<std::size_t> idx, int depth,
                int limit, Rng& rng) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes.back().size = idx.size();
  if (depth >= limit || idx.size() <= 1) return id;
  // Pick among features that still vary; a constant subsample is a leaf.
  const std::size_t dim = pts[0].size();
  std::vector<std::size_t> varying;
  std::vector<std::pair<double, double>> range(dim);
  for (std::size_t f = 0; f < dim; ++f) {
    double lo = pts[idx[0]][f], hi = lo;
    for (std::size_t i : idx) {
      lo = std::min(lo, pts[i][f]);
      hi = std::max(hi, pts[i][f]);
    }
    range[f] = {lo, hi};
    if (hi > lo) varying.push_back(f);
  }
  if (varying.empty()) return id;
  const std::size_t f = varying[uniform_index(rng, varying.size())];
  const auto [lo, hi] = range[f];
  double split = uniform(rng, lo, hi);
  if (split <= lo) split = std::nextafter(lo, hi);
  std::vector<std::size_t> left, right;
  for (std::size_t i : idx) (pts[i][f] < split ? left : right).push_back(i);
  const int l = grow(tree, pts, std::move(left), depth + 1, limit, rng);
  const int r = grow(tree, pts, std::move(right), depth + 1, limit, rng);
  auto& nd = tree.nodes[static_cast<std::size_t>(id)];
  nd.feature = static_cast<int>(f);
  nd.split = split;
  nd.left = l;
  nd.right = r;
  return id;
}
}  // namespace detail

// psi = 0 selects min(256, n). Each tree draws its subsample (without
// replacement) and splits from its own seed derived from `seed`.
inline IforestModel iforest_fit(std::span<const Point> train, std::size_t n_trees = 100, std::size_t psi = 0,
                                std::uint64_t seed = 0) {
  detail::check_points(train, 2, "iforest");
  if (n_trees == 0) fail("ConfigError", "iforest needs at least one tree");
  IforestModel m;
  m.n_trees = n_trees;
  m.psi = psi == 0 ? std::min<std::size_t>(256, train.size()) : std::min(psi, train.size());
  if (m.psi < 2) fail("ConfigError", "iforest subsample must be >= 2");
  m.seed = seed;
  const int limit = static_cast<int>(std::ceil(std::log2(static_cast<double>(m.psi))));
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  m.trees.resize(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t) {
    Rng rng(derive_seed(seed, t));
    std::vector<std::size_t> sample = all;
    // Partial Fisher-Yates: first psi entries are the subsample.
    for (std::size_t i = 0; i < m.psi; ++i) std::swap(sample[i], sample[i + uniform_index(rng, sample.size() - i)]);
    sample.resize(m.psi);
    detail::grow(m.trees[t], train, std::move(sample), 0, limit, rng);
  }
  return m;
}

inline double iforest_score(const IforestModel& m, std::span<const double> x) { return m.score(x); }

// ---------------------------------------------------------------------------
// detect(): fit on benign training scores, verdict per test user.

enum class Method { Ocsvm, Lof, Iforest };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Ocsvm: return "ocsvm";
    case Method::Lof: return "lof";
    default: return "iforest";
  }
}

inline Method parse_method(std::string_view s) {
  if (s == "ocsvm") return Method::Ocsvm;
  if (s == "lof") return Method::Lof;
  if (s == "iforest") return Method::Iforest;
  fail("UnknownMethod", "unknown detection method '" + std::string(s) + "'");
}

inline constexpr Method kAllMethods[] = {Method::Ocsvm, Method::Lof, Method::Iforest};

struct DetectorParams {
  double nu = 0.1;
  std::optional<double> gamma;  // unset: scale heuristic
  std::size_t lof_k = 20;       // capped at n - 1
  std::size_t n_trees = 100;
  std::size_t psi = 0;          // 0: min(256, n)
  std::uint64_t seed = 0;
  double ocsvm_threshold = 0.0;
  double lof_threshold = 1.5;
  double iforest_threshold = 0.55;
  ScoreFeatures features = ScoreFeatures::Summary;

  double threshold(Method m) const {
    switch (m) {
      case Method::Ocsvm: return ocsvm_threshold;
      case Method::Lof: return lof_threshold;
      default: return iforest_threshold;
    }
  }
};

struct DetectorVerdict {
  std::string user;
  double raw_score = 0.0;
  Label predicted = Label::Benign;
  Label label = Label::Unknown;
};

// Any fitted detector as a scoring function.
class Detector {
 public:
  Detector(Method m, std::span<const Point> train, const DetectorParams& p) : method_(m) {
    switch (m) {
      case Method::Ocsvm: ocsvm_ = ocsvm_fit(train, p.nu, p.gamma); break;
      case Method::Lof: lof_ = lof_fit(train, std::min(p.lof_k, train.size() - 1)); break;
      case Method::Iforest: iforest_ = iforest_fit(train, p.n_trees, p.psi, p.seed); break;
    }
  }

  double score(std::span<const double> x) const {
    switch (method_) {
      case Method::Ocsvm: return ocsvm_->score(x);
      case Method::Lof: return lof_->score(x);
      default: return iforest_->score(x);
    }
  }

  Method method() const { return method_; }

 private:
  Method method_;
  std::optional<OcsvmModel> ocsvm_;
  std::optional<LofModel> lof_;
  std::optional<IforestModel> iforest_;
};

inline std::vector<DetectorVerdict> detect(std::span<const UserScore> train, std::span<const UserScore> test,
                                           Method method, const DetectorParams& params) {
  std::vector<Point> pts;
  for (const auto& s : train) {
    if (s.label != Label::Benign) fail("ConfigError", "detector training user " + s.user + " is not benign");
    pts.push_back(detector_features(s, params.features));
  }
  std::vector<DetectorVerdict> out;
  if (test.empty()) return out;
  const Detector det(method, pts, params);
  const double thr = params.threshold(method);
  for (const auto& s : test) {
    DetectorVerdict v;
    v.user = s.user;
    v.label = s.label;
    v.raw_score = det.score(detector_features(s, params.features));
    v.predicted = v.raw_score > thr ? Label::Malicious : Label::Benign;
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<DetectorVerdict> detect(std::span<const UserScore> train, std::span<const UserScore> test,
                                           std::string_view method, const DetectorParams& params) {
  return detect(train, test, parse_method(method), params);
}

// CSV: user,method,raw_score,predicted,label
inline void write_verdicts(std::ostream& out, std::span<const DetectorVerdict> verdicts, Method m) {
  out << "user,method,raw_score,predicted,label\n";
  char buf[64];
  for (const auto& v : verdicts) {
    std::snprintf(buf, sizeof buf, "%.17g", v.raw_score);
    out << io::csv_quote(v.user) << ',' << to_string(m) << ',' << buf << ',' << ubs::to_string(v.predicted) << ','
        << ubs::to_string(v.label) << '\n';
  }
}

inline void write_verdicts(const std::filesystem::path& path, std::span<const DetectorVerdict> verdicts, Method m) {
  auto out = io::open_out(path);
  write_verdicts(out, verdicts, m);
}

inline std::vector<DetectorVerdict> read_verdicts(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("user,method,raw_score,predicted,label", 0) != 0)
    fail("UnknownSchema", "not a verdicts CSV");
  std::vector<DetectorVerdict> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() != 5) fail("MalformedRow", "verdicts row: " + line);
    DetectorVerdict v;
    v.user = f[0];
    try {
      v.raw_score = std::stod(f[2]);
    } catch (const std::exception&) {
      fail("MalformedRow", "verdicts row: " + line);
    }
    v.predicted = parse_label(f[3]);
    v.label = parse_label(f[4]);
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<DetectorVerdict> read_verdicts(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  return read_verdicts(in);
}

}  // namespace ubs::detectors
