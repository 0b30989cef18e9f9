#pragma once

// Per-user reconstruction-error summaries shared by every model.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ubs/common.hpp"
#include "ubs/io.hpp"

namespace ubs {

inline constexpr std::size_t kSummaryWidth = 4;
using Summary = std::array<double, kSummaryWidth>;  // mean, max, p95, std

struct UserScore {
  std::string user;
  Label label = Label::Unknown;
  std::vector<double> session_errors;
  Summary summary{};

  std::size_t n_sessions() const { return session_errors.size(); }
};

// Linear interpolation between closest ranks (numpy's default).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) fail("EmptyInput", "percentile of nothing");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline Summary summarize(std::span<const double> errors) {
  if (errors.empty()) fail("UserWithNoSessions", "cannot summarize zero sessions");
  double mean = 0.0, mx = errors[0];
  for (double e : errors) {
    mean += e;
    mx = std::max(mx, e);
  }
  mean /= static_cast<double>(errors.size());
  double var = 0.0;
  for (double e : errors) var += (e - mean) * (e - mean);
  var /= static_cast<double>(errors.size());
  const double p95 = percentile(std::vector<double>(errors.begin(), errors.end()), 0.95);
  return {mean, mx, p95, std::sqrt(var)};
}

// Detector input for one user: the full summary or the mean alone.
enum class ScoreFeatures { Summary, Mean };

inline std::vector<double> detector_features(const UserScore& s, ScoreFeatures mode) {
  if (mode == ScoreFeatures::Mean) return {s.summary[0]};
  return {s.summary.begin(), s.summary.end()};
}

// CSV: user,label,mean,max,p95,std,n_sessions. Values use 17 significant
// digits so a read gives back the same doubles.
inline void write_scores(std::ostream& out, std::span<const UserScore> scores) {
  out << "user,label,mean,max,p95,std,n_sessions\n";
  char buf[64];
  for (const auto& s : scores) {
    out << io::csv_quote(s.user) << ',' << to_string(s.label);
    for (double v : s.summary) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << ',' << s.n_sessions() << '\n';
  }
}

inline void write_scores(const std::filesystem::path& path, std::span<const UserScore> scores) {
  auto out = io::open_out(path);
  write_scores(out, scores);
}

// Per-session errors are not stored; session_errors is resized to n_sessions
// and left zero.
inline std::vector<UserScore> read_scores(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("user,label,mean,max,p95,std,n_sessions", 0) != 0)
    fail("UnknownSchema", "not a scores CSV");
  std::vector<UserScore> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() != 7) fail("MalformedRow", "scores row: " + line);
    UserScore s;
    s.user = f[0];
    s.label = parse_label(f[1]);
    try {
      for (std::size_t k = 0; k < kSummaryWidth; ++k) s.summary[k] = std::stod(f[2 + k]);
      s.session_errors.assign(std::stoul(f[6]), 0.0);
    } catch (const std::exception&) {
      fail("MalformedRow", "scores row: " + line);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<UserScore> read_scores(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  return read_scores(in);
}

}  // namespace ubs
