#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ubs {

// Every failure carries a short machine-readable code ("BadMagic",
// "ShapeMismatch", ...) next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& what) {
  throw Error(std::move(code), what);
}

enum class Label : std::uint8_t { Benign = 0, Malicious = 1, Unknown = 2 };

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::Benign: return "benign";
    case Label::Malicious: return "malicious";
    default: return "unknown";
  }
}

inline Label parse_label(std::string_view s) {
  if (s == "benign" || s == "0") return Label::Benign;
  if (s == "malicious" || s == "1") return Label::Malicious;
  if (s == "unknown" || s == "2" || s.empty()) return Label::Unknown;
  fail("BadLabel", "unrecognized label '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Logging, gated by UBS_LOG in {error, info, debug}. Default is info.

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("UBS_LOG");
    if (env == nullptr) return LogLevel::Info;
    std::string_view v(env);
    if (v == "error") return LogLevel::Error;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

inline void log(LogLevel lvl, std::string_view msg) {
  if (lvl > log_level()) return;
  static constexpr const char* tags[] = {"error", "info", "debug"};
  std::cerr << "[ubs:" << tags[static_cast<int>(lvl)] << "] " << msg << '\n';
}

inline void log_info(std::string_view msg) { log(LogLevel::Info, msg); }
inline void log_debug(std::string_view msg) { log(LogLevel::Debug, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::Info, std::string("warning: ") + std::string(msg)); }

// ---------------------------------------------------------------------------
// Randomness. The engine is std::mt19937_64; the conversions below are
// written out so generated data does not depend on the standard library's
// distribution implementations.

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for an independent sub-stream (per tree, per stage, ...).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

inline double normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Knuth's multiplication method; rates here are small.
inline int poisson(Rng& rng, double lambda) {
  if (lambda <= 0.0) return 0;
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = uniform01(rng);
  while (p > limit) {
    ++k;
    p *= uniform01(rng);
  }
  return k;
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

// FNV-1a, used for config and report fingerprints (not for security).
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace ubs
