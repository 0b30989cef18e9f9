#pragma once

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ubs/common.hpp"

namespace ubs::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order; big-endian hosts are unsupported");

// ---------------------------------------------------------------------------
// Little-endian binary primitives.

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_bytes(std::ostream& out, std::string_view bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get() {
    T v{};
    read_raw(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
  }

  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("TruncatedFile", "unexpected end of file");
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
};

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) fail("MissingInput", "cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) fail("IoError", "cannot write " + p.string());
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  auto in = open_in(p, true);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV: comma separated, double-quote quoting with "" escapes, one record per
// line (embedded newlines are not supported).

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_quote(std::string_view field) {
  if (field.find_first_of(",\"") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

// ---------------------------------------------------------------------------
// Time at minute resolution.

using Timestamp = std::chrono::sys_time<std::chrono::minutes>;
using Date = std::chrono::sys_days;

inline Timestamp make_time(int y, unsigned mo, unsigned d, int h = 0, int mi = 0) {
  using namespace std::chrono;
  return Timestamp(sys_days(year{y} / month{mo} / day{d})) + hours{h} + minutes{mi};
}

inline Date date_of(Timestamp t) { return std::chrono::floor<std::chrono::days>(t); }

inline int hour_of(Timestamp t) {
  return static_cast<int>((t - date_of(t)).count() / 60);
}

inline bool is_weekend(Timestamp t) {
  const std::chrono::weekday wd{date_of(t)};
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

namespace detail {
inline std::optional<int> parse_uint(std::string_view s) {
  if (s.empty() || s.size() > 4) return std::nullopt;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}
}  // namespace detail

// "MM/DD/YYYY HH:MM:SS" (seconds optional, discarded).
inline std::optional<Timestamp> parse_cert_time(std::string_view s) {
  using detail::parse_uint;
  const auto sp = s.find(' ');
  if (sp == std::string_view::npos) return std::nullopt;
  const auto date = s.substr(0, sp);
  const auto clock = s.substr(sp + 1);
  const auto s1 = date.find('/');
  const auto s2 = date.find('/', s1 == std::string_view::npos ? 0 : s1 + 1);
  if (s1 == std::string_view::npos || s2 == std::string_view::npos) return std::nullopt;
  const auto mo = parse_uint(date.substr(0, s1));
  const auto d = parse_uint(date.substr(s1 + 1, s2 - s1 - 1));
  const auto y = parse_uint(date.substr(s2 + 1));
  const auto c1 = clock.find(':');
  if (c1 == std::string_view::npos) return std::nullopt;
  const auto c2 = clock.find(':', c1 + 1);
  const auto h = parse_uint(clock.substr(0, c1));
  const auto mi = parse_uint(clock.substr(c1 + 1, c2 == std::string_view::npos ? std::string_view::npos : c2 - c1 - 1));
  std::optional<int> sec = 0;
  if (c2 != std::string_view::npos) sec = parse_uint(clock.substr(c2 + 1));
  if (!mo || !d || !y || !h || !mi || !sec) return std::nullopt;
  if (*h > 23 || *mi > 59 || *sec > 59) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return make_time(*y, static_cast<unsigned>(*mo), static_cast<unsigned>(*d), *h, *mi);
}

inline std::string format_cert_time(Timestamp t) {
  using namespace std::chrono;
  const year_month_day ymd{date_of(t)};
  const int mins = static_cast<int>((t - date_of(t)).count());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02u/%02u/%04d %02d:%02d:00", static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(ymd.year()), mins / 60, mins % 60);
  return buf;
}

// ISO form used in sessions files: "YYYY-MM-DDTHH:MM".
inline std::string format_iso(Timestamp t) {
  using namespace std::chrono;
  const year_month_day ymd{date_of(t)};
  const int mins = static_cast<int>((t - date_of(t)).count());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), mins / 60, mins % 60);
  return buf;
}

inline std::optional<Timestamp> parse_iso(std::string_view s) {
  using detail::parse_uint;
  if (s.size() != 16 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':') return std::nullopt;
  const auto y = parse_uint(s.substr(0, 4));
  const auto mo = parse_uint(s.substr(5, 2));
  const auto d = parse_uint(s.substr(8, 2));
  const auto h = parse_uint(s.substr(11, 2));
  const auto mi = parse_uint(s.substr(14, 2));
  if (!y || !mo || !d || !h || !mi || *h > 23 || *mi > 59) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return make_time(*y, static_cast<unsigned>(*mo), static_cast<unsigned>(*d), *h, *mi);
}

// "YYYY-MM-DD" used for config window origins.
inline Date parse_date(std::string_view s) {
  auto t = parse_iso(std::string(s) + "T00:00");
  if (!t) fail("ConfigError", "bad date '" + std::string(s) + "' (want YYYY-MM-DD)");
  return date_of(*t);
}

}  // namespace ubs::io
