#pragma once

// CERT-style activity logs -> per-user sessions -> 35-slot feature vectors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/io.hpp"

namespace ubs::ingest {

using io::Date;
using io::Timestamp;

inline constexpr std::size_t kFeatureCount = 35;
inline constexpr int kDefaultSessionsPerDay = 9;

using FeatureVector = std::array<double, kFeatureCount>;

enum class EventKind { Logon, Logoff, DeviceConnect, DeviceDisconnect, FileCopy, Http, Email };

struct RawEvent {
  EventKind kind{};
  Timestamp timestamp{};
  std::string user;
  std::string pc;
  // url, filename, to, cc, bcc, from, size, attachments
  std::map<std::string, std::string> payload;

  friend bool operator==(const RawEvent&, const RawEvent&) = default;
};

// Observation window [origin, origin + days).
struct Window {
  Date origin{};
  int days = 501;

  bool contains(Timestamp t) const {
    const auto d = io::date_of(t);
    return d >= origin && d < origin + std::chrono::days{days};
  }
  int day_index(Timestamp t) const { return static_cast<int>((io::date_of(t) - origin).count()); }
};

// ---------------------------------------------------------------------------
// Feature schema (version 1). Order is part of the on-disk format.

enum class ValueKind { Count, Flag, Normalized, LogScaled };

struct FeatureSpec {
  std::string_view name;
  std::string_view rule;
  ValueKind kind;
};

inline constexpr int kFeatureSchemaVersion = 1;

namespace feat {
enum : std::size_t {
  StartHour, EndHour, LogDuration, IsWeekend, IsAfterhoursStart, DistinctPcs, IsNonprimaryPc,
  LogonCount, LogoffCount, OrphanLogon, DeviceConnect, DeviceDisconnect, DeviceAfterhoursConnect,
  FileCopy, FileExe, FileDoc, FilePdf, FileZip, FileAfterhours, HttpCount, HttpDistinctDomains,
  HttpJobsite, HttpLeaksite, HttpHacktool, HttpAfterhours, EmailSent, EmailExternalRecipients,
  EmailInternalRecipients, EmailWithAttachment, LogEmailBytes, EmailDistinctRecipients,
  EmailAfterhours, TotalEvents, SessionIndexFrac, LogMinutesSincePrevious
};
}  // namespace feat

inline constexpr std::array<FeatureSpec, kFeatureCount> kFeatureSchema{{
    {"start_hour", "hour(start)/23", ValueKind::Normalized},
    {"end_hour", "hour(end)/23", ValueKind::Normalized},
    {"log_duration_minutes", "log1p(end-start in minutes)", ValueKind::LogScaled},
    {"is_weekend", "start on Saturday or Sunday", ValueKind::Flag},
    {"is_afterhours_start", "start outside 08:00-17:59 or on a weekend", ValueKind::Flag},
    {"n_distinct_pcs", "distinct pcs among session events", ValueKind::Count},
    {"is_nonprimary_pc", "any event on a pc other than the user's primary", ValueKind::Flag},
    {"logon_count", "Logon events", ValueKind::Count},
    {"logoff_count", "Logoff events", ValueKind::Count},
    {"orphan_logon_flag", "session opened by a Logon never matched by a Logoff", ValueKind::Flag},
    {"device_connect_count", "device Connect events", ValueKind::Count},
    {"device_disconnect_count", "device Disconnect events", ValueKind::Count},
    {"device_afterhours_connect_count", "device Connect events after hours", ValueKind::Count},
    {"file_copy_count", "file events", ValueKind::Count},
    {"file_exe_count", "file events with .exe names", ValueKind::Count},
    {"file_doc_count", "file events with .doc/.docx names", ValueKind::Count},
    {"file_pdf_count", "file events with .pdf names", ValueKind::Count},
    {"file_zip_count", "file events with .zip names", ValueKind::Count},
    {"file_afterhours_count", "file events after hours", ValueKind::Count},
    {"http_count", "http events", ValueKind::Count},
    {"http_distinct_domains", "distinct url hosts", ValueKind::Count},
    {"http_jobsite_count", "urls matching jobsite keywords", ValueKind::Count},
    {"http_leaksite_count", "urls matching leaksite keywords", ValueKind::Count},
    {"http_hacktool_count", "urls matching hacktool keywords", ValueKind::Count},
    {"http_afterhours_count", "http events after hours", ValueKind::Count},
    {"email_sent_count", "email events", ValueKind::Count},
    {"email_external_recipient_count", "recipients outside the internal domain", ValueKind::Count},
    {"email_internal_recipient_count", "recipients inside the internal domain", ValueKind::Count},
    {"email_with_attachment_count", "emails with attachments > 0", ValueKind::Count},
    {"log_email_total_bytes", "log1p(sum of email sizes)", ValueKind::LogScaled},
    {"email_distinct_recipients", "distinct recipient addresses", ValueKind::Count},
    {"email_afterhours_count", "email events after hours", ValueKind::Count},
    {"total_event_count", "all events", ValueKind::Count},
    {"session_index_frac", "session_index/(S-1)", ValueKind::Normalized},
    {"log_minutes_since_previous", "log1p(minutes since previous session end)", ValueKind::LogScaled},
}};

// Outside 08:00-17:59, or any time on a weekend.
inline bool is_afterhours(Timestamp t) {
  const int h = io::hour_of(t);
  return h < 8 || h >= 18 || io::is_weekend(t);
}

struct UrlKeywords {
  std::vector<std::string> jobsite{"jobsearch", "careerbuilder", "monster.com", "indeed", "jobhunt", "simplyhired"};
  std::vector<std::string> leaksite{"wikileaks", "leak", "pastebin", "anonfiles"};
  std::vector<std::string> hacktool{"keylog", "hack", "exploit", "spyware", "rootkit", "passwordcrack"};

  static UrlKeywords from_json(const nlohmann::json& j) {
    UrlKeywords k;
    for (const auto& [key, value] : j.items()) {
      if (key == "jobsite") k.jobsite = value.get<std::vector<std::string>>();
      else if (key == "leaksite") k.leaksite = value.get<std::vector<std::string>>();
      else if (key == "hacktool") k.hacktool = value.get<std::vector<std::string>>();
      else fail("ConfigError", "unknown url keyword category '" + key + "'");
    }
    return k;
  }
};

struct FeatureConfig {
  int sessions_per_day = kDefaultSessionsPerDay;
  std::string internal_domain = "dtaa.com";
  UrlKeywords keywords;
};

// ---------------------------------------------------------------------------
// Parsing

enum class LogType { Logon, Device, File, Http, Email };

namespace detail {
inline const std::vector<std::pair<LogType, std::vector<std::string>>>& known_headers() {
  static const std::vector<std::pair<LogType, std::vector<std::string>>> h{
      {LogType::Logon, {"id", "date", "user", "pc", "activity"}},
      {LogType::Device, {"id", "date", "user", "pc", "activity"}},
      {LogType::File, {"id", "date", "user", "pc", "filename", "content"}},
      {LogType::Http, {"id", "date", "user", "pc", "url"}},
      {LogType::Http, {"id", "date", "user", "pc", "url", "content"}},
      {LogType::Email, {"id", "date", "user", "pc", "to", "cc", "bcc", "from", "size", "attachments", "content"}},
  };
  return h;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string strip_domain(std::string_view user) {
  const auto slash = user.rfind('/');
  return std::string(slash == std::string_view::npos ? user : user.substr(slash + 1));
}
}  // namespace detail

// Logon and device share a header; the file name disambiguates.
inline LogType detect_schema(const std::vector<std::string>& header, std::string_view file_hint = {}) {
  std::vector<std::string> norm;
  for (const auto& h : header) norm.push_back(detail::lower(h));
  std::vector<LogType> matches;
  for (const auto& [type, cols] : detail::known_headers())
    if (cols == norm) matches.push_back(type);
  if (matches.empty()) fail("UnknownSchema", "header matches no known log type: " + std::string(file_hint));
  if (matches.front() == LogType::Logon) {
    const auto hint = detail::lower(file_hint);
    if (hint.find("device") != std::string::npos) return LogType::Device;
    if (hint.find("logon") != std::string::npos) return LogType::Logon;
    fail("UnknownSchema", "cannot tell logon from device log for " + std::string(file_hint));
  }
  return matches.front();
}

struct ParseStats {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::size_t out_of_window = 0;

  ParseStats& operator+=(const ParseStats& o) {
    rows += o.rows;
    malformed += o.malformed;
    out_of_window += o.out_of_window;
    return *this;
  }
};

struct ParseResult {
  std::vector<RawEvent> events;
  ParseStats stats;
};

// Parses a single row against its log type. Returns nullopt for malformed rows.
inline std::optional<RawEvent> parse_row(LogType type, const std::vector<std::string>& f) {
  const std::size_t expected = [&] {
    switch (type) {
      case LogType::Logon:
      case LogType::Device: return std::size_t{5};
      case LogType::File: return std::size_t{6};
      case LogType::Http: return std::size_t{5};
      case LogType::Email: return std::size_t{11};
    }
    return std::size_t{0};
  }();
  if (f.size() < expected) return std::nullopt;
  auto ts = io::parse_cert_time(f[1]);
  if (!ts) return std::nullopt;
  RawEvent ev;
  ev.timestamp = *ts;
  ev.user = detail::strip_domain(f[2]);
  ev.pc = f[3];
  if (ev.user.empty() || ev.pc.empty()) return std::nullopt;
  switch (type) {
    case LogType::Logon:
      if (f[4] == "Logon") ev.kind = EventKind::Logon;
      else if (f[4] == "Logoff") ev.kind = EventKind::Logoff;
      else return std::nullopt;
      break;
    case LogType::Device:
      if (f[4] == "Connect") ev.kind = EventKind::DeviceConnect;
      else if (f[4] == "Disconnect") ev.kind = EventKind::DeviceDisconnect;
      else return std::nullopt;
      break;
    case LogType::File:
      ev.kind = EventKind::FileCopy;
      ev.payload["filename"] = f[4];
      break;
    case LogType::Http:
      ev.kind = EventKind::Http;
      ev.payload["url"] = f[4];
      break;
    case LogType::Email:
      ev.kind = EventKind::Email;
      ev.payload["to"] = f[4];
      ev.payload["cc"] = f[5];
      ev.payload["bcc"] = f[6];
      ev.payload["from"] = f[7];
      ev.payload["size"] = f[8];
      ev.payload["attachments"] = f[9];
      break;
  }
  return ev;
}

// Parses one CSV stream. Events are appended unsorted.
inline ParseStats parse_stream(std::istream& in, std::string_view name, const Window& window,
                               std::vector<RawEvent>& out) {
  ParseStats stats;
  std::string line;
  if (!std::getline(in, line)) fail("UnknownSchema", "missing header in " + std::string(name));
  const LogType type = detect_schema(io::split_csv(line), name);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++stats.rows;
    auto ev = parse_row(type, io::split_csv(line));
    if (!ev) {
      ++stats.malformed;
      log_debug("malformed row in " + std::string(name) + ": " + line);
      continue;
    }
    if (!window.contains(ev->timestamp)) {
      ++stats.out_of_window;
      continue;
    }
    out.push_back(std::move(*ev));
  }
  return stats;
}

namespace detail {
inline void sort_events(std::vector<RawEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
    return std::tie(a.user, a.timestamp) < std::tie(b.user, b.timestamp);
  });
}
}  // namespace detail

// Reads every file, drops out-of-window rows, and returns events ordered by
// (user, timestamp); equal timestamps keep file-then-row order, so the result
// depends only on the file list order. Fails with MalformedInput when more
// than max_malformed_fraction of rows are malformed.
inline ParseResult parse_logs(std::span<const std::filesystem::path> paths, const Window& window,
                              double max_malformed_fraction = 0.01) {
  ParseResult result;
  for (const auto& p : paths) {
    auto in = io::open_in(p);
    result.stats += parse_stream(in, p.filename().string(), window, result.events);
  }
  if (result.stats.malformed > 0)
    log_warn(std::to_string(result.stats.malformed) + " malformed rows skipped");
  if (result.stats.rows > 0 &&
      static_cast<double>(result.stats.malformed) > max_malformed_fraction * static_cast<double>(result.stats.rows))
    fail("MalformedInput", std::to_string(result.stats.malformed) + " of " + std::to_string(result.stats.rows) +
                               " rows malformed (limit " + std::to_string(max_malformed_fraction * 100.0) + "%)");
  detail::sort_events(result.events);
  return result;
}

// The five standard files under a directory, in a fixed order; missing ones
// are skipped.
inline std::vector<std::filesystem::path> standard_log_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const char* name : {"logon.csv", "device.csv", "file.csv", "http.csv", "email.csv"})
    if (std::filesystem::exists(dir / name)) out.push_back(dir / name);
  if (out.empty()) fail("MissingInput", "no log files under " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// Sessionization

struct Session {
  std::string user;
  Timestamp start{};
  Timestamp end{};
  std::vector<RawEvent> events;
  bool orphan_logon = false;
  int day_index = 0;
  int session_index = 0;
};

namespace detail {
struct OpenSession {
  Session session;
  bool from_logon = false;
  std::size_t seq = 0;
};

struct Piece {
  Session session;
  std::string pc;
  std::size_t seq = 0;
};

// Cuts a closed session at midnights. Pieces without events are dropped;
// the orphan flag stays with the piece holding the opening Logon.
inline void split_at_midnight(Session s, const std::string& pc, std::size_t seq, std::vector<Piece>& out) {
  const Date first = io::date_of(s.start);
  const Date last = io::date_of(s.end);
  if (first == last) {
    out.push_back({std::move(s), pc, seq});
    return;
  }
  bool first_piece = true;
  for (Date d = first; d <= last; d += std::chrono::days{1}) {
    Session piece;
    piece.user = s.user;
    piece.start = std::max(s.start, Timestamp(d));
    piece.end = std::min(s.end, Timestamp(d) + std::chrono::minutes{24 * 60 - 1});
    for (const auto& e : s.events)
      if (io::date_of(e.timestamp) == d) piece.events.push_back(e);
    if (piece.events.empty()) continue;
    piece.orphan_logon = first_piece && s.orphan_logon;
    first_piece = false;
    out.push_back({std::move(piece), pc, seq});
  }
}
}  // namespace detail

// Groups one user's time-ordered events into sessions.
//
// A Logon opens a session on its pc; the matching Logoff on that pc closes
// it. A second Logon on a pc with an open session closes the old one one
// minute earlier and flags it as an orphan logon. A Logoff with nothing open
// becomes a zero-length session. Other events join the open session on their
// pc, or open an implicit session there if none is open. Sessions still open
// at the end are closed at their last event.
//
// Sessions are then split at midnight, ordered per day by start, and any
// beyond sessions_per_day - 1 are merged into the last slot.
inline std::vector<Session> sessionize_user(std::span<const RawEvent> events, const Window& window,
                                            int sessions_per_day) {
  using detail::OpenSession;
  using detail::Piece;
  std::map<std::string, OpenSession> open;
  std::vector<Piece> pieces;
  std::size_t seq = 0;

  auto close = [&](const std::string& pc, OpenSession&& os, Timestamp end) {
    os.session.end = std::max(end, os.session.start);
    detail::split_at_midnight(std::move(os.session), pc, os.seq, pieces);
  };

  for (const auto& ev : events) {
    auto it = open.find(ev.pc);
    if (ev.kind == EventKind::Logon) {
      if (it != open.end()) {
        it->second.session.orphan_logon = it->second.from_logon;
        close(ev.pc, std::move(it->second), ev.timestamp - std::chrono::minutes{1});
        open.erase(it);
      }
      OpenSession os;
      os.session.user = ev.user;
      os.session.start = ev.timestamp;
      os.session.events.push_back(ev);
      os.from_logon = true;
      os.seq = seq++;
      open.emplace(ev.pc, std::move(os));
    } else if (ev.kind == EventKind::Logoff) {
      if (it != open.end()) {
        it->second.session.events.push_back(ev);
        close(ev.pc, std::move(it->second), ev.timestamp);
        open.erase(it);
      } else {
        OpenSession os;
        os.session.user = ev.user;
        os.session.start = ev.timestamp;
        os.session.events.push_back(ev);
        os.seq = seq++;
        close(ev.pc, std::move(os), ev.timestamp);
      }
    } else {
      if (it == open.end()) {
        OpenSession os;
        os.session.user = ev.user;
        os.session.start = ev.timestamp;
        os.seq = seq++;
        it = open.emplace(ev.pc, std::move(os)).first;
      }
      it->second.session.events.push_back(ev);
    }
  }
  // Close leftovers in opening order.
  std::vector<std::pair<std::string, OpenSession>> rest(std::make_move_iterator(open.begin()),
                                                        std::make_move_iterator(open.end()));
  std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.second.seq < b.second.seq; });
  for (auto& [pc, os] : rest) {
    os.session.orphan_logon = os.from_logon;
    const Timestamp last = os.session.events.back().timestamp;
    close(pc, std::move(os), last);
  }

  std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) {
    return std::tie(a.session.start, a.pc, a.seq) < std::tie(b.session.start, b.pc, b.seq);
  });

  std::vector<Session> out;
  const int cap = std::max(1, sessions_per_day);
  int current_day = -1;
  int index = 0;
  for (auto& p : pieces) {
    Session s = std::move(p.session);
    s.day_index = window.day_index(s.start);
    if (s.day_index != current_day) {
      current_day = s.day_index;
      index = 0;
    }
    if (index >= cap) {
      Session& last = out.back();
      last.end = std::max(last.end, s.end);
      last.orphan_logon = last.orphan_logon || s.orphan_logon;
      last.events.insert(last.events.end(), s.events.begin(), s.events.end());
      std::stable_sort(last.events.begin(), last.events.end(),
                       [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
      continue;
    }
    s.session_index = index++;
    out.push_back(std::move(s));
  }
  return out;
}

// All users; input must be ordered by (user, timestamp) as parse_logs emits.
inline std::vector<Session> sessionize(std::span<const RawEvent> events, const Window& window,
                                       int sessions_per_day = kDefaultSessionsPerDay) {
  std::vector<Session> out;
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i;
    while (j < events.size() && events[j].user == events[i].user) ++j;
    auto user_sessions = sessionize_user(events.subspan(i, j - i), window, sessions_per_day);
    std::move(user_sessions.begin(), user_sessions.end(), std::back_inserter(out));
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features

struct UserContext {
  std::string primary_pc;
  std::optional<Timestamp> previous_end;
};

// Most Logon events wins; ties go to the lexicographically smallest pc.
inline std::map<std::string, std::string> primary_pcs(std::span<const RawEvent> events) {
  std::map<std::string, std::map<std::string, int>> counts;
  for (const auto& e : events)
    if (e.kind == EventKind::Logon) ++counts[e.user][e.pc];
  std::map<std::string, std::string> out;
  for (const auto& [user, per_pc] : counts) {
    int best = -1;
    for (const auto& [pc, n] : per_pc)
      if (n > best) {
        best = n;
        out[user] = pc;
      }
  }
  return out;
}

namespace detail {
inline bool ends_with_ci(std::string_view s, std::string_view suffix) {
  if (s.size() < suffix.size()) return false;
  return lower(s.substr(s.size() - suffix.size())) == suffix;
}

inline std::string url_host(std::string_view url) {
  auto s = url;
  if (const auto p = s.find("://"); p != std::string_view::npos) s = s.substr(p + 3);
  if (const auto p = s.find('/'); p != std::string_view::npos) s = s.substr(0, p);
  return lower(s);
}

inline bool contains_any(const std::string& haystack, const std::vector<std::string>& needles) {
  return std::any_of(needles.begin(), needles.end(),
                     [&](const std::string& n) { return !n.empty() && haystack.find(lower(n)) != std::string::npos; });
}

inline std::vector<std::string> recipients(const RawEvent& e) {
  std::vector<std::string> out;
  for (const char* field : {"to", "cc", "bcc"}) {
    auto it = e.payload.find(field);
    if (it == e.payload.end()) continue;
    std::string_view rest = it->second;
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      auto part = rest.substr(0, semi);
      while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
      while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
      if (!part.empty()) out.push_back(lower(part));
      if (semi == std::string_view::npos) break;
      rest.remove_prefix(semi + 1);
    }
  }
  return out;
}

inline double payload_number(const RawEvent& e, const char* key) {
  auto it = e.payload.find(key);
  if (it == e.payload.end() || it->second.empty()) return 0.0;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    return -1.0;  // present but not numeric
  }
}
}  // namespace detail

// Raw (unnormalized) features in kFeatureSchema order.
inline FeatureVector extract_features(const Session& s, const UserContext& ctx, const FeatureConfig& cfg) {
  using namespace feat;
  FeatureVector f{};
  const double duration = static_cast<double>((s.end - s.start).count());
  f[StartHour] = io::hour_of(s.start) / 23.0;
  f[EndHour] = io::hour_of(s.end) / 23.0;
  f[LogDuration] = std::log1p(std::max(0.0, duration));
  f[IsWeekend] = io::is_weekend(s.start) ? 1.0 : 0.0;
  f[IsAfterhoursStart] = is_afterhours(s.start) ? 1.0 : 0.0;
  f[OrphanLogon] = s.orphan_logon ? 1.0 : 0.0;

  std::set<std::string> pcs, domains, rcpts;
  double email_bytes = 0.0;
  for (const auto& e : s.events) {
    pcs.insert(e.pc);
    const bool late = is_afterhours(e.timestamp);
    switch (e.kind) {
      case EventKind::Logon: f[LogonCount] += 1; break;
      case EventKind::Logoff: f[LogoffCount] += 1; break;
      case EventKind::DeviceConnect:
        f[DeviceConnect] += 1;
        if (late) f[DeviceAfterhoursConnect] += 1;
        break;
      case EventKind::DeviceDisconnect: f[DeviceDisconnect] += 1; break;
      case EventKind::FileCopy: {
        f[FileCopy] += 1;
        const auto it = e.payload.find("filename");
        const std::string name = it == e.payload.end() ? std::string() : it->second;
        if (detail::ends_with_ci(name, ".exe")) f[FileExe] += 1;
        if (detail::ends_with_ci(name, ".doc") || detail::ends_with_ci(name, ".docx")) f[FileDoc] += 1;
        if (detail::ends_with_ci(name, ".pdf")) f[FilePdf] += 1;
        if (detail::ends_with_ci(name, ".zip")) f[FileZip] += 1;
        if (late) f[FileAfterhours] += 1;
        break;
      }
      case EventKind::Http: {
        f[HttpCount] += 1;
        const auto it = e.payload.find("url");
        const std::string url = it == e.payload.end() ? std::string() : detail::lower(it->second);
        domains.insert(detail::url_host(url));
        if (detail::contains_any(url, cfg.keywords.jobsite)) f[HttpJobsite] += 1;
        if (detail::contains_any(url, cfg.keywords.leaksite)) f[HttpLeaksite] += 1;
        if (detail::contains_any(url, cfg.keywords.hacktool)) f[HttpHacktool] += 1;
        if (late) f[HttpAfterhours] += 1;
        break;
      }
      case EventKind::Email: {
        f[EmailSent] += 1;
        const std::string internal = "@" + detail::lower(cfg.internal_domain);
        for (const auto& r : detail::recipients(e)) {
          rcpts.insert(r);
          if (detail::ends_with_ci(r, internal)) f[EmailInternalRecipients] += 1;
          else f[EmailExternalRecipients] += 1;
        }
        const double att = detail::payload_number(e, "attachments");
        if (att != 0.0) f[EmailWithAttachment] += 1;
        email_bytes += std::max(0.0, detail::payload_number(e, "size"));
        if (late) f[EmailAfterhours] += 1;
        break;
      }
    }
  }
  f[DistinctPcs] = static_cast<double>(pcs.size());
  f[IsNonprimaryPc] = std::any_of(pcs.begin(), pcs.end(), [&](const std::string& pc) { return pc != ctx.primary_pc; })
                          ? 1.0 : 0.0;
  f[HttpDistinctDomains] = static_cast<double>(domains.size());
  f[LogEmailBytes] = std::log1p(email_bytes);
  f[EmailDistinctRecipients] = static_cast<double>(rcpts.size());
  f[TotalEvents] = static_cast<double>(s.events.size());
  f[SessionIndexFrac] =
      cfg.sessions_per_day > 1 ? static_cast<double>(s.session_index) / (cfg.sessions_per_day - 1) : 0.0;
  double gap = 0.0;
  if (ctx.previous_end) gap = std::max(0.0, static_cast<double>((s.start - *ctx.previous_end).count()));
  f[LogMinutesSincePrevious] = std::log1p(gap);
  return f;
}

// ---------------------------------------------------------------------------
// Session records

struct SessionRecord {
  std::string user;
  int day_index = 0;
  int session_index = 0;
  Timestamp start{};
  Timestamp end{};
  FeatureVector features{};

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

// parse -> sessionize -> features, over events already ordered by parse_logs.
inline std::vector<SessionRecord> build_records(std::span<const RawEvent> events, const Window& window,
                                                const FeatureConfig& cfg) {
  const auto primary = primary_pcs(events);
  const auto sessions = sessionize(events, window, cfg.sessions_per_day);
  std::vector<SessionRecord> out;
  out.reserve(sessions.size());
  std::optional<Timestamp> prev_end;
  std::string prev_user;
  for (const auto& s : sessions) {
    if (s.user != prev_user) {
      prev_end.reset();
      prev_user = s.user;
    }
    UserContext ctx;
    if (auto it = primary.find(s.user); it != primary.end()) ctx.primary_pc = it->second;
    ctx.previous_end = prev_end;
    out.push_back({s.user, s.day_index, s.session_index, s.start, s.end, extract_features(s, ctx, cfg)});
    prev_end = s.end;
  }
  return out;
}

// Tab-separated: user, day_index, session_index, start, end, 35 x "%.6f".
inline void write_sessions(std::ostream& out, std::span<const SessionRecord> records) {
  char buf[64];
  for (const auto& r : records) {
    out << r.user << '\t' << r.day_index << '\t' << r.session_index << '\t' << io::format_iso(r.start) << '\t'
        << io::format_iso(r.end);
    for (double v : r.features) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_sessions(const std::filesystem::path& path, std::span<const SessionRecord> records) {
  auto out = io::open_out(path);
  write_sessions(out, records);
}

inline std::vector<SessionRecord> read_sessions(std::istream& in) {
  std::vector<SessionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    const auto bad = [&] { fail("MalformedRow", "sessions line " + std::to_string(lineno)); };
    if (cols.size() != 5 + kFeatureCount) bad();
    SessionRecord r;
    r.user = cols[0];
    try {
      r.day_index = std::stoi(cols[1]);
      r.session_index = std::stoi(cols[2]);
      for (std::size_t k = 0; k < kFeatureCount; ++k) r.features[k] = std::stod(cols[5 + k]);
    } catch (const std::exception&) {
      bad();
    }
    auto s = io::parse_iso(cols[3]);
    auto e = io::parse_iso(cols[4]);
    if (!s || !e) bad();
    r.start = *s;
    r.end = *e;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<SessionRecord> read_sessions(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  return read_sessions(in);
}

}  // namespace ubs::ingest
