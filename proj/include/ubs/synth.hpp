#pragma once

// Deterministic generator of CERT-schema activity logs with labeled benign
// and malicious users.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubs/common.hpp"
#include "ubs/io.hpp"

namespace ubs::synth {

using io::Timestamp;

enum class Scenario { UsbExfilAfterHours, LeakSiteUpload, MassEmailExternal };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::UsbExfilAfterHours: return "usb_exfil_after_hours";
    case Scenario::LeakSiteUpload: return "leak_site_upload";
    default: return "mass_email_external";
  }
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "usb_exfil_after_hours") return Scenario::UsbExfilAfterHours;
  if (s == "leak_site_upload") return Scenario::LeakSiteUpload;
  if (s == "mass_email_external") return Scenario::MassEmailExternal;
  fail("ConfigError", "unknown scenario '" + std::string(s) + "'");
}

struct SynthConfig {
  std::uint64_t seed = 42;
  int n_benign = 100;
  int n_malicious = 10;
  int n_days = 60;
  std::string start_date = "2010-01-04";
  // Work hours: first logon ~ uniform in [day_start_hour, day_start_hour + 1).
  double day_start_hour = 8.0;
  int max_sessions_per_day = 3;
  // Per-session Poisson rates for benign behavior.
  double http_rate = 6.0;
  double email_rate = 2.0;
  double file_rate = 0.5;
  double device_rate = 0.0;
  double external_email_prob = 0.15;
  double secondary_pc_prob = 0.03;
  // Malicious users: anomalous sessions per user, spread over an active window.
  int scenario_sessions = 4;
  int active_window_days = 21;
  std::vector<Scenario> scenario_mix{Scenario::UsbExfilAfterHours, Scenario::LeakSiteUpload,
                                     Scenario::MassEmailExternal};

  void validate() const {
    if (n_benign < 0 || n_malicious < 0 || n_days <= 0) fail("ConfigError", "synth counts must be >= 0, days > 0");
    if (n_days > 501) fail("ConfigError", "n_days exceeds the 501-day window");
    if (http_rate < 0 || email_rate < 0 || file_rate < 0 || device_rate < 0) fail("ConfigError", "synth rates must be >= 0");
    if (max_sessions_per_day < 1) fail("ConfigError", "max_sessions_per_day must be >= 1");
    if (scenario_sessions < 3) fail("ConfigError", "each malicious user needs >= 3 anomalous sessions");
    if (scenario_mix.empty()) fail("ConfigError", "scenario_mix must not be empty");
    if (active_window_days < 1) fail("ConfigError", "active_window_days must be >= 1");
  }
};

struct SynthUser {
  std::string id;
  bool malicious = false;
  std::vector<Scenario> scenarios;
};

struct SynthResult {
  std::vector<SynthUser> users;  // sorted by id
  std::map<std::string, std::size_t> rows_per_file;
};

namespace detail {

struct Row {
  Timestamp t;
  std::string user;
  std::uint64_t seq;
  std::string line;  // everything after the id column
};

inline const std::vector<std::string>& benign_domains() {
  static const std::vector<std::string> d{"news.example.com", "weather.example.org", "intranet.dtaa.com",
                                          "docs.vendor.net",  "search.example.com",  "mail.example.net",
                                          "sports.example.org", "wiki.example.org"};
  return d;
}

class Writer {
 public:
  Writer(Rng& rng, std::uint64_t& seq) : rng_(rng), seq_(seq) {}

  std::vector<Row> logon, device, file, http, email;

  void session(const std::string& user, const std::string& pc, Timestamp start, Timestamp end) {
    add(logon, start, user, pc + ",Logon");
    add(logon, end, user, pc + ",Logoff");
  }
  void add_device(const std::string& user, const std::string& pc, Timestamp t, bool connect) {
    add(device, t, user, pc + (connect ? ",Connect" : ",Disconnect"));
  }
  void add_file(const std::string& user, const std::string& pc, Timestamp t, const std::string& name) {
    add(file, t, user, pc + "," + name + ",");
  }
  void add_http(const std::string& user, const std::string& pc, Timestamp t, const std::string& url) {
    add(http, t, user, pc + "," + url);
  }
  void add_email(const std::string& user, const std::string& pc, Timestamp t, const std::string& to, long size,
                 int attachments) {
    add(email, t, user,
        pc + "," + to + ",,," + to_lower(user) + "@dtaa.com," + std::to_string(size) + "," +
            std::to_string(attachments) + ",");
  }

 private:
  static std::string to_lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }
  void add(std::vector<Row>& rows, Timestamp t, const std::string& user, std::string rest) {
    rows.push_back({t, user, seq_++, std::move(rest)});
  }
  Rng& rng_;
  std::uint64_t& seq_;
};

// Uniform minute strictly inside (start, end) when there is room.
inline Timestamp inside(Rng& rng, Timestamp start, Timestamp end) {
  const auto span = (end - start).count();
  if (span <= 2) return start;
  return start + std::chrono::minutes{1 + static_cast<long>(uniform_index(rng, static_cast<std::uint64_t>(span - 1)))};
}

inline std::string make_user_id(Rng& rng) {
  std::string id;
  for (int i = 0; i < 3; ++i) id.push_back(static_cast<char>('A' + uniform_index(rng, 26)));
  char digits[8];
  std::snprintf(digits, sizeof digits, "%04d", static_cast<int>(uniform_index(rng, 10000)));
  return id + digits;
}

inline std::string make_pc(Rng& rng) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "PC-%04d", static_cast<int>(uniform_index(rng, 10000)));
  return buf;
}

inline std::string internal_address(Rng& rng) {
  return make_user_id(rng) + "@dtaa.com";
}

inline void write_file(const std::filesystem::path& path, const char* header, std::vector<Row>& rows,
                       std::uint64_t& id_counter) {
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.t, a.user, a.seq) < std::tie(b.t, b.user, b.seq);
  });
  auto out = io::open_out(path, true);
  out << header << '\n';
  char id[32];
  for (const auto& r : rows) {
    std::snprintf(id, sizeof id, "{S%012llu}", static_cast<unsigned long long>(id_counter++));
    out << id << ',' << io::format_cert_time(r.t) << ",DTAA/" << r.user << ',' << r.line << '\n';
  }
}

}  // namespace detail

// Writes logon/device/file/http/email.csv and labels.csv into `dir`.
inline SynthResult generate(const SynthConfig& cfg, const std::filesystem::path& dir) {
  using namespace std::chrono;
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x73796e));
  const io::Date origin = io::parse_date(cfg.start_date);

  // Unique ids, then sorted so generation order does not depend on draw order.
  std::set<std::string> ids;
  const auto total = static_cast<std::size_t>(cfg.n_benign + cfg.n_malicious);
  std::vector<std::string> draw_order;
  while (ids.size() < total) {
    auto id = detail::make_user_id(rng);
    if (ids.insert(id).second) draw_order.push_back(id);
  }
  SynthResult result;
  for (std::size_t i = 0; i < draw_order.size(); ++i) {
    SynthUser u;
    u.id = draw_order[i];
    u.malicious = i >= static_cast<std::size_t>(cfg.n_benign);
    if (u.malicious) {
      const std::size_t m = i - static_cast<std::size_t>(cfg.n_benign);
      u.scenarios.push_back(cfg.scenario_mix[m % cfg.scenario_mix.size()]);
    }
    result.users.push_back(std::move(u));
  }
  std::sort(result.users.begin(), result.users.end(), [](const SynthUser& a, const SynthUser& b) { return a.id < b.id; });

  std::uint64_t seq = 0;
  detail::Writer w(rng, seq);
  for (std::size_t ui = 0; ui < result.users.size(); ++ui) {
    const SynthUser& u = result.users[ui];
    Rng ur(derive_seed(cfg.seed, 1000 + ui));
    const std::string pc = detail::make_pc(ur);
    const std::string alt_pc = detail::make_pc(ur);
    const auto& domains = detail::benign_domains();

    // Benign background: weekdays, 1..max sessions inside work hours.
    for (int d = 0; d < cfg.n_days; ++d) {
      const io::Date day = origin + days{d};
      const weekday wd{day};
      if (wd == Saturday || wd == Sunday) continue;
      const int n_sessions = 1 + static_cast<int>(uniform_index(ur, static_cast<std::uint64_t>(cfg.max_sessions_per_day)));
      Timestamp cursor = Timestamp(day) + minutes{static_cast<long>(cfg.day_start_hour * 60.0)} +
                         minutes{static_cast<long>(uniform_index(ur, 60))};
      const Timestamp close_limit = Timestamp(day) + hours{17} + minutes{50};
      for (int s = 0; s < n_sessions; ++s) {
        const Timestamp start = cursor;
        Timestamp end = start + minutes{60 + static_cast<long>(uniform_index(ur, 121))};
        if (end > close_limit) end = close_limit;
        if (end - start < minutes{20}) break;
        const std::string& use_pc = uniform01(ur) < cfg.secondary_pc_prob ? alt_pc : pc;
        w.session(u.id, use_pc, start, end);
        for (int k = poisson(ur, cfg.http_rate); k > 0; --k)
          w.add_http(u.id, use_pc, detail::inside(ur, start, end),
                     "http://" + domains[uniform_index(ur, domains.size())] + "/page" +
                         std::to_string(uniform_index(ur, 500)));
        for (int k = poisson(ur, cfg.email_rate); k > 0; --k) {
          const bool external = uniform01(ur) < cfg.external_email_prob;
          const std::string to = external ? "contact" + std::to_string(uniform_index(ur, 50)) + "@partner.com"
                                          : detail::internal_address(ur);
          w.add_email(u.id, use_pc, detail::inside(ur, start, end), to,
                      10'000 + static_cast<long>(uniform_index(ur, 40'000)), uniform01(ur) < 0.2 ? 1 : 0);
        }
        for (int k = poisson(ur, cfg.file_rate); k > 0; --k)
          w.add_file(u.id, use_pc, detail::inside(ur, start, end),
                     "report" + std::to_string(uniform_index(ur, 100)) + (uniform01(ur) < 0.5 ? ".doc" : ".pdf"));
        for (int k = poisson(ur, cfg.device_rate); k > 0; --k) {
          const Timestamp t = detail::inside(ur, start, end);
          w.add_device(u.id, use_pc, t, true);
          w.add_device(u.id, use_pc, std::min(t + minutes{5}, end), false);
        }
        cursor = end + minutes{10 + static_cast<long>(uniform_index(ur, 51))};
      }
    }

    if (!u.malicious) continue;
    // Anomalous late-evening sessions on distinct days of the active window.
    const int window = std::min(cfg.active_window_days, cfg.n_days);
    const int first = static_cast<int>(uniform_index(ur, static_cast<std::uint64_t>(cfg.n_days - window + 1)));
    std::vector<int> days_pool(static_cast<std::size_t>(window));
    std::iota(days_pool.begin(), days_pool.end(), first);
    shuffle(std::span(days_pool), ur);
    const int n_anom = std::min(cfg.scenario_sessions, window);
    days_pool.resize(static_cast<std::size_t>(n_anom));
    std::sort(days_pool.begin(), days_pool.end());
    for (int d : days_pool) {
      const io::Date day = origin + days{d};
      const Timestamp start = Timestamp(day) + hours{23} + minutes{static_cast<long>(uniform_index(ur, 10))};
      const Timestamp end = start + minutes{20 + static_cast<long>(uniform_index(ur, 26))};
      w.session(u.id, pc, start, end);
      for (Scenario sc : u.scenarios) {
        switch (sc) {
          case Scenario::UsbExfilAfterHours: {
            const int connects = 2 + static_cast<int>(uniform_index(ur, 3));
            for (int c = 0; c < connects; ++c) {
              const Timestamp t = detail::inside(ur, start, end);
              w.add_device(u.id, pc, t, true);
              w.add_device(u.id, pc, std::min(t + minutes{3}, end), false);
            }
            static const char* exts[] = {".zip", ".doc", ".exe", ".pdf"};
            for (int k = 5 + static_cast<int>(uniform_index(ur, 11)); k > 0; --k)
              w.add_file(u.id, pc, detail::inside(ur, start, end),
                         "backup" + std::to_string(uniform_index(ur, 1000)) + exts[uniform_index(ur, 4)]);
            break;
          }
          case Scenario::LeakSiteUpload:
            for (int k = 3 + static_cast<int>(uniform_index(ur, 6)); k > 0; --k)
              w.add_http(u.id, pc, detail::inside(ur, start, end),
                         "http://wikileaks.org/upload/" + std::to_string(uniform_index(ur, 1000)));
            for (int k = 1 + static_cast<int>(uniform_index(ur, 3)); k > 0; --k)
              w.add_http(u.id, pc, detail::inside(ur, start, end), "http://www.jobsearch.com/listing");
            break;
          case Scenario::MassEmailExternal:
            for (int k = 10 + static_cast<int>(uniform_index(ur, 21)); k > 0; --k)
              w.add_email(u.id, pc, detail::inside(ur, start, end),
                          "drop" + std::to_string(uniform_index(ur, 20)) + "@freemail.com",
                          500'000 + static_cast<long>(uniform_index(ur, 1'000'000)), 1 + static_cast<int>(uniform_index(ur, 3)));
            break;
        }
      }
    }
  }

  std::uint64_t id_counter = 0;
  detail::write_file(dir / "logon.csv", "id,date,user,pc,activity", w.logon, id_counter);
  detail::write_file(dir / "device.csv", "id,date,user,pc,activity", w.device, id_counter);
  detail::write_file(dir / "file.csv", "id,date,user,pc,filename,content", w.file, id_counter);
  detail::write_file(dir / "http.csv", "id,date,user,pc,url", w.http, id_counter);
  detail::write_file(dir / "email.csv", "id,date,user,pc,to,cc,bcc,from,size,attachments,content", w.email,
                     id_counter);
  result.rows_per_file = {{"logon.csv", w.logon.size()}, {"device.csv", w.device.size()},
                          {"file.csv", w.file.size()},   {"http.csv", w.http.size()},
                          {"email.csv", w.email.size()}};

  auto labels = io::open_out(dir / "labels.csv", true);
  labels << "user,label\n";
  for (const auto& u : result.users) labels << u.id << ',' << (u.malicious ? "malicious" : "benign") << '\n';
  return result;
}

// labels.csv: user,label[,source]
struct LabeledUser {
  std::string user;
  Label label = Label::Unknown;
  std::string source = "synth";
};

inline std::vector<LabeledUser> read_labels(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("user,label", 0) != 0) fail("UnknownSchema", "not a labels CSV: " + path.string());
  std::vector<LabeledUser> out;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() < 2) fail("MalformedRow", "labels row: " + line);
    LabeledUser u{f[0], parse_label(f[1]), f.size() > 2 && !f[2].empty() ? f[2] : "synth"};
    if (!seen.insert(u.user).second) fail("MalformedRow", "duplicate user in labels: " + u.user);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace ubs::synth
