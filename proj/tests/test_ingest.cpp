#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "test_util.hpp"
#include "ubs/ingest.hpp"

using namespace ubs;
using namespace ubs::ingest;
using io::make_time;

namespace {

const Window kWindow{io::parse_date("2010-01-04"), 501};

RawEvent ev(EventKind k, Timestamp t, std::string pc = "PC-1", std::string user = "U1") {
  RawEvent e;
  e.kind = k;
  e.timestamp = t;
  e.user = std::move(user);
  e.pc = std::move(pc);
  return e;
}

std::vector<RawEvent> parse_text(const std::string& name, const std::string& text, ParseStats* stats = nullptr) {
  std::istringstream in(text);
  std::vector<RawEvent> out;
  auto st = parse_stream(in, name, kWindow, out);
  if (stats) *stats = st;
  return out;
}

const FeatureConfig kCfg{};

}  // namespace

TEST(Parse, LogonRowMapsFields) {
  const auto evs = parse_text("logon.csv", "id,date,user,pc,activity\n{X1},01/04/2010 09:12:00,DTAA/AAM0658,PC-1,Logon\n");
  ASSERT_EQ(evs.size(), 1u);
  EXPECT_EQ(evs[0].kind, EventKind::Logon);
  EXPECT_EQ(evs[0].timestamp, make_time(2010, 1, 4, 9, 12));
  EXPECT_EQ(evs[0].user, "AAM0658");
  EXPECT_EQ(evs[0].pc, "PC-1");
}

TEST(Parse, MalformedRowSkippedAndCounted) {
  ParseStats st;
  const auto evs = parse_text("logon.csv",
                              "id,date,user,pc,activity\n"
                              "{1},13/45/2010 99:00,DTAA/A,PC-1,Logon\n"
                              "{2},01/04/2010 09:00:00,DTAA/A,PC-1,Logon\n"
                              "{3},01/04/2010 09:00:00,,PC-1,Logon\n",
                              &st);
  EXPECT_EQ(evs.size(), 1u);
  EXPECT_EQ(st.rows, 3u);
  EXPECT_EQ(st.malformed, 2u);
}

TEST(Parse, EmptyFileWithHeaderIsEmpty) {
  ParseStats st;
  EXPECT_TRUE(parse_text("http.csv", "id,date,user,pc,url\n", &st).empty());
  EXPECT_EQ(st.rows, 0u);
  EXPECT_EQ(st.malformed, 0u);
}

TEST(Parse, UnknownSchemaRejected) {
  try {
    parse_text("weird.csv", "id,when,who\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "UnknownSchema");
  }
}

TEST(Parse, SchemaDetection) {
  const std::vector<std::string> act{"id", "date", "user", "pc", "activity"};
  EXPECT_EQ(detect_schema(act, "device.csv"), LogType::Device);
  EXPECT_EQ(detect_schema(act, "logon.csv"), LogType::Logon);
  EXPECT_EQ(detect_schema({"id", "date", "user", "pc", "url", "content"}, "x"), LogType::Http);
  EXPECT_EQ(detect_schema({"ID", "Date", "User", "PC", "URL"}, "x"), LogType::Http);
}

TEST(Parse, OutOfWindowDroppedWithCounter) {
  ParseStats st;
  const auto evs = parse_text("logon.csv",
                              "id,date,user,pc,activity\n"
                              "{1},01/01/2010 09:00:00,DTAA/A,PC-1,Logon\n"
                              "{2},01/04/2010 09:00:00,DTAA/A,PC-1,Logon\n",
                              &st);
  EXPECT_EQ(evs.size(), 1u);
  EXPECT_EQ(st.out_of_window, 1u);
}

TEST(Parse, TooManyMalformedFailsRun) {
  testutil::TempDir dir("ingest");
  {
    std::ofstream f(dir / "logon.csv");
    f << "id,date,user,pc,activity\n";
    for (int i = 0; i < 50; ++i) f << "{" << i << "},01/04/2010 09:00:00,DTAA/A,PC-1,Logon\n";
    f << "{x},bad,DTAA/A,PC-1,Logon\n";
  }
  const std::vector<std::filesystem::path> files{dir / "logon.csv"};
  try {
    parse_logs(files, kWindow, 0.01);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MalformedInput");
  }
  EXPECT_NO_THROW(parse_logs(files, kWindow, 0.05));
}

TEST(Parse, EventsOrderedPerUser) {
  testutil::TempDir dir("order");
  {
    std::ofstream f(dir / "logon.csv");
    f << "id,date,user,pc,activity\n"
      << "{1},01/05/2010 09:00:00,DTAA/B,PC-2,Logon\n"
      << "{2},01/04/2010 17:00:00,DTAA/A,PC-1,Logoff\n"
      << "{3},01/04/2010 09:00:00,DTAA/A,PC-1,Logon\n";
    std::ofstream h(dir / "http.csv");
    h << "id,date,user,pc,url\n{4},01/04/2010 10:00:00,DTAA/A,PC-1,http://x.com/\n";
  }
  const auto res = parse_logs(standard_log_files(dir.path()), kWindow);
  ASSERT_EQ(res.events.size(), 4u);
  for (std::size_t i = 1; i < res.events.size(); ++i) {
    const auto& a = res.events[i - 1];
    const auto& b = res.events[i];
    EXPECT_TRUE(std::tie(a.user, a.timestamp) <= std::tie(b.user, b.timestamp));
  }
}

TEST(Sessionize, SinglePair) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 9, 0)),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 17, 0))};
  const auto s = sessionize(evs, kWindow);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ((s[0].end - s[0].start).count(), 480);
  EXPECT_FALSE(s[0].orphan_logon);
  const auto recs = build_records(evs, kWindow, kCfg);
  EXPECT_DOUBLE_EQ(recs[0].features[feat::LogDuration], std::log1p(480.0));
}

TEST(Sessionize, OrphanLogonClosedOneMinuteBeforeNext) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 9, 0)),
                                  ev(EventKind::Logon, make_time(2010, 1, 4, 12, 0)),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 17, 0))};
  const auto s = sessionize(evs, kWindow);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].end, make_time(2010, 1, 4, 11, 59));
  EXPECT_TRUE(s[0].orphan_logon);
  EXPECT_FALSE(s[1].orphan_logon);
  EXPECT_EQ(s[1].session_index, 1);
}

TEST(Sessionize, OrphanLogoffBecomesZeroLengthSession) {
  const std::vector<RawEvent> evs{ev(EventKind::Logoff, make_time(2010, 1, 4, 8, 0))};
  const auto s = sessionize(evs, kWindow);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].start, s[0].end);
  EXPECT_EQ(s[0].events.size(), 1u);
}

TEST(Sessionize, EventsWithoutLogonOpenImplicitSession) {
  const std::vector<RawEvent> evs{ev(EventKind::Http, make_time(2010, 1, 4, 10, 0)),
                                  ev(EventKind::Http, make_time(2010, 1, 4, 10, 30))};
  const auto s = sessionize(evs, kWindow);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].events.size(), 2u);
  EXPECT_EQ((s[0].end - s[0].start).count(), 30);
  EXPECT_FALSE(s[0].orphan_logon);
}

TEST(Sessionize, SessionsArePerPc) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 9, 0), "PC-1"),
                                  ev(EventKind::Logon, make_time(2010, 1, 4, 9, 30), "PC-2"),
                                  ev(EventKind::Http, make_time(2010, 1, 4, 10, 0), "PC-1"),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 11, 0), "PC-2"),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 12, 0), "PC-1")};
  const auto s = sessionize(evs, kWindow);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].events.size(), 3u);  // PC-1: logon, http, logoff
  EXPECT_EQ(s[1].events.size(), 2u);
}

TEST(Sessionize, MidnightSplitKeepsEventsPerDay) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 23, 0)),
                                  ev(EventKind::Http, make_time(2010, 1, 4, 23, 30)),
                                  ev(EventKind::Http, make_time(2010, 1, 5, 0, 30)),
                                  ev(EventKind::Logoff, make_time(2010, 1, 5, 1, 0))};
  const auto s = sessionize(evs, kWindow);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].day_index, 0);
  EXPECT_EQ(s[1].day_index, 1);
  EXPECT_EQ(s[0].events.size(), 2u);
  EXPECT_EQ(s[1].events.size(), 2u);
  EXPECT_EQ(s[0].end, make_time(2010, 1, 4, 23, 59));
  EXPECT_EQ(s[1].start, make_time(2010, 1, 5, 0, 0));
  for (const auto& x : s) EXPECT_EQ(io::date_of(x.start), io::date_of(x.end));
}

TEST(Sessionize, OverflowMergedIntoLastSlotConservesEvents) {
  std::vector<RawEvent> evs;
  for (int i = 0; i < 11; ++i) {
    evs.push_back(ev(EventKind::Logon, make_time(2010, 1, 4, 8 + i, 0)));
    evs.push_back(ev(EventKind::Http, make_time(2010, 1, 4, 8 + i, 10)));
    evs.push_back(ev(EventKind::Logoff, make_time(2010, 1, 4, 8 + i, 20)));
  }
  const auto recs = build_records(evs, kWindow, kCfg);
  ASSERT_EQ(recs.size(), 9u);
  EXPECT_EQ(recs.back().session_index, 8);
  EXPECT_DOUBLE_EQ(recs.back().features[feat::LogonCount], 3.0);
  EXPECT_DOUBLE_EQ(recs.back().features[feat::HttpCount], 3.0);
  // Naive regrouping oracle: per-day totals equal the raw event counts.
  double logons = 0, https = 0, total = 0;
  for (const auto& r : recs) {
    logons += r.features[feat::LogonCount];
    https += r.features[feat::HttpCount];
    total += r.features[feat::TotalEvents];
  }
  EXPECT_DOUBLE_EQ(logons, 11.0);
  EXPECT_DOUBLE_EQ(https, 11.0);
  EXPECT_DOUBLE_EQ(total, 33.0);
}

TEST(Features, HttpOnlySession) {
  std::vector<RawEvent> evs;
  for (int i = 0; i < 3; ++i) {
    auto e = ev(EventKind::Http, make_time(2010, 1, 4, 10, i));
    e.payload["url"] = "http://news.example.com/" + std::to_string(i);
    evs.push_back(e);
  }
  const auto recs = build_records(evs, kWindow, kCfg);
  ASSERT_EQ(recs.size(), 1u);
  const auto& f = recs[0].features;
  EXPECT_EQ(f[feat::HttpCount], 3.0);
  EXPECT_EQ(f[feat::TotalEvents], 3.0);
  EXPECT_EQ(f[feat::HttpDistinctDomains], 1.0);
  for (std::size_t k : {feat::LogonCount, feat::LogoffCount, feat::DeviceConnect, feat::FileCopy, feat::EmailSent,
                        feat::HttpJobsite, feat::HttpLeaksite, feat::HttpHacktool, feat::HttpAfterhours})
    EXPECT_EQ(f[k], 0.0) << kFeatureSchema[k].name;
  EXPECT_EQ(f[feat::IsWeekend], 0.0);
  EXPECT_EQ(f[feat::IsAfterhoursStart], 0.0);
}

TEST(Features, SaturdayNightFlags) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 9, 2, 0))};
  const auto f = build_records(evs, kWindow, kCfg)[0].features;
  EXPECT_EQ(f[feat::IsWeekend], 1.0);
  EXPECT_EQ(f[feat::IsAfterhoursStart], 1.0);
  EXPECT_DOUBLE_EQ(f[feat::StartHour], 2.0 / 23.0);
}

TEST(Features, AfterhoursDeviceConnectsMatchIndependentRecount) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 21, 50)),
                                  ev(EventKind::DeviceConnect, make_time(2010, 1, 4, 22, 0)),
                                  ev(EventKind::DeviceDisconnect, make_time(2010, 1, 4, 22, 10)),
                                  ev(EventKind::DeviceConnect, make_time(2010, 1, 4, 23, 0)),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 23, 30))};
  const auto f = build_records(evs, kWindow, kCfg)[0].features;
  int connects = 0, late = 0;
  for (const auto& e : evs) {
    if (e.kind != EventKind::DeviceConnect) continue;
    ++connects;
    const int h = io::hour_of(e.timestamp);
    if (h < 8 || h >= 18) ++late;
  }
  EXPECT_EQ(f[feat::DeviceConnect], connects);
  EXPECT_EQ(f[feat::DeviceAfterhoursConnect], late);
  EXPECT_EQ(f[feat::DeviceConnect], 2.0);
  EXPECT_EQ(f[feat::DeviceAfterhoursConnect], 2.0);
}

TEST(Features, EmailFileAndUrlCategories) {
  auto logon = ev(EventKind::Logon, make_time(2010, 1, 4, 9, 0));
  auto mail = ev(EventKind::Email, make_time(2010, 1, 4, 9, 5));
  mail.payload = {{"to", "a@dtaa.com;b@gmail.com"}, {"cc", "c@dtaa.com"}, {"bcc", ""},
                  {"size", "1000"},                 {"attachments", "2"}};
  auto file = ev(EventKind::FileCopy, make_time(2010, 1, 4, 9, 6));
  file.payload["filename"] = "C:\\secret.ZIP";
  auto url = ev(EventKind::Http, make_time(2010, 1, 4, 9, 7));
  url.payload["url"] = "http://wikileaks.org/keylogger";
  const auto f = build_records(std::vector<RawEvent>{logon, mail, file, url}, kWindow, kCfg)[0].features;
  EXPECT_EQ(f[feat::EmailSent], 1.0);
  EXPECT_EQ(f[feat::EmailInternalRecipients], 2.0);
  EXPECT_EQ(f[feat::EmailExternalRecipients], 1.0);
  EXPECT_EQ(f[feat::EmailDistinctRecipients], 3.0);
  EXPECT_EQ(f[feat::EmailWithAttachment], 1.0);
  EXPECT_DOUBLE_EQ(f[feat::LogEmailBytes], std::log1p(1000.0));
  EXPECT_EQ(f[feat::FileZip], 1.0);
  EXPECT_EQ(f[feat::HttpLeaksite], 1.0);
  EXPECT_EQ(f[feat::HttpHacktool], 1.0);
  EXPECT_EQ(f[feat::HttpJobsite], 0.0);
}

TEST(Features, PrimaryPcAndGapToPrevious) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 9, 0), "PC-1"),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 10, 0), "PC-1"),
                                  ev(EventKind::Logon, make_time(2010, 1, 4, 11, 0), "PC-1"),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 12, 0), "PC-1"),
                                  ev(EventKind::Logon, make_time(2010, 1, 4, 13, 0), "PC-9"),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 14, 0), "PC-9")};
  const auto recs = build_records(evs, kWindow, kCfg);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].features[feat::LogMinutesSincePrevious], 0.0);
  EXPECT_DOUBLE_EQ(recs[1].features[feat::LogMinutesSincePrevious], std::log1p(60.0));
  EXPECT_EQ(recs[0].features[feat::IsNonprimaryPc], 0.0);
  EXPECT_EQ(recs[2].features[feat::IsNonprimaryPc], 1.0);
  EXPECT_DOUBLE_EQ(recs[2].features[feat::SessionIndexFrac], 2.0 / 8.0);
}

TEST(Schema, ThirtyFiveUniqueNames) {
  std::set<std::string_view> names;
  for (const auto& s : kFeatureSchema) names.insert(s.name);
  EXPECT_EQ(names.size(), kFeatureCount);
  EXPECT_EQ(kFeatureSchema[feat::DeviceAfterhoursConnect].name, "device_afterhours_connect_count");
  EXPECT_EQ(kFeatureSchema[feat::TotalEvents].name, "total_event_count");
}

TEST(UrlKeywords, RejectsUnknownCategory) {
  EXPECT_THROW(UrlKeywords::from_json({{"gambling", {"poker"}}}), Error);
  const auto k = UrlKeywords::from_json({{"jobsite", {"hireme"}}});
  EXPECT_EQ(k.jobsite, std::vector<std::string>{"hireme"});
  EXPECT_FALSE(k.leaksite.empty());
}

// Random multi-user, multi-pc logs: for every (user, day) the count features
// summed over that day's records equal the raw events of that date.
TEST(Properties, ConservationAgainstNaiveRecount) {
  Rng rng(2024);
  std::vector<RawEvent> evs;
  const EventKind kinds[] = {EventKind::Logon, EventKind::Logoff, EventKind::DeviceConnect, EventKind::DeviceDisconnect,
                             EventKind::FileCopy, EventKind::Http, EventKind::Email};
  for (int u = 0; u < 5; ++u)
    for (int i = 0; i < 400; ++i) {
      auto e = ev(kinds[uniform_index(rng, 7)],
                  make_time(2010, 1, 4) + std::chrono::minutes{uniform_index(rng, 60 * 24 * 6)},
                  "PC-" + std::to_string(uniform_index(rng, 3)), "U" + std::to_string(u));
      if (e.kind == EventKind::Email) e.payload["to"] = "x@dtaa.com";
      evs.push_back(e);
    }
  std::stable_sort(evs.begin(), evs.end(),
                   [](const RawEvent& a, const RawEvent& b) { return std::tie(a.user, a.timestamp) < std::tie(b.user, b.timestamp); });
  const auto recs = build_records(evs, kWindow, kCfg);

  using Key = std::tuple<std::string, int, EventKind>;
  std::map<Key, double> raw, summed;
  for (const auto& e : evs) raw[{e.user, kWindow.day_index(e.timestamp), e.kind}] += 1;
  const std::pair<std::size_t, EventKind> slots[] = {
      {feat::LogonCount, EventKind::Logon},         {feat::LogoffCount, EventKind::Logoff},
      {feat::DeviceConnect, EventKind::DeviceConnect}, {feat::DeviceDisconnect, EventKind::DeviceDisconnect},
      {feat::FileCopy, EventKind::FileCopy},         {feat::HttpCount, EventKind::Http},
      {feat::EmailSent, EventKind::Email}};
  std::map<std::pair<std::string, int>, double> raw_total, rec_total;
  for (const auto& e : evs) raw_total[{e.user, kWindow.day_index(e.timestamp)}] += 1;
  for (const auto& r : recs) {
    ASSERT_LT(r.session_index, kDefaultSessionsPerDay);
    ASSERT_LE(r.start, r.end);
    ASSERT_EQ(io::date_of(r.start), io::date_of(r.end));
    for (const auto& [k, kind] : slots) summed[{r.user, r.day_index, kind}] += r.features[k];
    rec_total[{r.user, r.day_index}] += r.features[feat::TotalEvents];
  }
  for (const auto& [key, n] : raw) EXPECT_EQ(summed[key], n);
  EXPECT_EQ(raw_total, rec_total);
}

TEST(SessionsFile, RoundTripAndDeterminism) {
  const std::vector<RawEvent> evs{ev(EventKind::Logon, make_time(2010, 1, 4, 9, 0)),
                                  ev(EventKind::Http, make_time(2010, 1, 4, 9, 30)),
                                  ev(EventKind::Logoff, make_time(2010, 1, 4, 17, 0))};
  const auto recs = build_records(evs, kWindow, kCfg);
  std::ostringstream a, b;
  write_sessions(a, recs);
  write_sessions(b, build_records(evs, kWindow, kCfg));
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  const auto back = read_sessions(in);
  ASSERT_EQ(back.size(), recs.size());
  EXPECT_EQ(back[0].start, recs[0].start);
  EXPECT_EQ(back[0].day_index, recs[0].day_index);
  for (std::size_t k = 0; k < kFeatureCount; ++k) EXPECT_NEAR(back[0].features[k], recs[0].features[k], 5e-7);
  std::istringstream bad("U1\t0\t0\n");
  EXPECT_THROW(read_sessions(bad), Error);
}
