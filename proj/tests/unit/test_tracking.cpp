#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "drrel/click_sim.hpp"
#include "drrel/error.hpp"
#include "drrel/examination.hpp"
#include "drrel/tracking.hpp"

namespace cs = drrel::click_sim;
namespace tr = drrel::tracking;

namespace {

// clicks[i] for position i+1; doc ids are q*100 + position.
tr::AnnotatedSession annotated(cs::QueryId q, const std::vector<int>& clicks, std::int64_t ts, double e = 0.5) {
  tr::AnnotatedSession a;
  a.log.query_id = q;
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    cs::Interaction it;
    it.query_id = q;
    it.doc_id = q * 100 + static_cast<cs::DocId>(i) + 1;
    it.position = static_cast<int>(i) + 1;
    it.clicked = clicks[i] != 0;
    it.display_time_s = 2.0 + static_cast<double>(i);
    it.dwell_time_s = it.clicked ? 30.0 : 0.0;
    it.timestamp = ts;
    a.log.docs.push_back(it.doc_id);
    a.log.interactions.push_back(it);
    a.e_hat.push_back(e);
  }
  return a;
}

std::vector<tr::AnnotatedSession> random_batch(std::mt19937_64& rng, std::size_t n, std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> ts(lo, hi);
  std::uniform_int_distribution<int> q(0, 4), bit(0, 3);
  std::uniform_real_distribution<double> e(0.05, 0.95);
  std::vector<tr::AnnotatedSession> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> clicks(5);
    for (auto& c : clicks) c = bit(rng) == 0;
    out.push_back(annotated(static_cast<cs::QueryId>(q(rng)), clicks, ts(rng), e(rng)));
  }
  return out;
}

std::int64_t impressions(const tr::WindowDict& w, cs::QueryId q, cs::DocId d) {
  const auto* s = w.table.find(q, d);
  return s ? s->impressions : 0;
}

}  // namespace

TEST(ParseClickLog, EmptyInputIsEmpty) {
  const auto r = tr::parse_click_log("");
  EXPECT_TRUE(r.sessions.empty());
  EXPECT_TRUE(r.rejects.empty());
}

TEST(ParseClickLog, RoundTripIsIdentity) {
  const auto cat = cs::generate_catalog({20, 5, 1.0, {}}, 1);
  cs::SimulationConfig sc;
  sc.n_sessions = 200;
  const auto logs = cs::logs_only(
      cs::simulate_sessions(cat, cs::ClickModelParams::default_web(5), cs::shuffled_policy(), sc, 2));
  const auto text = tr::serialize_click_log(logs);
  const auto r = tr::parse_click_log(text);
  EXPECT_TRUE(r.rejects.empty());
  EXPECT_EQ(tr::serialize_click_log(r.sessions), text);
}

TEST(ParseClickLog, RejectsAreReportedWithLineNumbers) {
  auto bad = annotated(1, {0, 1}, 3).log;
  bad.interactions[0].display_time_s = -1.0;
  const std::string text = "{\"schema_version\":1}\n" + tr::serialize_session(annotated(1, {1}, 3).log) +
                           "\n\nnot json\n" + tr::serialize_session(bad) + "\n";
  const auto r = tr::parse_click_log(text);
  EXPECT_EQ(r.sessions.size(), 1u);
  ASSERT_EQ(r.rejects.size(), 2u);
  EXPECT_EQ(r.rejects[0].line, 4u);
  EXPECT_EQ(r.rejects[1].line, 5u);
  EXPECT_NE(r.rejects[1].reason.find("negative display time"), std::string::npos);
}

TEST(ParseClickLog, SchemaVersionMismatchIsHardError) {
  EXPECT_THROW(tr::parse_click_log("{\"schema_version\":2}\n"), drrel::SchemaError);
}

TEST(AttachExamination, MatchesPointwisePrediction) {
  std::vector<cs::SessionLog> logs;
  for (int i = 0; i < 30; ++i) logs.push_back(annotated(static_cast<cs::QueryId>(i % 3), {i % 2, 0, i % 3 == 0}, 0).log);
  for (auto& l : logs) {
    for (std::size_t k = 0; k < l.interactions.size(); ++k) l.interactions[k].display_time_s = k == 0 ? 6.0 : 0.5;
  }
  drrel::examination::GbdtConfig cfg;
  cfg.min_leaf = 1;
  const auto m = drrel::examination::train_exam_model(drrel::examination::mine_exam_labels(logs), cfg).model;
  const auto a = tr::attach_examination(logs, m);
  const auto b = tr::attach_examination(logs, m);
  for (std::size_t i = 0; i < logs.size(); ++i) {
    EXPECT_EQ(a[i].e_hat, b[i].e_hat);
    for (int k = 1; k <= 3; ++k) {
      const double e = a[i].e_hat[static_cast<std::size_t>(k - 1)];
      EXPECT_EQ(e, drrel::examination::exam_predict(m, drrel::examination::extract_exam_features(logs[i], k)));
      EXPECT_GT(e, 0.0);
      EXPECT_LT(e, 1.0);
    }
  }
  cfg.n_trees = 0;
  const auto base = drrel::examination::train_exam_model(drrel::examination::mine_exam_labels(logs), cfg).model;
  for (const auto& s : tr::attach_examination(logs, base)) {
    for (double e : s.e_hat) EXPECT_EQ(e, tr::attach_examination(logs, base)[0].e_hat[0]);
  }
}

TEST(Windows, LengthsAndCadences) {
  EXPECT_EQ(tr::window_hours(tr::WindowKind::monthly), 672);
  EXPECT_EQ(tr::window_hours(tr::WindowKind::weekly), 168);
  EXPECT_EQ(tr::window_hours(tr::WindowKind::daily), 24);
  EXPECT_EQ(tr::cadence_hours(tr::WindowKind::monthly), 168);
  EXPECT_EQ(tr::cadence_hours(tr::WindowKind::weekly), 24);
  EXPECT_EQ(tr::cadence_hours(tr::WindowKind::daily), 1);
}

TEST(Windows, SingleClickGivesDailyCtrOne) {
  tr::TrackingDicts d;
  const std::vector<tr::AnnotatedSession> b{annotated(7, {1}, 10)};
  d.advance(10, b);
  const auto x = tr::build_click_features(*d.snapshot(), 7, 701);
  EXPECT_EQ(x.x[14 + 1], 1.0);
}

TEST(Windows, DailyEmptyAfterTwentyFiveIdleHours) {
  tr::TrackingDicts d;
  const std::vector<tr::AnnotatedSession> b{annotated(7, {1, 0}, 100)};
  d.advance(100, b);
  EXPECT_FALSE(d.snapshot()->daily.table.empty());
  const auto st = d.advance(125, {});
  EXPECT_TRUE(st.refreshed[2]);
  EXPECT_TRUE(d.snapshot()->daily.table.empty());
  EXPECT_EQ(impressions(d.snapshot()->weekly, 7, 701), 1);
}

TEST(Windows, TenImpressionsFiveClicks) {
  tr::TrackingDicts d;
  std::vector<tr::AnnotatedSession> b;
  for (int i = 0; i < 10; ++i) b.push_back(annotated(3, {i < 5}, 50));
  d.advance(50, b);
  const auto x = tr::build_click_features(*d.snapshot(), 3, 301);
  for (std::size_t w = 0; w < 3; ++w) {
    EXPECT_NEAR(x.x[w * 7 + 0], std::log1p(10.0), 1e-12);
    EXPECT_EQ(x.x[w * 7 + 1], 0.5);
    EXPECT_NEAR(x.x[w * 7 + 2], 1.0, 1e-12);  // 5 clicks / (10 * 0.5)
    EXPECT_EQ(x.x[w * 7 + 3], 1.0);
    EXPECT_NEAR(x.x[w * 7 + 4], 2.0, 1e-9);
    EXPECT_NEAR(x.x[w * 7 + 5], 30.0, 1e-9);
    EXPECT_EQ(x.x[w * 7 + 6], 0.0);
  }
}

TEST(Windows, SkipsCountUnclickedAboveLastClick) {
  tr::TrackingDicts d;
  const std::vector<tr::AnnotatedSession> b{annotated(2, {0, 0, 1, 0}, 0)};
  d.advance(0, b);
  const auto& w = d.snapshot()->daily;
  EXPECT_EQ(w.table.find(2, 201)->skips, 1);
  EXPECT_EQ(w.table.find(2, 202)->skips, 1);
  EXPECT_EQ(w.table.find(2, 203)->skips, 0);
  EXPECT_EQ(w.table.find(2, 204)->skips, 0);
}

TEST(Windows, ReplayIsIdempotent) {
  std::mt19937_64 rng(1);
  const auto b = random_batch(rng, 50, 0, 20);
  tr::TrackingDicts d;
  d.advance(20, b);
  const auto before = d.state_digest();
  const auto st = d.advance(20, b);
  EXPECT_TRUE(st.replay);
  EXPECT_EQ(d.state_digest(), before);
}

TEST(Windows, FutureAndExpiredEventsAreCountedAndSkipped) {
  tr::TrackingDicts d;
  const std::vector<tr::AnnotatedSession> b{annotated(1, {1}, 1000), annotated(1, {1}, 2000), annotated(1, {1}, 1990)};
  const auto st = d.advance(1990, b);
  EXPECT_EQ(st.future_skipped, 1u);
  EXPECT_EQ(st.expired_skipped, 1u);
  EXPECT_EQ(st.accepted, 1u);
  EXPECT_THROW(d.advance(1989, {}), drrel::DomainError);
}

TEST(Windows, RefreshCadence) {
  tr::TrackingDicts d;
  d.advance(0, {});
  auto st = d.advance(1, {});
  EXPECT_EQ(st.refreshed, (std::array<bool, 3>{false, false, true}));
  st = d.advance(24, {});
  EXPECT_EQ(st.refreshed, (std::array<bool, 3>{false, true, true}));
  st = d.advance(168, {});
  EXPECT_EQ(st.refreshed, (std::array<bool, 3>{true, true, true}));
  st = d.advance(168, {});
  EXPECT_EQ(st.refreshed, (std::array<bool, 3>{false, false, false}));
}

TEST(Windows, ContainmentAtRefreshBoundaries) {
  std::mt19937_64 rng(7);
  tr::TrackingDicts d;
  for (std::int64_t clock = 0; clock <= 1200; clock += 6) {
    d.advance(clock, random_batch(rng, 4, clock - 5, clock));
    if (clock % 168 != 0) continue;
    const auto snap = d.snapshot();
    for (const auto& [k, s] : snap->daily.table.entries()) {
      const auto q = tr::key_query(k), doc = tr::key_doc(k);
      EXPECT_LE(s.impressions, impressions(snap->weekly, q, doc));
      EXPECT_LE(impressions(snap->weekly, q, doc), impressions(snap->monthly, q, doc));
    }
    for (const auto* w : {&snap->monthly, &snap->weekly, &snap->daily}) {
      for (const auto& [k, s] : w->table.entries()) EXPECT_LE(s.clicks, s.impressions);
    }
  }
}

TEST(Windows, OrderAndShardIndependent) {
  std::mt19937_64 rng(3);
  auto b = random_batch(rng, 200, 0, 30);
  tr::TrackingDicts a, c, j;
  a.advance(30, b);
  j.advance(30, b, 4);
  std::shuffle(b.begin(), b.end(), rng);
  c.advance(30, b);
  EXPECT_EQ(a.state_digest(), c.state_digest());
  EXPECT_EQ(a.state_digest(), j.state_digest());
}

TEST(StatsTable, MergeIsCommutativeAndAssociative) {
  std::mt19937_64 rng(5);
  const auto x = tr::aggregate(random_batch(rng, 40, 0, 0));
  const auto y = tr::aggregate(random_batch(rng, 40, 0, 0));
  const auto z = tr::aggregate(random_batch(rng, 40, 0, 0));
  auto xy = x;
  xy.merge(y);
  auto yx = y;
  yx.merge(x);
  EXPECT_EQ(xy, yx);
  auto left = xy;
  left.merge(z);
  auto yz = y;
  yz.merge(z);
  auto right = x;
  right.merge(yz);
  EXPECT_EQ(left, right);
  const auto batch = random_batch(rng, 100, 0, 0);
  EXPECT_EQ(tr::aggregate(batch, 1), tr::aggregate(batch, 3));
}

TEST(Snapshot, JsonRoundTrip) {
  std::mt19937_64 rng(9);
  tr::TrackingDicts d;
  d.advance(40, random_batch(rng, 30, 0, 40));
  const auto snap = *d.snapshot();
  EXPECT_EQ(tr::DictSnapshot::from_json(snap.to_json()), snap);
  EXPECT_THROW(tr::DictSnapshot::from_json("{}"), drrel::SchemaError);
}

TEST(Features, UnseenPairIsZeroAndRatesBounded) {
  std::mt19937_64 rng(11);
  tr::TrackingDicts d;
  d.advance(30, random_batch(rng, 300, 0, 30));
  const auto snap = d.snapshot();
  EXPECT_TRUE(tr::build_click_features(*snap, 99, 1).is_zero());
  for (const auto& [k, s] : snap->monthly.table.entries()) {
    const auto x = tr::build_click_features(*snap, tr::key_query(k), tr::key_doc(k));
    for (std::size_t w = 0; w < 3; ++w) {
      for (std::size_t f : {1u, 2u, 6u}) {
        EXPECT_GE(x.x[w * 7 + f], 0.0);
        EXPECT_LE(x.x[w * 7 + f], 1.0);
      }
    }
    for (double v : x.x) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_EQ(tr::feature_names().size(), 21u);
  EXPECT_EQ(tr::feature_names()[0], "monthly_log_impressions");
  EXPECT_EQ(tr::feature_names()[20], "daily_skip_rate");
}
