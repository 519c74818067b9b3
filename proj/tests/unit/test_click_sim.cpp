#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "drrel/click_sim.hpp"
#include "drrel/error.hpp"
#include "drrel/tracking.hpp"

namespace cs = drrel::click_sim;

namespace {

cs::QueryCatalog single_pair(double gamma) {
  cs::QueryCatalog c;
  c.queries.push_back({0, 1.0, {{0, gamma, 11}}});
  return c;
}

double three_se(double p, double n) { return 3.0 * std::sqrt(p * (1.0 - p) / n); }

}  // namespace

TEST(ClickModel, RejectsInvalidParameters) {
  EXPECT_THROW(cs::ClickModelParams({1.0}, {0.5}, {0.6}), drrel::ConfigError);
  EXPECT_THROW(cs::ClickModelParams({1.2}, {0.9}, {0.1}), drrel::ConfigError);
  EXPECT_THROW(cs::ClickModelParams({1.0, 0.5}, {0.9}, {0.1}), drrel::ConfigError);
  EXPECT_THROW(cs::ClickModelParams({0.0}, {0.9}, {0.1}), drrel::ConfigError);
}

TEST(ClickModel, DerivedParametersAndPositions) {
  const auto p = cs::ClickModelParams::default_web(10);
  for (int k = 1; k <= 10; ++k) {
    EXPECT_NEAR(p.alpha(k), p.theta(k) * (p.eps_plus(k) - p.eps_minus(k)), 1e-15);
    EXPECT_NEAR(p.beta(k), p.theta(k) * p.eps_minus(k), 1e-15);
    EXPECT_GT(p.alpha(k), 0.0);
    EXPECT_LE(p.alpha(k) + p.beta(k), 1.0);
  }
  EXPECT_THROW(p.theta(0), drrel::DomainError);
  EXPECT_THROW(p.theta(11), drrel::DomainError);
}

TEST(ClickProbability, SpecExamples) {
  const cs::ClickModelParams p({0.5}, {0.9}, {0.1});
  EXPECT_NEAR(p.alpha(1), 0.40, 1e-15);
  EXPECT_NEAR(p.beta(1), 0.05, 1e-15);
  EXPECT_NEAR(cs::click_probability(p, 1, 0.5), 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(cs::click_probability(p, 1, 0.0), p.beta(1));

  const cs::ClickModelParams pbm({0.7}, {1.0}, {0.0});
  for (double g : {0.0, 0.3, 1.0}) EXPECT_NEAR(cs::click_probability(pbm, 1, g), 0.7 * g, 1e-15);
  EXPECT_THROW(cs::click_probability(p, 1, 1.5), drrel::DomainError);
}

TEST(ClickProbability, AffineAndNondecreasingInGamma) {
  const auto p = cs::ClickModelParams::default_web(10);
  for (int k = 1; k <= 10; ++k) {
    double prev = -1.0;
    for (int i = 0; i <= 20; ++i) {
      const double g = i / 20.0;
      const double v = cs::click_probability(p, k, g);
      EXPECT_GE(v, prev);
      EXPECT_NEAR(v - cs::click_probability(p, k, 0.0), p.alpha(k) * g, 1e-14);
      prev = v;
    }
  }
}

TEST(Catalog, ZipfWeightsAndPointPrior) {
  cs::CatalogConfig cfg{4, 3, 1.0, cs::RelevancePrior::point(0.7)};
  const auto cat = cs::generate_catalog(cfg, 1);
  ASSERT_EQ(cat.queries.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(cat.queries[i].weight / cat.queries[0].weight, 1.0 / static_cast<double>(i + 1), 1e-12);
    for (const auto& d : cat.queries[i].docs) EXPECT_DOUBLE_EQ(d.relevance, 0.7);
  }
  EXPECT_NO_THROW(cat.validate());
}

TEST(Catalog, HeavyHead) {
  const auto cat = cs::generate_catalog({1000, 2, 1.0, {}}, 3);
  double total = 0.0, head = 0.0;
  for (std::size_t i = 0; i < cat.queries.size(); ++i) {
    total += cat.queries[i].weight;
    if (i < 100) head += cat.queries[i].weight;
  }
  EXPECT_GT(head / total, 0.6);
}

TEST(Catalog, RejectsZeroExponentAndDuplicates) {
  EXPECT_THROW(cs::generate_catalog({10, 2, 0.0, {}}, 1), drrel::ConfigError);
  cs::QueryCatalog c;
  c.queries.push_back({0, 1.0, {{0, 0.5, 1}, {0, 0.5, 2}}});
  EXPECT_THROW(c.validate(), drrel::ConfigError);
}

TEST(Simulate, ZeroSessionsIsEmpty) {
  const auto cat = single_pair(0.5);
  cs::SimulationConfig sc;
  EXPECT_TRUE(cs::simulate_sessions(cat, cs::ClickModelParams::default_web(1), cs::identity_policy(), sc, 1).empty());
}

TEST(Simulate, CertainClick) {
  const auto cat = single_pair(1.0);
  const cs::ClickModelParams p({1.0}, {1.0}, {0.0});
  cs::SimulationConfig sc;
  sc.n_sessions = 500;
  for (const auto& s : cs::simulate_sessions(cat, p, cs::identity_policy(), sc, 2)) {
    ASSERT_EQ(s.log.interactions.size(), 1u);
    EXPECT_TRUE(s.log.interactions[0].clicked);
    EXPECT_GT(s.log.interactions[0].display_time_s, 0.0);
  }
}

TEST(Simulate, EmpiricalCtrMatchesClickModel) {
  cs::QueryCatalog cat;
  cat.queries.push_back({0, 1.0, {{0, 0.5, 1}, {1, 0.5, 2}}});
  const cs::ClickModelParams p({1.0, 0.5}, {0.9, 0.9}, {0.1, 0.1});
  cs::SimulationConfig sc;
  sc.n_sessions = 100000;
  sc.jobs = 4;
  const auto sims = cs::simulate_sessions(cat, p, cs::identity_policy(), sc, 5);
  double c1 = 0, c2 = 0;
  for (const auto& s : sims) {
    c1 += s.log.interactions[0].clicked;
    c2 += s.log.interactions[1].clicked;
  }
  const double n = static_cast<double>(sims.size());
  EXPECT_NEAR(c1 / n, 0.50, three_se(0.50, n));
  EXPECT_NEAR(c2 / n, 0.25, three_se(0.25, n));
}

TEST(Simulate, DeterministicAndJobInvariant) {
  const auto cat = cs::generate_catalog({50, 10, 1.0, {}}, 9);
  const auto p = cs::ClickModelParams::default_web(10);
  cs::SimulationConfig sc;
  sc.n_sessions = 3000;
  sc.chunk_size = 256;
  sc.span_hours = 48;
  const auto a = cs::logs_only(cs::simulate_sessions(cat, p, cs::noisy_relevance_policy(0.3), sc, 4));
  sc.jobs = 3;
  const auto b = cs::logs_only(cs::simulate_sessions(cat, p, cs::noisy_relevance_policy(0.3), sc, 4));
  EXPECT_EQ(drrel::tracking::serialize_click_log(a), drrel::tracking::serialize_click_log(b));
}

TEST(Simulate, SessionInvariants) {
  const auto cat = cs::generate_catalog({30, 10, 1.0, {}}, 2);
  cs::SimulationConfig sc;
  sc.n_sessions = 2000;
  sc.span_hours = 100;
  sc.abandon_after_click = 0.4;
  const auto sims = cs::simulate_sessions(cat, cs::ClickModelParams::default_web(10), cs::shuffled_policy(), sc, 8);
  std::int64_t prev_ts = 0;
  double long_exam = 0, n_exam = 0, long_unexam = 0, n_unexam = 0;
  for (const auto& s : sims) {
    EXPECT_NO_THROW(s.log.validate());
    EXPECT_GE(s.log.timestamp(), prev_ts);
    prev_ts = s.log.timestamp();
    for (std::size_t i = 0; i < s.log.interactions.size(); ++i) {
      const auto& it = s.log.interactions[i];
      EXPECT_EQ(it.position, static_cast<int>(i) + 1);
      if (it.clicked) {
        EXPECT_TRUE(s.examined[i]);
        EXPECT_GT(it.display_time_s, 0.0);
      } else {
        EXPECT_EQ(it.dwell_time_s, 0.0);
      }
      (s.examined[i] ? n_exam : n_unexam) += 1;
      if (it.display_time_s > 5.0) (s.examined[i] ? long_exam : long_unexam) += 1;
    }
  }
  EXPECT_GT(long_exam / n_exam, long_unexam / n_unexam);
}

TEST(Randomization, DegenerateClicks) {
  cs::RandomizationConfig rc;
  rc.n = 2000;
  const cs::ClickModelParams sure({0.3}, {1.0}, {0.0});
  for (const auto& r : cs::generate_randomization_data(single_pair(1.0), sure, rc, 1)) EXPECT_TRUE(r.clicked);
  for (const auto& r : cs::generate_randomization_data(single_pair(0.0), sure, rc, 1)) EXPECT_FALSE(r.clicked);
}

TEST(Randomization, BernoulliMean) {
  cs::RandomizationConfig rc;
  rc.n = 100000;
  const cs::ClickModelParams p({0.4}, {0.9}, {0.1});
  const auto recs = cs::generate_randomization_data(single_pair(0.5), p, rc, 3);
  double c = 0;
  for (const auto& r : recs) c += r.clicked;
  EXPECT_NEAR(c / static_cast<double>(recs.size()), 0.5, three_se(0.5, static_cast<double>(recs.size())));
}

// Property: empirical click rate within 3 SE in >= 99% of seeded trials.
TEST(ClickProbability, EmpiricalRateConvergesAcrossSeeds) {
  const auto p = cs::ClickModelParams::default_web(10);
  int within = 0;
  constexpr int kTrials = 300;
  constexpr std::size_t kDraws = 4000;
  for (int t = 0; t < kTrials; ++t) {
    auto rng = drrel::make_rng(t, 77);
    const int k = 1 + static_cast<int>(rng() % 10);
    const double g = drrel::uniform01(rng);
    const double pr = cs::click_probability(p, k, g);
    double hits = 0;
    for (std::size_t i = 0; i < kDraws; ++i) hits += drrel::bernoulli(rng, pr);
    within += std::abs(hits / kDraws - pr) <= three_se(pr, kDraws) ? 1 : 0;
  }
  EXPECT_GE(within, static_cast<int>(0.99 * kTrials));
}
