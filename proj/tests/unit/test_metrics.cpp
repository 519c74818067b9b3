#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "drrel/error.hpp"
#include "drrel/metrics.hpp"
#include "oracles.hpp"

namespace m = drrel::metrics;

namespace {

m::JudgedRanking ranking(m::QueryId q, std::vector<double> gains) {
  m::JudgedRanking r;
  r.query_id = q;
  r.gains = std::move(gains);
  for (std::size_t i = 0; i < r.gains.size(); ++i) {
    r.docs.push_back(static_cast<m::DocId>(i));
    r.relevance.push_back(0.5);
  }
  return r;
}

}  // namespace

TEST(Dcg, SpecExamples) {
  EXPECT_DOUBLE_EQ(m::dcg_at_k(std::vector<double>{3.0}, 1), 3.0);
  EXPECT_NEAR(m::dcg_at_k(std::vector<double>{3.0, 1.0}, 2), 3.63093, 1e-5);
  EXPECT_EQ(m::dcg_at_k(std::vector<double>{0, 0, 0}, 3), 0.0);
  EXPECT_THROW(m::dcg_at_k(std::vector<double>{1.0}, 0), drrel::DomainError);
}

TEST(Err, SpecExamples) {
  EXPECT_DOUBLE_EQ(m::err_at_k(std::vector<double>{0.5}, 1), 0.5);
  EXPECT_DOUBLE_EQ(m::err_at_k(std::vector<double>{0.5, 0.5}, 2), 0.625);
  for (double x : {0.0, 0.3, 1.0}) {
    for (std::size_t k : {1u, 2u, 5u}) EXPECT_DOUBLE_EQ(m::err_at_k(std::vector<double>{1.0, x, x}, k), 1.0);
  }
  EXPECT_THROW(m::err_at_k(std::vector<double>{1.0}, 0), drrel::DomainError);
}

TEST(Gains, GradeThresholds) {
  EXPECT_EQ(m::grade_from_relevance(0.0), 0);
  EXPECT_EQ(m::grade_from_relevance(0.2), 1);
  EXPECT_EQ(m::grade_from_relevance(0.79), 3);
  EXPECT_EQ(m::grade_from_relevance(1.0), 4);
  EXPECT_EQ(m::gain_from_relevance(1.0), 15.0);
  EXPECT_EQ(m::gain_from_relevance(0.1), 0.0);
  EXPECT_THROW(m::grade_from_relevance(1.5), drrel::DomainError);
}

TEST(Judge, AttachesCatalogGains) {
  drrel::click_sim::CatalogQuery q{4, 1.0, {{10, 0.9, 0}, {11, 0.1, 0}, {12, 0.5, 0}}};
  const std::vector<m::DocId> order{12, 10};
  const auto r = m::judge(q, order);
  EXPECT_EQ(r.gains, (std::vector<double>{3.0, 15.0}));
  EXPECT_EQ(r.relevance, (std::vector<double>{0.5, 0.9}));
  EXPECT_NO_THROW(r.validate());
  const std::vector<m::DocId> bad{99};
  EXPECT_THROW(m::judge(q, bad), drrel::DomainError);
}

TEST(Metrics, AgreeWithOracleAndBounds) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> g(7), r(7);
    for (auto& x : g) x = std::floor(u(rng) * 16.0);
    for (auto& x : r) x = u(rng);
    for (std::size_t k = 1; k <= 8; ++k) {
      EXPECT_NEAR(m::dcg_at_k(g, k), oracle::dcg(g, k), 1e-12);
      const double e = m::err_at_k(r, k);
      EXPECT_NEAR(e, oracle::err(r, k), 1e-12);
      EXPECT_GE(e, 0.0);
      EXPECT_LE(e, 1.0);
      EXPECT_GE(m::dcg_at_k(g, k), 0.0);
    }
  }
}

TEST(Metrics, BestPermutationIsSortedOrder) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 4);
    std::vector<double> g(n), r(n);
    for (auto& x : g) x = std::floor(u(rng) * 16.0);
    for (auto& x : r) x = u(rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best_dcg = 0.0, best_err = 0.0;
    do {
      std::vector<double> pg, pr;
      for (auto i : perm) {
        pg.push_back(g[i]);
        pr.push_back(r[i]);
      }
      best_dcg = std::max(best_dcg, oracle::dcg(pg, n));
      best_err = std::max(best_err, oracle::err(pr, n));
    } while (std::next_permutation(perm.begin(), perm.end()));
    auto sg = g, sr = r;
    std::sort(sg.rbegin(), sg.rend());
    std::sort(sr.rbegin(), sr.rend());
    EXPECT_NEAR(m::dcg_at_k(sg, n), best_dcg, 1e-12);
    EXPECT_NEAR(m::err_at_k(sr, n), best_err, 1e-12);
  }
}

TEST(Metrics, SwappingBetterDocUpNeverHurts) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pos(0, 5);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> g(6), r(6);
    for (auto& x : g) x = std::floor(u(rng) * 16.0);
    for (auto& x : r) x = u(rng);
    auto i = pos(rng), j = pos(rng);
    if (i > j) std::swap(i, j);
    for (std::size_t k = 1; k <= 6; ++k) {
      if (g[j] > g[i]) {
        auto s = g;
        std::swap(s[i], s[j]);
        EXPECT_GE(m::dcg_at_k(s, k), m::dcg_at_k(g, k) - 1e-12);
      }
      if (r[j] > r[i]) {
        auto s = r;
        std::swap(s[i], s[j]);
        EXPECT_GE(m::err_at_k(s, k), m::err_at_k(r, k) - 1e-12);
      }
    }
  }
}

TEST(Gsb, SpecExamples) {
  std::vector<m::JudgedRanking> a, b;
  for (m::QueryId q = 0; q < 10; ++q) {
    a.push_back(ranking(q, {3, 1, 0, 0}));
    b.push_back(ranking(q, {3, 1, 0, 0}));
  }
  EXPECT_EQ(m::simulated_gsb(a, b).delta(), 0.0);
  auto better = a;
  for (auto& r : better) r.gains[0] = 7;
  EXPECT_EQ(m::simulated_gsb(better, b).delta(), 1.0);
  auto mixed = a;
  for (m::QueryId q = 0; q < 3; ++q) mixed[q].gains[0] = 7;
  mixed[3].gains[0] = 0;
  const auto res = m::simulated_gsb(mixed, b);
  EXPECT_EQ(res.good, 3u);
  EXPECT_EQ(res.bad, 1u);
  EXPECT_EQ(res.same, 6u);
  EXPECT_DOUBLE_EQ(res.delta(), 0.2);
  EXPECT_EQ(m::GsbResult{}.delta(), 0.0);
}

TEST(Gsb, AntisymmetricBoundedAndPaired) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<m::JudgedRanking> a, b;
    for (m::QueryId q = 0; q < 20; ++q) {
      std::vector<double> ga(5), gb(5);
      for (auto& x : ga) x = std::floor(u(rng) * 4.0);
      for (auto& x : gb) x = std::floor(u(rng) * 4.0);
      a.push_back(ranking(q, ga));
      b.push_back(ranking(19 - q, gb));
    }
    const double ab = m::simulated_gsb(a, b).delta(), ba = m::simulated_gsb(b, a).delta();
    EXPECT_DOUBLE_EQ(ab, -ba);
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
  }
  std::vector<m::JudgedRanking> a{ranking(0, {1}), ranking(1, {1})}, b{ranking(0, {1}), ranking(2, {1})};
  EXPECT_THROW(m::simulated_gsb(a, b), drrel::ConfigError);
  EXPECT_THROW(m::simulated_gsb(a, std::vector<m::JudgedRanking>{ranking(0, {1})}), drrel::ConfigError);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> s(0, 9), y(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> sc(60);
    std::vector<int> lab(60);
    for (std::size_t i = 0; i < sc.size(); ++i) {
      sc[i] = s(rng);  // many ties
      lab[i] = y(rng);
    }
    lab[0] = 1;
    lab[1] = 0;
    EXPECT_NEAR(m::roc_auc(sc, lab), oracle::pairwise_auc(sc, lab), 1e-12);
  }
  EXPECT_THROW(m::roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), drrel::DegenerateDataError);
  EXPECT_THROW(m::roc_auc(std::vector<double>{1}, std::vector<int>{1, 0}), drrel::AlignmentError);
}

TEST(Buckets, ClassifyAndValidate) {
  const m::BucketSpec spec;
  EXPECT_EQ(spec.classify(1000.0), m::Bucket::high);
  EXPECT_EQ(spec.classify(999.0), m::Bucket::mid);
  EXPECT_EQ(spec.classify(10.0), m::Bucket::mid);
  EXPECT_EQ(spec.classify(9.9), m::Bucket::tail);
  EXPECT_THROW((m::BucketSpec{5.0, 5.0}.validate()), drrel::ConfigError);
}

TEST(Report, RelativeImprovementAndEmptyBuckets) {
  std::vector<m::QueryMetric> rows{{"base", "DCG", 4, 1, 1.0}, {"sys", "DCG", 4, 1, 1.1},
                                   {"base", "DCG", 4, 2, 2.0}, {"sys", "DCG", 4, 2, 2.0}};
  const std::map<m::QueryId, double> freq{{1, 5000.0}, {2, 5.0}};
  const auto rep = m::bucketed_report(rows, freq, {}, "base");
  const auto* high = m::find_row(rep, "sys", m::Bucket::high, "DCG", 4);
  ASSERT_NE(high, nullptr);
  EXPECT_NEAR(*high->relative_improvement, 10.0, 1e-12);
  EXPECT_EQ(high->n_queries, 1u);
  EXPECT_NEAR(*m::find_row(rep, "sys", m::Bucket::tail, "DCG", 4)->relative_improvement, 0.0, 1e-12);
  const auto* mid = m::find_row(rep, "sys", m::Bucket::mid, "DCG", 4);
  ASSERT_NE(mid, nullptr);
  EXPECT_FALSE(mid->value.has_value());
  EXPECT_EQ(mid->n_queries, 0u);
  const auto csv = m::report_to_csv(rep);
  EXPECT_EQ(csv.rfind("system,bucket,metric,K,value,relative_improvement,n_queries\n", 0), 0u);
  EXPECT_NE(csv.find("sys,Mid,DCG,4,N/A,N/A,0"), std::string::npos);
  EXPECT_THROW(m::bucketed_report(rows, {{1, 5.0}}, {}, "base"), drrel::ConfigError);
  EXPECT_THROW(m::bucketed_report(rows, freq, {}, "nope"), drrel::ConfigError);
}

TEST(Report, IdenticalSystemsGiveZero) {
  std::vector<m::QueryMetric> rows;
  std::map<m::QueryId, double> freq;
  for (m::QueryId q = 0; q < 10; ++q) {
    freq[q] = 50.0;
    for (const char* s : {"a", "b"}) rows.push_back({s, "ERR", 10, q, 0.1 * q + 0.05});
  }
  for (const auto& r : m::bucketed_report(rows, freq, {}, "a")) {
    if (r.value) {
      EXPECT_EQ(*r.relative_improvement, 0.0);
    }
  }
}
