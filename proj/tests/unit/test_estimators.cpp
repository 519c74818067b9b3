#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "drrel/click_sim.hpp"
#include "drrel/error.hpp"
#include "drrel/estimators.hpp"
#include "drrel/rng.hpp"
#include "unit/oracles.hpp"

namespace cs = drrel::click_sim;
namespace est = drrel::estimators;
using est::PositionClick;

namespace {

oracle::Pbm to_oracle(const cs::ClickModelParams& p) {
  return {p.theta_vector(), p.eps_plus_vector(), p.eps_minus_vector()};
}

std::vector<PositionClick> as_data(const std::vector<int>& pos, const std::vector<int>& c) {
  std::vector<PositionClick> d;
  for (std::size_t i = 0; i < pos.size(); ++i) d.push_back({pos[i], c[i] != 0});
  return d;
}

cs::ClickModelParams random_params(drrel::Rng& rng, int k) {
  std::vector<double> th, ep, em;
  double t = 1.0;
  for (int i = 0; i < k; ++i) {
    th.push_back(t);
    t *= 0.5 + 0.5 * drrel::uniform01(rng);
    ep.push_back(0.7 + 0.3 * drrel::uniform01(rng));
    em.push_back(0.3 * drrel::uniform01(rng));
  }
  return {th, ep, em};
}

std::vector<int> random_positions(drrel::Rng& rng, int k, std::size_t d) {
  std::vector<int> pos;
  for (std::size_t i = 0; i < d; ++i) pos.push_back(1 + static_cast<int>(rng() % static_cast<unsigned>(k)));
  return pos;
}

est::EstimatorParams single(double a, double b) {
  est::EstimatorParams p;
  p.alpha_hat = {a};
  p.beta_hat = {b};
  p.theta_hat = {1.0};
  p.eps_plus_hat = {a + b};
  p.eps_minus_hat = {b};
  return p;
}

}  // namespace

TEST(NaiveCtr, Examples) {
  const std::vector<PositionClick> all{{1, true}, {2, true}};
  EXPECT_DOUBLE_EQ(est::naive_ctr(all).value, 1.0);
  const std::vector<PositionClick> half{{1, true}, {2, false}};
  EXPECT_DOUBLE_EQ(est::naive_ctr(half).value, 0.5);
  EXPECT_THROW(est::naive_ctr({}), drrel::EmptyDataError);
}

TEST(NaiveCtr, BiasedUnderPositionBias) {
  const auto p = cs::ClickModelParams::default_web(2);
  const std::vector<int> pos{2};
  const auto m = est::enumerate_moments([](auto d) { return est::naive_ctr(d).value; }, p, 0.8, pos);
  EXPECT_NEAR(m.mean, p.alpha(2) * 0.8 + p.beta(2), 1e-14);
  EXPECT_GT(std::abs(m.mean - 0.8), 0.1);
}

TEST(Ipw, Examples) {
  const std::vector<double> th1{1.0};
  EXPECT_DOUBLE_EQ(est::ipw_estimate(std::vector<PositionClick>{{1, true}}, th1).value, 1.0);
  const std::vector<double> th2{1.0, 0.5};
  EXPECT_DOUBLE_EQ(est::ipw_estimate(std::vector<PositionClick>{{2, true}, {2, false}}, th2).value, 1.0);
  const std::vector<double> zero{1.0, 0.0};
  EXPECT_THROW(est::ipw_estimate(std::vector<PositionClick>{{2, true}}, zero), drrel::PropensityError);
}

TEST(Ipw, UnbiasedUnderPurePbmButNotWithTrustBias) {
  const cs::ClickModelParams pbm({1.0, 0.6, 0.3}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0});
  const std::vector<int> pos{1, 2, 3, 3};
  auto ipw = [&](const cs::ClickModelParams& p) {
    return [th = p.theta_vector()](auto d) { return est::ipw_estimate(d, th).value; };
  };
  EXPECT_NEAR(est::enumerate_moments(ipw(pbm), pbm, 0.4, pos).mean, 0.4, 1e-14);
  const cs::ClickModelParams trust({1.0, 0.6, 0.3}, {0.9, 0.9, 0.9}, {0.1, 0.1, 0.1});
  EXPECT_GT(std::abs(est::enumerate_moments(ipw(trust), trust, 0.4, pos).mean - 0.4), 1e-3);
}

TEST(Affine, Examples) {
  const auto p = single(0.4, 0.05);
  EXPECT_NEAR(est::affine_estimate(std::vector<PositionClick>{{1, true}}, p).value, 2.375, 1e-14);
  EXPECT_NEAR(est::affine_estimate(std::vector<PositionClick>{{1, false}}, p).value, -0.125, 1e-14);
  EXPECT_THROW(est::affine_estimate({}, p), drrel::EmptyDataError);
  EXPECT_THROW(est::affine_estimate(std::vector<PositionClick>{{2, true}}, p), drrel::DomainError);
}

TEST(Dr, Examples) {
  const auto p = single(0.4, 0.05);
  EXPECT_DOUBLE_EQ(est::dr_estimate({}, p, 0.37, {}).value, 0.37);
  const std::vector<PositionClick> d{{1, true}, {1, false}};
  const double aff = est::affine_estimate(d, p).value;
  // e (eps+ - eps-) = alpha_hat: the imputation coefficient vanishes.
  const std::vector<double> e_full{1.0, 1.0};
  EXPECT_NEAR(est::dr_estimate(d, p, 0.9, e_full).value, aff, 1e-14);
  const std::vector<double> e_zero{0.0, 0.0};
  EXPECT_NEAR(est::dr_estimate(d, p, 0.9, e_zero).value, 0.9 + aff, 1e-14);
  const std::vector<double> short_e{0.5};
  EXPECT_THROW(est::dr_estimate(d, p, 0.9, short_e), drrel::AlignmentError);
}

TEST(Clamp, OnlyTheAdapterClamps) {
  const auto p = single(0.4, 0.05);
  const auto r = est::affine_estimate(std::vector<PositionClick>{{1, true}}, p);
  EXPECT_GT(r.value, 1.0);
  EXPECT_DOUBLE_EQ(est::clamp_unit(r), 1.0);
}

TEST(AffineBias, WorkedExamples) {
  const cs::ClickModelParams truth({0.5}, {0.9}, {0.1});
  const std::vector<int> pos{1};
  const auto matched = est::EstimatorParams::from_truth(truth);
  EXPECT_NEAR(est::affine_bias_variance(pos, truth, matched, 0.6).bias, 0.0, 1e-15);
  est::Misspecification m;
  m.alpha = 0.8;
  const auto mis = est::EstimatorParams::from_truth(truth, m);
  for (double g : {0.1, 0.5, 0.9}) {
    EXPECT_NEAR(est::affine_bias_variance(pos, truth, mis, g).bias, 0.25 * g, 1e-14);
  }
}

TEST(AffineBias, SinglePositionVarianceMatchesTwoOutcomeOracle) {
  const cs::ClickModelParams truth({0.6}, {0.85}, {0.15});
  est::Misspecification m;
  m.alpha = 1.1;
  m.beta = 0.7;
  const auto e = est::EstimatorParams::from_truth(truth, m);
  const auto o = to_oracle(truth);
  const std::vector<int> pos{1};
  for (double g : {0.2, 0.7}) {
    const auto ref = oracle::enumerate(o, g, pos, [&](const std::vector<int>& c) {
      return (c[0] - e.beta(1)) / e.alpha(1);
    });
    const auto bv = est::affine_bias_variance(pos, truth, e, g);
    EXPECT_NEAR(bv.bias, ref.mean - g, 1e-14);
    EXPECT_NEAR(bv.variance, ref.var, 1e-14);
  }
}

// Property: enumeration bias equals the closed form for random mixed misspecification.
TEST(AffineBias, FormulaMatchesIndependentEnumeration) {
  auto rng = drrel::make_rng(2024, 1);
  for (int t = 0; t < 40; ++t) {
    const int k = 2 + static_cast<int>(rng() % 9);
    const auto truth = random_params(rng, k);
    double top = 0.0;
    for (int j = 1; j <= k; ++j) top = std::max(top, truth.alpha(j));
    const double alpha_mult = 0.7 + (std::min(1.3, 1.0 / top) - 0.7) * drrel::uniform01(rng);
    est::Misspecification m{alpha_mult, 0.7 + 0.6 * drrel::uniform01(rng), 1.0, 1.0, 1.0};
    const auto e = est::EstimatorParams::from_truth(truth, m);
    const auto pos = random_positions(rng, k, 1 + rng() % 10);
    const double g = drrel::uniform01(rng);
    const auto ref = oracle::enumerate(to_oracle(truth), g, pos, [&](const std::vector<int>& c) {
      return est::affine_estimate(as_data(pos, c), e).value;
    });
    EXPECT_NEAR(est::affine_bias_variance(pos, truth, e, g).bias, ref.mean - g, 1e-10);
    EXPECT_NEAR(est::affine_expectation(pos, truth, e, g), ref.mean, 1e-12);
  }
}

TEST(AffineVariance, ScalesAsOneOverD) {
  const auto truth = cs::ClickModelParams::default_web(5);
  const auto e = est::EstimatorParams::from_truth(truth);
  auto aff = [&](auto d) { return est::affine_estimate(d, e).value; };
  for (int k : {1, 3, 5}) {
    const std::vector<int> p2(2, k), p4(4, k);
    const double v2 = est::enumerate_moments(aff, truth, 0.35, p2).variance;
    const double v4 = est::enumerate_moments(aff, truth, 0.35, p4).variance;
    EXPECT_NEAR(v4, v2 / 2.0, 1e-10);
  }
}

TEST(DrBias, BothBranchesVanish) {
  auto rng = drrel::make_rng(5, 2);
  for (int t = 0; t < 30; ++t) {
    const int k = 2 + static_cast<int>(rng() % 9);
    const auto truth = random_params(rng, k);
    const auto pos = random_positions(rng, k, 1 + rng() % 12);
    const double g = 0.1 + 0.8 * drrel::uniform01(rng);
    const auto o = to_oracle(truth);

    // Matched alpha/beta, constant e with e (eps+ - eps-) = alpha_hat, imputation off by 0.3.
    const auto matched = est::EstimatorParams::from_truth(truth);
    std::vector<est::ExamIndicator> ea;
    for (int p : pos) ea.push_back(est::ExamIndicator::constant(matched.theta(p)));
    const double wrong_imp = g > 0.5 ? g - 0.3 : g + 0.3;
    auto dr_a = [&](const std::vector<int>& c) {
      std::vector<double> e;
      for (std::size_t i = 0; i < c.size(); ++i) e.push_back(ea[i].at(c[i] != 0));
      return est::dr_estimate(as_data(pos, c), matched, wrong_imp, e).value;
    };
    EXPECT_NEAR(oracle::enumerate(o, g, pos, dr_a).mean - g, 0.0, 1e-12);

    // Correct imputation, alpha_hat = 0.8 alpha, beta exact, oracle posterior e.
    est::Misspecification m;
    m.alpha = 0.8;
    const auto mis = est::EstimatorParams::from_truth(truth, m);
    std::vector<est::ExamIndicator> eb;
    for (int p : pos) eb.push_back(est::exam_posterior(truth, p, g));
    auto dr_b = [&](const std::vector<int>& c) {
      std::vector<double> e;
      for (std::size_t i = 0; i < c.size(); ++i) e.push_back(eb[i].at(c[i] != 0));
      return est::dr_estimate(as_data(pos, c), mis, g, e).value;
    };
    EXPECT_NEAR(oracle::enumerate(o, g, pos, dr_b).mean - g, 0.0, 1e-12);
  }
}

TEST(DrBias, FormulaMatchesEnumerationWithClickDependentE) {
  auto rng = drrel::make_rng(8, 3);
  for (int t = 0; t < 30; ++t) {
    const int k = 2 + static_cast<int>(rng() % 9);
    const auto truth = random_params(rng, k);
    est::Misspecification m{0.8 + 0.4 * drrel::uniform01(rng), 0.8 + 0.4 * drrel::uniform01(rng), 1.0,
                            0.9 + 0.1 * drrel::uniform01(rng), 0.9 + 0.2 * drrel::uniform01(rng)};
    const auto e = est::EstimatorParams::from_truth(truth, m);
    const auto pos = random_positions(rng, k, 1 + rng() % 8);
    const double g = drrel::uniform01(rng);
    const double imp = drrel::uniform01(rng);
    std::vector<est::ExamIndicator> ind;
    for (int p : pos) ind.push_back(est::exam_posterior(truth, p, g));
    const auto ref = oracle::enumerate(to_oracle(truth), g, pos, [&](const std::vector<int>& c) {
      std::vector<double> eh;
      for (std::size_t i = 0; i < c.size(); ++i) eh.push_back(ind[i].at(c[i] != 0));
      return est::dr_estimate(as_data(pos, c), e, imp, eh).value;
    });
    EXPECT_NEAR(est::dr_bias_variance(pos, truth, e, g, imp, ind).bias, ref.mean - g, 1e-10);
  }
}

TEST(ExamPosterior, MatchesBayesRule) {
  const auto truth = cs::ClickModelParams::default_web(10);
  const auto o = to_oracle(truth);
  for (int k = 1; k <= 10; ++k) {
    for (double g : {0.0, 0.4, 1.0}) {
      const auto e = est::exam_posterior(truth, k, g);
      EXPECT_DOUBLE_EQ(e.if_clicked, 1.0);
      EXPECT_NEAR(e.if_skipped, oracle::posterior(o, k, g, 0), 1e-15);
    }
  }
}

TEST(DrDelta, NegativeForUnclickedSingleInteraction) {
  const auto truth = cs::ClickModelParams::default_web(10);
  const auto e = est::EstimatorParams::from_truth(truth);
  for (int k = 1; k <= 10; ++k) {
    for (double g : {0.2, 0.5, 0.8}) {
      const double imp = std::min(1.0, g + 0.05);
      const double post = est::exam_posterior(truth, k, g).if_skipped;
      const std::vector<int> pos{k};
      const std::vector<est::ExamIndicator> ind{est::exam_posterior(truth, k, g)};
      const double g_dr = est::dr_expectation(pos, truth, e, g, imp, ind);
      EXPECT_LT(est::dr_delta(k, false, e, imp, post, g_dr), 0.0) << "k=" << k << " gamma=" << g;
    }
  }
}

TEST(ThetaEstimation, RatioOfCtrs) {
  cs::QueryCatalog cat;
  cs::CatalogQuery q{0, 1.0, {}};
  for (cs::DocId d = 0; d < 2; ++d) q.docs.push_back({d, 0.5, d + 1u});
  cat.queries.push_back(q);
  const cs::ClickModelParams p({1.0, 0.5}, {1.0, 1.0}, {0.0, 0.0});
  cs::SimulationConfig sc;
  sc.n_sessions = 200000;
  sc.jobs = 4;
  const auto logs = cs::logs_only(cs::simulate_sessions(cat, p, cs::shuffled_policy(), sc, 3));
  const auto th = est::estimate_theta_from_randomized_logs(logs, 2);
  // Delta-method SE of a ratio of two CTRs, each ~ Bernoulli over n sessions.
  const double n = static_cast<double>(logs.size());
  const double se = std::sqrt(0.25 * 0.75 / n + 0.25 * 0.25 * 0.5 / n) / 0.5;
  EXPECT_DOUBLE_EQ(th[0], 1.0);
  EXPECT_NEAR(th[1], 0.5, 3.0 * se);
}

TEST(ThetaEstimation, NoClicksIsCoverageError) {
  cs::SessionLog s;
  s.query_id = 0;
  s.docs = {0};
  s.interactions.push_back({0, 0, 1, false, 0.3, 0.0, 0});
  const std::vector<cs::SessionLog> logs{s};
  EXPECT_THROW(est::estimate_theta_from_randomized_logs(logs, 1), drrel::CoverageError);
}

TEST(MonteCarlo, ConstantEstimatorHasNoSpread) {
  const auto truth = cs::ClickModelParams::default_web(3);
  const std::vector<int> pos{1, 2, 3};
  const auto r = est::mc_bias_variance([](auto) { return 0.3; }, truth, 0.3, pos, 500, 1);
  EXPECT_DOUBLE_EQ(r.empirical_bias, 0.0);
  EXPECT_DOUBLE_EQ(r.empirical_variance, 0.0);
  ASSERT_TRUE(r.exact_bias.has_value());
  EXPECT_NEAR(*r.exact_bias, 0.0, 1e-15);
}

TEST(MonteCarlo, MatchedAffineExactBiasAndSeedStability) {
  const auto truth = cs::ClickModelParams::default_web(3);
  const auto e = est::EstimatorParams::from_truth(truth);
  const std::vector<int> pos{1, 2, 3};
  auto aff = [&](auto d) { return est::affine_estimate(d, e).value; };
  const auto r = est::mc_bias_variance(aff, truth, 0.6, pos, 2000, 11, 4);
  EXPECT_NEAR(*r.exact_bias, 0.0, 1e-14);
  const auto r1 = est::mc_bias_variance(aff, truth, 0.6, pos, 2000, 11, 1);
  EXPECT_EQ(r.empirical_bias, r1.empirical_bias);
}

// Property: MC mean within 3 SE of the enumeration mean in >= 99% of seeded runs.
TEST(MonteCarlo, AgreesWithEnumerationAcrossSeeds) {
  auto rng = drrel::make_rng(31, 4);
  const auto truth = cs::ClickModelParams::default_web(10);
  int ok = 0;
  constexpr int kRuns = 200;
  for (int s = 0; s < kRuns; ++s) {
    const auto pos = random_positions(rng, 10, 1 + rng() % 6);
    const double g = drrel::uniform01(rng);
    est::Misspecification m{0.9, 1.1, 1.0, 1.0, 1.0};
    const auto e = est::EstimatorParams::from_truth(truth, m);
    const auto r = est::mc_bias_variance([&](auto d) { return est::affine_estimate(d, e).value; }, truth, g, pos,
                                         1000, 1000 + s);
    ok += std::abs(r.empirical_bias - *r.exact_bias) <= 3.0 * r.mc_standard_error ? 1 : 0;
  }
  EXPECT_GE(ok, static_cast<int>(0.99 * kRuns));
}

TEST(RunningMoments, MergeEqualsSequential) {
  est::RunningMoments a, b, all;
  for (int i = 0; i < 100; ++i) {
    const double x = std::sin(i * 0.37);
    (i < 40 ? a : b).add(x);
    all.add(x);
  }
  a.merge(b);
  EXPECT_EQ(a.count(), all.count());
  EXPECT_NEAR(a.mean(), all.mean(), 1e-14);
  EXPECT_NEAR(a.sample_variance(), all.sample_variance(), 1e-13);
}
