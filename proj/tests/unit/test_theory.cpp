#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "drrel/theory.hpp"
#include "oracles.hpp"

namespace th = drrel::theory;

namespace {

oracle::Pbm pbm(const drrel::click_sim::ClickModelParams& p) {
  return {p.theta_vector(), p.eps_plus_vector(), p.eps_minus_vector()};
}

th::TheoryConfig small() {
  th::TheoryConfig c;
  c.n_configs = 6;
  c.replications = 400;
  c.mc_seeds = 20;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(RandomGrid, RangesAndDeterminism) {
  const auto a = th::random_grid(200, 3, true);
  const auto b = th::random_grid(200, 3, true);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& g = a[i];
    const int k = g.truth.num_positions();
    EXPECT_GE(k, 2);
    EXPECT_LE(k, 10);
    EXPECT_GE(g.positions.size(), 1u);
    EXPECT_LE(g.positions.size(), 12u);
    for (int p : g.positions) EXPECT_TRUE(p >= 1 && p <= k);
    EXPECT_TRUE(g.gamma >= 0.05 && g.gamma <= 0.95);
    for (int p = 1; p <= k; ++p) {
      const double ra = g.est.alpha(p) / g.truth.alpha(p);
      EXPECT_TRUE(ra >= 0.7 - 1e-12 && ra <= 1.3 + 1e-12) << ra;
      EXPECT_EQ(g.est.theta(p), g.truth.theta(p));
    }
    EXPECT_EQ(g.positions, b[i].positions);
    EXPECT_EQ(g.gamma, b[i].gamma);
  }
  for (const auto& g : th::random_grid(20, 3, false)) {
    for (int p = 1; p <= g.truth.num_positions(); ++p) EXPECT_NEAR(g.est.alpha(p), g.truth.alpha(p), 1e-15);
  }
}

TEST(VerifyTheory, SmallRunPassesEveryCheck) {
  const auto rep = th::verify_theory(small());
  std::set<std::string> names;
  for (const auto& c : rep.checks) {
    names.insert(c.name);
    EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  }
  EXPECT_EQ(names, (std::set<std::string>{"affine_bias_formula", "dr_bias_formula", "affine_matched_exact",
                                          "affine_matched_mc", "dr_branch_a_exact", "dr_branch_b_exact",
                                          "dr_variance_below_affine"}));
  EXPECT_TRUE(rep.all_passed());
}

TEST(VerifyTheory, MixedAffineRowsMatchHandEnumeration) {
  const auto cfg = small();
  const auto rep = th::verify_theory(cfg);
  std::map<int, const th::TheoryRow*> rows;
  for (const auto& r : rep.rows) {
    if (r.scenario == "mixed" && r.estimator == "affine") rows[r.config_id] = &r;
  }
  const auto grid = th::random_grid(cfg.n_configs, cfg.seed, true);
  ASSERT_EQ(rows.size(), grid.size());
  for (const auto& g : grid) {
    const auto m = oracle::enumerate(pbm(g.truth), g.gamma, g.positions, [&](const std::vector<int>& c) {
      double s = 0.0;
      for (std::size_t i = 0; i < c.size(); ++i) s += (c[i] - g.est.beta(g.positions[i])) / g.est.alpha(g.positions[i]);
      return s / static_cast<double>(c.size());
    });
    EXPECT_NEAR(rows[g.id]->analytic_bias, m.mean - g.gamma, 1e-10);
    // the closed-form variance is the per-interaction spread; it is the estimator variance only for D = 1
    if (g.positions.size() == 1) {
      EXPECT_NEAR(rows[g.id]->analytic_variance, m.var, 1e-10);
    }
  }
}

TEST(VerifyTheory, DeterministicCsv) {
  const auto a = th::verify_theory(small());
  const auto b = th::verify_theory(small());
  EXPECT_EQ(th::rows_to_csv(a.rows), th::rows_to_csv(b.rows));
  EXPECT_EQ(th::checks_to_csv(a.checks), th::checks_to_csv(b.checks));
  const auto csv = th::rows_to_csv(a.rows);
  EXPECT_EQ(csv.rfind("config_id,scenario,estimator,D,", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), a.rows.size() + 1);
}

TEST(TheoryReport, AllPassedNeedsEveryCheck) {
  th::TheoryReport r;
  EXPECT_TRUE(r.all_passed());
  r.checks.push_back({"x", true, ""});
  r.checks.push_back({"y", false, ""});
  EXPECT_FALSE(r.all_passed());
}
