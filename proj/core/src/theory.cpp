#include "drrel/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "drrel/rng.hpp"

namespace drrel::theory {

namespace {

constexpr double kFormulaTolerance = 1e-10;
constexpr double kZeroTolerance = 1e-12;
constexpr double kMcCoverage = 0.99;
constexpr double kVarianceShare = 0.95;
constexpr double kWrongImputationGap = 0.3;
constexpr double kCloseImputationGap = 0.1;

using estimators::EstimatorParams;
using estimators::ExamIndicator;
using estimators::PositionClick;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

click_sim::ClickModelParams random_truth(Rng& rng, int k_positions) {
  std::vector<double> theta, ep, em;
  double t = uniform(rng, 0.6, 1.0);
  for (int k = 0; k < k_positions; ++k) {
    theta.push_back(t);
    t *= uniform(rng, 0.5, 1.0);
    ep.push_back(uniform(rng, 0.7, 1.0));
    em.push_back(uniform(rng, 0.0, 0.3));
  }
  return {theta, ep, em};
}

std::vector<int> random_positions(Rng& rng, int k_positions, std::size_t d) {
  std::vector<int> pos(d);
  for (auto& p : pos) p = 1 + std::min(k_positions - 1, static_cast<int>(uniform01(rng) * k_positions));
  return pos;
}

EstimatorParams misspecify(const click_sim::ClickModelParams& truth, Rng& rng) {
  const double ma = uniform(rng, 0.7, 1.3), mb = uniform(rng, 0.7, 1.3);
  const double mp = uniform(rng, 0.7, 1.3), mm = uniform(rng, 0.7, 1.3);
  EstimatorParams p;
  for (int k = 1; k <= truth.num_positions(); ++k) {
    p.alpha_hat.push_back(std::min(1.0, truth.alpha(k) * ma));
    p.beta_hat.push_back(std::min(1.0, truth.beta(k) * mb));
    p.theta_hat.push_back(truth.theta(k));
    p.eps_plus_hat.push_back(std::min(1.0, truth.eps_plus(k) * mp));
    p.eps_minus_hat.push_back(std::min(1.0, truth.eps_minus(k) * mm));
  }
  p.validate();
  return p;
}

std::vector<ExamIndicator> posterior(const GridConfig& g) {
  std::vector<ExamIndicator> e;
  for (int k : g.positions) e.push_back(estimators::exam_posterior(g.truth, k, g.gamma));
  return e;
}

estimators::ClickEstimator affine_closure(const EstimatorParams& est) {
  return [est](std::span<const PositionClick> data) { return estimators::affine_estimate(data, est).value; };
}

estimators::ClickEstimator dr_closure(const EstimatorParams& est, double gamma_imp, std::vector<ExamIndicator> e) {
  return [est, gamma_imp, e = std::move(e)](std::span<const PositionClick> data) {
    std::vector<double> e_hat(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) e_hat[i] = e[i].at(data[i].clicked);
    return estimators::dr_estimate(data, est, gamma_imp, e_hat).value;
  };
}

TheoryRow make_row(int id, std::string scenario, std::string estimator, std::size_t d, double analytic_bias,
                   double analytic_variance, const estimators::BiasVarianceReport& r) {
  TheoryRow row;
  row.config_id = id;
  row.scenario = std::move(scenario);
  row.estimator = std::move(estimator);
  row.d = d;
  row.analytic_bias = analytic_bias;
  row.analytic_variance = analytic_variance;
  row.exact_bias = r.exact_bias.value_or(std::nan(""));
  row.exact_variance = r.exact_variance.value_or(std::nan(""));
  row.empirical_bias = r.empirical_bias;
  row.empirical_variance = r.empirical_variance;
  row.standard_error = r.mc_standard_error;
  return row;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

std::vector<GridConfig> random_grid(std::size_t n, std::uint64_t seed, bool misspecified) {
  Rng rng = make_rng(seed, misspecified ? 0x6d697373 : 0x6d617463);
  std::vector<GridConfig> out;
  for (std::size_t i = 0; i < n; ++i) {
    GridConfig g;
    g.id = static_cast<int>(i);
    const int k_positions = 2 + std::min(8, static_cast<int>(uniform01(rng) * 9));
    g.truth = random_truth(rng, k_positions);
    const auto d = 1 + std::min<std::size_t>(11, static_cast<std::size_t>(uniform01(rng) * 12));
    g.positions = random_positions(rng, k_positions, d);
    g.gamma = uniform(rng, 0.05, 0.95);
    g.gamma_imp = uniform01(rng);
    g.est = misspecified ? misspecify(g.truth, rng) : EstimatorParams::from_truth(g.truth);
    out.push_back(std::move(g));
  }
  return out;
}

bool TheoryReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

TheoryReport verify_theory(const TheoryConfig& config) {
  TheoryReport report;
  const auto reps = config.replications;
  std::size_t stream = 0;
  auto next_seed = [&] { return derive_seed(config.seed, ++stream); };

  // Affine and DR bias formulas against enumeration, mixed misspecification.
  {
    double worst_aff = 0.0, worst_dr = 0.0;
    for (const auto& g : random_grid(config.n_configs, config.seed, true)) {
      const auto bv = estimators::affine_bias_variance(g.positions, g.truth, g.est, g.gamma);
      const auto r = estimators::mc_bias_variance(affine_closure(g.est), g.truth, g.gamma, g.positions, reps,
                                                  next_seed(), config.jobs);
      report.rows.push_back(make_row(g.id, "mixed", "affine", g.positions.size(), bv.bias, bv.variance, r));
      worst_aff = std::max(worst_aff, std::abs(*r.exact_bias - bv.bias));

      const auto e = posterior(g);
      const auto dbv = estimators::dr_bias_variance(g.positions, g.truth, g.est, g.gamma, g.gamma_imp, e);
      const auto rd = estimators::mc_bias_variance(dr_closure(g.est, g.gamma_imp, e), g.truth, g.gamma,
                                                   g.positions, reps, next_seed(), config.jobs);
      report.rows.push_back(make_row(g.id, "mixed", "dr", g.positions.size(), dbv.bias, dbv.variance, rd));
      worst_dr = std::max(worst_dr, std::abs(*rd.exact_bias - dbv.bias));
    }
    report.checks.push_back({"affine_bias_formula", worst_aff <= kFormulaTolerance,
                             "max |exact - analytic| = " + fmt(worst_aff)});
    report.checks.push_back({"dr_bias_formula", worst_dr <= kFormulaTolerance,
                             "max |exact - analytic| = " + fmt(worst_dr)});
  }

  // Matched parameters: affine unbiased exactly and in Monte Carlo.
  {
    double worst = 0.0;
    std::size_t covered = 0, runs = 0;
    for (const auto& g : random_grid(config.n_configs, config.seed, false)) {
      const auto bv = estimators::affine_bias_variance(g.positions, g.truth, g.est, g.gamma);
      for (std::size_t s = 0; s < std::max<std::size_t>(1, config.mc_seeds); ++s) {
        const auto r = estimators::mc_bias_variance(affine_closure(g.est), g.truth, g.gamma, g.positions, reps,
                                                    next_seed(), config.jobs);
        if (s == 0) {
          report.rows.push_back(make_row(g.id, "matched", "affine", g.positions.size(), bv.bias, bv.variance, r));
          worst = std::max(worst, std::abs(*r.exact_bias));
        }
        ++runs;
        if (std::abs(r.empirical_bias) <= 3.0 * r.mc_standard_error) ++covered;
      }
    }
    const double share = runs ? static_cast<double>(covered) / static_cast<double>(runs) : 0.0;
    report.checks.push_back({"affine_matched_exact", worst <= kZeroTolerance, "max |exact bias| = " + fmt(worst)});
    report.checks.push_back({"affine_matched_mc", share >= kMcCoverage,
                             std::to_string(covered) + "/" + std::to_string(runs) + " runs within 3 SE"});
  }

  // Doubly robust branches.
  {
    double worst_a = 0.0, worst_b = 0.0;
    for (const auto& g0 : random_grid(config.n_configs, config.seed ^ 0x6472, false)) {
      auto g = g0;
      g.gamma_imp = g.gamma + kWrongImputationGap <= 1.0 ? g.gamma + kWrongImputationGap : g.gamma - kWrongImputationGap;
      // Branch a: matched alpha/beta; constant e with e(eps+ - eps-) = alpha_hat.
      std::vector<ExamIndicator> ea;
      for (int k : g.positions) ea.push_back(ExamIndicator::constant(g.est.theta(k)));
      const auto ba = estimators::dr_bias_variance(g.positions, g.truth, g.est, g.gamma, g.gamma_imp, ea);
      const auto ra = estimators::mc_bias_variance(dr_closure(g.est, g.gamma_imp, ea), g.truth, g.gamma, g.positions,
                                                   reps, next_seed(), config.jobs);
      report.rows.push_back(make_row(g.id, "dr_branch_a", "dr", g.positions.size(), ba.bias, ba.variance, ra));
      worst_a = std::max(worst_a, std::abs(*ra.exact_bias));

      // Branch b: correct imputation, alpha_hat = 0.8 alpha, e(eps+ - eps-) = alpha.
      auto gb = g0;
      gb.gamma_imp = gb.gamma;
      for (auto& a : gb.est.alpha_hat) a *= 0.8;
      std::vector<ExamIndicator> eb;
      for (int k : gb.positions) eb.push_back(ExamIndicator::constant(gb.truth.theta(k)));
      const auto bb = estimators::dr_bias_variance(gb.positions, gb.truth, gb.est, gb.gamma, gb.gamma_imp, eb);
      const auto rb = estimators::mc_bias_variance(dr_closure(gb.est, gb.gamma_imp, eb), gb.truth, gb.gamma,
                                                   gb.positions, reps, next_seed(), config.jobs);
      report.rows.push_back(make_row(gb.id, "dr_branch_b", "dr", gb.positions.size(), bb.bias, bb.variance, rb));
      worst_b = std::max(worst_b, std::abs(*rb.exact_bias));
    }
    report.checks.push_back({"dr_branch_a_exact", worst_a <= kZeroTolerance, "max |exact bias| = " + fmt(worst_a)});
    report.checks.push_back({"dr_branch_b_exact", worst_b <= kZeroTolerance, "max |exact bias| = " + fmt(worst_b)});
  }

  // DR variance below affine with a close imputation and the oracle posterior.
  {
    std::size_t better = 0, total = 0;
    std::string violations;
    Rng rng = make_rng(config.seed, 0x76617269);
    for (std::size_t d : {1u, 2u, 5u, 10u}) {
      for (std::size_t i = 0; i < config.n_configs; ++i) {
        GridConfig g;
        g.id = static_cast<int>(i);
        g.truth = random_truth(rng, 10);
        g.positions = random_positions(rng, 10, d);
        g.gamma = uniform(rng, 0.05, 0.95);
        g.gamma_imp = std::clamp(g.gamma + uniform(rng, -kCloseImputationGap, kCloseImputationGap), 0.0, 1.0);
        g.est = EstimatorParams::from_truth(g.truth);
        const auto e = posterior(g);
        const auto ma = estimators::enumerate_moments(affine_closure(g.est), g.truth, g.gamma, g.positions);
        const auto md = estimators::enumerate_moments(dr_closure(g.est, g.gamma_imp, e), g.truth, g.gamma, g.positions);
        ++total;
        if (md.variance < ma.variance) {
          ++better;
        } else {
          violations += " D=" + std::to_string(d) + "#" + std::to_string(i);
        }
        TheoryRow row;
        row.config_id = g.id;
        row.scenario = "variance_d" + std::to_string(d);
        row.estimator = "dr_vs_affine";
        row.d = d;
        row.exact_bias = md.mean - g.gamma;
        row.exact_variance = md.variance;
        row.analytic_variance = ma.variance;  // affine enumeration variance for side-by-side reading
        row.analytic_bias = ma.mean - g.gamma;
        report.rows.push_back(row);
      }
    }
    const double share = total ? static_cast<double>(better) / static_cast<double>(total) : 0.0;
    report.checks.push_back({"dr_variance_below_affine", share >= kVarianceShare,
                             std::to_string(better) + "/" + std::to_string(total) +
                                 (violations.empty() ? std::string(" no violations") : " violations:" + violations)});
  }
  return report;
}

std::string rows_to_csv(const std::vector<TheoryRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "config_id,scenario,estimator,D,analytic_bias,exact_bias,empirical_bias,analytic_variance,exact_variance,"
        "empirical_variance,standard_error\n";
  for (const auto& r : rows) {
    os << r.config_id << ',' << r.scenario << ',' << r.estimator << ',' << r.d << ',' << r.analytic_bias << ','
       << r.exact_bias << ',' << r.empirical_bias << ',' << r.analytic_variance << ',' << r.exact_variance << ','
       << r.empirical_variance << ',' << r.standard_error << '\n';
  }
  return os.str();
}

std::string checks_to_csv(const std::vector<TheoryCheck>& checks) {
  std::ostringstream os;
  os << "check,passed,detail\n";
  for (const auto& c : checks) os << c.name << ',' << (c.passed ? "true" : "false") << ",\"" << c.detail << "\"\n";
  return os.str();
}

}  // namespace drrel::theory
