#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "drrel/click_sim.hpp"
#include "drrel/estimators.hpp"

namespace drrel::theory {

struct TheoryConfig {
  std::size_t n_configs = 20;
  std::size_t replications = 2000;
  std::size_t mc_seeds = 50;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// One randomly drawn verification setting.
struct GridConfig {
  int id = 0;
  click_sim::ClickModelParams truth;
  estimators::EstimatorParams est;
  std::vector<int> positions;  // D interactions, repeats allowed
  double gamma = 0.5;
  double gamma_imp = 0.5;
};

/// K in [2,10], D in [1,12], gamma in [0.05,0.95]. With `misspecified`, each
/// of alpha, beta, eps+ and eps- gets its own multiplier in [0.7,1.3].
std::vector<GridConfig> random_grid(std::size_t n, std::uint64_t seed, bool misspecified);

struct TheoryRow {
  int config_id = 0;
  std::string scenario;
  std::string estimator;
  std::size_t d = 0;
  double analytic_bias = 0.0;
  double exact_bias = 0.0;
  double empirical_bias = 0.0;
  double analytic_variance = 0.0;
  double exact_variance = 0.0;
  double empirical_variance = 0.0;
  double standard_error = 0.0;
};

struct TheoryCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct TheoryReport {
  std::vector<TheoryRow> rows;
  std::vector<TheoryCheck> checks;

  bool all_passed() const;
};

/// Runs every theory check: affine bias formula vs enumeration, matched
/// unbiasedness (exact and Monte Carlo), both DR branches, the DR bias
/// formula, and the DR-vs-affine variance comparison.
TheoryReport verify_theory(const TheoryConfig& config);

std::string rows_to_csv(const std::vector<TheoryRow>& rows);
std::string checks_to_csv(const std::vector<TheoryCheck>& checks);

}  // namespace drrel::theory
