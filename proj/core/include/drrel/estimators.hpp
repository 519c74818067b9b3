#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drrel/click_sim.hpp"

namespace drrel::estimators {

using click_sim::ClickModelParams;

/// One element (k, c) of the interaction set of a query-document pair.
struct PositionClick {
  int position = 1;
  bool clicked = false;
};

/// Multiplicative misspecification applied to the true parameters.
struct Misspecification {
  double alpha = 1.0;
  double beta = 1.0;
  double theta = 1.0;
  double eps_plus = 1.0;
  double eps_minus = 1.0;
};

/// Estimated click-model parameters, indexed by 1-based position.
struct EstimatorParams {
  std::vector<double> alpha_hat;
  std::vector<double> beta_hat;
  std::vector<double> theta_hat;
  std::vector<double> eps_plus_hat;
  std::vector<double> eps_minus_hat;

  int num_positions() const noexcept { return static_cast<int>(alpha_hat.size()); }
  double alpha(int k) const { return alpha_hat[index(k)]; }
  double beta(int k) const { return beta_hat[index(k)]; }
  double theta(int k) const { return theta_hat[index(k)]; }
  double eps_plus(int k) const { return eps_plus_hat[index(k)]; }
  double eps_minus(int k) const { return eps_minus_hat[index(k)]; }
  std::size_t index(int k) const;

  /// alpha, theta in (0,1]; beta, eps in [0,1]; equal lengths.
  void validate() const;

  /// Scales each true parameter by its knob. alpha/beta are scaled directly,
  /// not recomputed from the scaled theta/eps.
  static EstimatorParams from_truth(const ClickModelParams& truth, const Misspecification& miss = {});
};

enum class EstimatorKind { naive, ipw, affine, dr };

std::string to_string(EstimatorKind kind);

struct RelevanceEstimate {
  double value = 0.0;  // raw, may leave [0,1]
  EstimatorKind kind = EstimatorKind::naive;
  std::size_t count = 0;  // D
};

/// Mean click.
RelevanceEstimate naive_ctr(std::span<const PositionClick> data);

/// (1/D) sum c / theta_hat_k.
RelevanceEstimate ipw_estimate(std::span<const PositionClick> data, std::span<const double> theta_hat);

/// (1/D) sum (c - beta_hat_k) / alpha_hat_k.
RelevanceEstimate affine_estimate(std::span<const PositionClick> data, const EstimatorParams& params);

/// Doubly robust estimate
///   (1/D) sum (alpha_hat_k - e_k (eps+_k - eps-_k)) / alpha_hat_k * gamma_imp + affine.
/// With no interactions it returns gamma_imp.
RelevanceEstimate dr_estimate(std::span<const PositionClick> data, const EstimatorParams& params,
                              double gamma_imp, std::span<const double> e_hat);

/// Clamp adapter for ranking use; the estimators themselves never clamp.
double clamp_unit(const RelevanceEstimate& estimate);

// --- analytic bias / variance ----------------------------------------------

struct BiasVariance {
  double bias = 0.0;
  double variance = 0.0;
};

/// Bias and variance of the affine estimator in closed form.
///
/// bias     = (1/D) sum (dAlpha_k gamma + dBeta_k) / alpha_hat_k
/// variance = (1/D) sum E_c[(alpha_hat_k g + beta_hat_k - c)^2] / alpha_hat_k^2
///
/// where g is `gamma_aff_hat` (defaults to the exact expectation of the
/// estimator) and the expectation over c uses the true click model. The
/// variance expression is the mean squared spread of the per-interaction
/// terms; it equals the estimator variance for D = 1.
BiasVariance affine_bias_variance(std::span<const int> positions, const ClickModelParams& truth,
                                  const EstimatorParams& est, double gamma,
                                  std::optional<double> gamma_aff_hat = std::nullopt);

/// Examination indicator e_k as a function of the observed click.
struct ExamIndicator {
  double if_skipped = 0.0;  // e_k when c = 0
  double if_clicked = 1.0;  // e_k when c = 1

  double at(bool clicked) const noexcept { return clicked ? if_clicked : if_skipped; }
  static ExamIndicator constant(double e) { return {e, e}; }
};

/// P(E=1 | C=c, k) under the true model; the oracle indicator.
ExamIndicator exam_posterior(const ClickModelParams& truth, int k, double gamma);

/// delta_k for each interaction evaluated at both click outcomes.
struct DeltaTerm {
  double if_skipped = 0.0;
  double if_clicked = 0.0;
};

struct DrBiasVariance {
  double bias = 0.0;
  double variance = 0.0;
  std::vector<DeltaTerm> delta;
};

/// Bias and variance of the doubly robust estimator in closed form.
///
/// With at_k = e_k (eps+_hat_k - eps-_hat_k) and dAt_k = at_k - alpha_hat_k:
/// bias     = (1/D) sum E_c[(dAlpha_k gamma + dBeta_k - dAt_k gamma_imp) / alpha_hat_k]
/// variance = (1/D) sum E_c[(at_k gamma_imp + beta_hat_k - c)^2 / alpha_hat_k^2 + delta_k]
/// delta_k  = (g - gamma_imp)(alpha_hat_k g + (2 at_k - alpha_hat_k) gamma_imp + 2 beta_hat_k - 2c) / alpha_hat_k
///
/// g is `gamma_dr_hat` (defaults to the exact expectation of the estimator).
/// Expectations over c use the true click model; e_k may depend on c.
DrBiasVariance dr_bias_variance(std::span<const int> positions, const ClickModelParams& truth,
                                const EstimatorParams& est, double gamma, double gamma_imp,
                                std::span<const ExamIndicator> e_hat,
                                std::optional<double> gamma_dr_hat = std::nullopt);

/// delta_k for one realized interaction.
double dr_delta(int k, bool clicked, const EstimatorParams& est, double gamma_imp, double e_hat,
                double gamma_dr_hat);

/// Exact E[affine estimate] under the true model.
double affine_expectation(std::span<const int> positions, const ClickModelParams& truth,
                          const EstimatorParams& est, double gamma);

/// Exact E[dr estimate] under the true model.
double dr_expectation(std::span<const int> positions, const ClickModelParams& truth,
                      const EstimatorParams& est, double gamma, double gamma_imp,
                      std::span<const ExamIndicator> e_hat);

// --- propensity estimation ---------------------------------------------------

/// theta_hat_k = CTR(k) / CTR(1) from logs collected under shuffled rankings,
/// clipped to (0,1].
std::vector<double> estimate_theta_from_randomized_logs(std::span<const click_sim::SessionLog> sessions,
                                                        int num_positions);

// --- Monte Carlo and exact-enumeration oracles ------------------------------

using ClickEstimator = std::function<double(std::span<const PositionClick>)>;

/// Mean and variance with mergeable state (Chan et al. pairwise update).
class RunningMoments {
 public:
  void add(double x);
  void merge(const RunningMoments& other);

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  /// Unbiased (n-1) sample variance.
  double sample_variance() const noexcept;
  double population_variance() const noexcept;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct ExactMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Enumerates all 2^D click patterns with their probabilities. D <= 20.
ExactMoments enumerate_moments(const ClickEstimator& estimator, const ClickModelParams& truth,
                               double gamma, std::span<const int> positions);

struct BiasVarianceReport {
  double analytic_bias = 0.0;
  double analytic_variance = 0.0;
  double empirical_bias = 0.0;
  double empirical_variance = 0.0;
  double mc_standard_error = 0.0;
  double irreducible_sigma2 = 0.0;
  std::size_t replications = 0;
  std::optional<double> exact_bias;      // present when D <= kMaxEnumeration
  std::optional<double> exact_variance;
};

inline constexpr std::size_t kMaxEnumeration = 12;

/// Draws R click vectors from the true model, applies `estimator` and reports
/// empirical bias/variance with SE = sd / sqrt(R). For D <= 12 also fills the
/// exact fields. Analytic fields are left at zero for the caller.
BiasVarianceReport mc_bias_variance(const ClickEstimator& estimator, const ClickModelParams& truth,
                                    double gamma, std::span<const int> positions,
                                    std::size_t replications, std::uint64_t seed,
                                    std::size_t jobs = 1);

}  // namespace drrel::estimators
