#include "drrel/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <string>

#include "drrel/error.hpp"
#include "drrel/rng.hpp"

namespace drrel::estimators {
namespace {

void require_nonempty(std::span<const PositionClick> data, const char* who) {
  if (data.empty()) throw EmptyDataError(std::string(who) + ": no interactions");
}

double click_prob(const ClickModelParams& truth, int k, double gamma) {
  return truth.alpha(k) * gamma + truth.beta(k);
}

double dr_term(const PositionClick& pc, const EstimatorParams& est, double gamma_imp, double e) {
  const int k = pc.position;
  const double a = est.alpha(k);
  const double tilde = e * (est.eps_plus(k) - est.eps_minus(k));
  return (a - tilde) / a * gamma_imp + ((pc.clicked ? 1.0 : 0.0) - est.beta(k)) / a;
}

}  // namespace

std::size_t EstimatorParams::index(int k) const {
  if (k < 1 || k > num_positions()) {
    throw DomainError("position " + std::to_string(k) + " outside 1.." + std::to_string(num_positions()));
  }
  return static_cast<std::size_t>(k - 1);
}

void EstimatorParams::validate() const {
  const auto n = alpha_hat.size();
  if (n == 0) throw ConfigError("estimator params need at least one position");
  if (beta_hat.size() != n || theta_hat.size() != n || eps_plus_hat.size() != n || eps_minus_hat.size() != n) {
    throw ConfigError("estimator parameter vectors must have equal length");
  }
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (std::size_t i = 0; i < n; ++i) {
    if (!(alpha_hat[i] > 0.0 && alpha_hat[i] <= 1.0)) throw ConfigError("alpha_hat must lie in (0,1]");
    if (!(theta_hat[i] > 0.0 && theta_hat[i] <= 1.0)) throw ConfigError("theta_hat must lie in (0,1]");
    if (!unit(beta_hat[i]) || !unit(eps_plus_hat[i]) || !unit(eps_minus_hat[i])) {
      throw ConfigError("beta_hat / eps_hat must lie in [0,1]");
    }
  }
}

EstimatorParams EstimatorParams::from_truth(const ClickModelParams& truth, const Misspecification& miss) {
  EstimatorParams p;
  for (int k = 1; k <= truth.num_positions(); ++k) {
    p.alpha_hat.push_back(truth.alpha(k) * miss.alpha);
    p.beta_hat.push_back(truth.beta(k) * miss.beta);
    p.theta_hat.push_back(truth.theta(k) * miss.theta);
    p.eps_plus_hat.push_back(truth.eps_plus(k) * miss.eps_plus);
    p.eps_minus_hat.push_back(truth.eps_minus(k) * miss.eps_minus);
  }
  p.validate();
  return p;
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::naive: return "naive";
    case EstimatorKind::ipw: return "ipw";
    case EstimatorKind::affine: return "affine";
    case EstimatorKind::dr: return "dr";
  }
  return "unknown";
}

RelevanceEstimate naive_ctr(std::span<const PositionClick> data) {
  require_nonempty(data, "naive_ctr");
  double clicks = 0.0;
  for (const auto& pc : data) clicks += pc.clicked ? 1.0 : 0.0;
  return {clicks / static_cast<double>(data.size()), EstimatorKind::naive, data.size()};
}

RelevanceEstimate ipw_estimate(std::span<const PositionClick> data, std::span<const double> theta_hat) {
  require_nonempty(data, "ipw_estimate");
  double sum = 0.0;
  for (const auto& pc : data) {
    if (pc.position < 1 || static_cast<std::size_t>(pc.position) > theta_hat.size()) {
      throw DomainError("position " + std::to_string(pc.position) + " has no propensity");
    }
    const double t = theta_hat[static_cast<std::size_t>(pc.position - 1)];
    if (!(t > 0.0)) throw PropensityError("theta_hat is zero at observed position " + std::to_string(pc.position));
    sum += (pc.clicked ? 1.0 : 0.0) / t;
  }
  return {sum / static_cast<double>(data.size()), EstimatorKind::ipw, data.size()};
}

RelevanceEstimate affine_estimate(std::span<const PositionClick> data, const EstimatorParams& params) {
  require_nonempty(data, "affine_estimate");
  double sum = 0.0;
  for (const auto& pc : data) {
    const double a = params.alpha(pc.position);
    if (!(a > 0.0)) throw PropensityError("alpha_hat is zero at position " + std::to_string(pc.position));
    sum += ((pc.clicked ? 1.0 : 0.0) - params.beta(pc.position)) / a;
  }
  return {sum / static_cast<double>(data.size()), EstimatorKind::affine, data.size()};
}

RelevanceEstimate dr_estimate(std::span<const PositionClick> data, const EstimatorParams& params,
                              double gamma_imp, std::span<const double> e_hat) {
  if (e_hat.size() != data.size()) {
    throw AlignmentError("dr_estimate: " + std::to_string(e_hat.size()) + " examination values for " +
                         std::to_string(data.size()) + " interactions");
  }
  if (data.empty()) return {gamma_imp, EstimatorKind::dr, 0};
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(params.alpha(data[i].position) > 0.0)) throw PropensityError("alpha_hat is zero");
    sum += dr_term(data[i], params, gamma_imp, e_hat[i]);
  }
  return {sum / static_cast<double>(data.size()), EstimatorKind::dr, data.size()};
}

double clamp_unit(const RelevanceEstimate& estimate) { return std::clamp(estimate.value, 0.0, 1.0); }

// --- analytic -----------------------------------------------------------------

double affine_expectation(std::span<const int> positions, const ClickModelParams& truth,
                          const EstimatorParams& est, double gamma) {
  if (positions.empty()) throw EmptyDataError("affine_expectation: no interactions");
  double sum = 0.0;
  for (int k : positions) sum += (click_prob(truth, k, gamma) - est.beta(k)) / est.alpha(k);
  return sum / static_cast<double>(positions.size());
}

BiasVariance affine_bias_variance(std::span<const int> positions, const ClickModelParams& truth,
                                  const EstimatorParams& est, double gamma,
                                  std::optional<double> gamma_aff_hat) {
  if (positions.empty()) throw EmptyDataError("affine_bias_variance: no interactions");
  const double g = gamma_aff_hat.value_or(affine_expectation(positions, truth, est, gamma));
  double bias = 0.0;
  double var = 0.0;
  for (int k : positions) {
    const double a_hat = est.alpha(k);
    const double b_hat = est.beta(k);
    const double d_alpha = truth.alpha(k) - a_hat;
    const double d_beta = truth.beta(k) - b_hat;
    bias += (d_alpha * gamma + d_beta) / a_hat;

    const double p = click_prob(truth, k, gamma);
    const double r0 = a_hat * g + b_hat;        // c = 0
    const double r1 = a_hat * g + b_hat - 1.0;  // c = 1
    var += ((1.0 - p) * r0 * r0 + p * r1 * r1) / (a_hat * a_hat);
  }
  const auto d = static_cast<double>(positions.size());
  return {bias / d, var / d};
}

ExamIndicator exam_posterior(const ClickModelParams& truth, int k, double gamma) {
  const double theta = truth.theta(k);
  const double perceived = truth.eps_plus(k) * gamma + truth.eps_minus(k) * (1.0 - gamma);
  const double no_click = 1.0 - theta * perceived;
  ExamIndicator e;
  e.if_clicked = 1.0;
  e.if_skipped = no_click > 0.0 ? theta * (1.0 - perceived) / no_click : 0.0;
  return e;
}

double dr_expectation(std::span<const int> positions, const ClickModelParams& truth,
                      const EstimatorParams& est, double gamma, double gamma_imp,
                      std::span<const ExamIndicator> e_hat) {
  if (e_hat.size() != positions.size()) throw AlignmentError("dr_expectation: e_hat/positions length mismatch");
  if (positions.empty()) return gamma_imp;
  double sum = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const int k = positions[i];
    const double p = click_prob(truth, k, gamma);
    sum += (1.0 - p) * dr_term({k, false}, est, gamma_imp, e_hat[i].if_skipped) +
           p * dr_term({k, true}, est, gamma_imp, e_hat[i].if_clicked);
  }
  return sum / static_cast<double>(positions.size());
}

double dr_delta(int k, bool clicked, const EstimatorParams& est, double gamma_imp, double e_hat,
                double gamma_dr_hat) {
  const double a_hat = est.alpha(k);
  const double tilde = e_hat * (est.eps_plus(k) - est.eps_minus(k));
  const double c = clicked ? 1.0 : 0.0;
  return (gamma_dr_hat - gamma_imp) *
         (a_hat * gamma_dr_hat + (2.0 * tilde - a_hat) * gamma_imp + 2.0 * est.beta(k) - 2.0 * c) / a_hat;
}

DrBiasVariance dr_bias_variance(std::span<const int> positions, const ClickModelParams& truth,
                                const EstimatorParams& est, double gamma, double gamma_imp,
                                std::span<const ExamIndicator> e_hat, std::optional<double> gamma_dr_hat) {
  if (e_hat.size() != positions.size()) throw AlignmentError("dr_bias_variance: e_hat/positions length mismatch");
  if (positions.empty()) throw EmptyDataError("dr_bias_variance: no interactions");
  const double g = gamma_dr_hat.value_or(dr_expectation(positions, truth, est, gamma, gamma_imp, e_hat));

  DrBiasVariance out;
  out.delta.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const int k = positions[i];
    const double a_hat = est.alpha(k);
    const double b_hat = est.beta(k);
    const double d_alpha = truth.alpha(k) - a_hat;
    const double d_beta = truth.beta(k) - b_hat;
    const double spread = est.eps_plus(k) - est.eps_minus(k);
    const double p = click_prob(truth, k, gamma);

    double bias_k = 0.0;
    double var_k = 0.0;
    DeltaTerm delta;
    for (int c = 0; c <= 1; ++c) {
      const bool clicked = c == 1;
      const double w = clicked ? p : 1.0 - p;
      const double tilde = e_hat[i].at(clicked) * spread;
      const double d_tilde = tilde - a_hat;
      bias_k += w * (d_alpha * gamma + d_beta - d_tilde * gamma_imp) / a_hat;
      const double r = tilde * gamma_imp + b_hat - c;
      const double dk = dr_delta(k, clicked, est, gamma_imp, e_hat[i].at(clicked), g);
      var_k += w * (r * r / (a_hat * a_hat) + dk);
      (clicked ? delta.if_clicked : delta.if_skipped) = dk;
    }
    out.bias += bias_k;
    out.variance += var_k;
    out.delta.push_back(delta);
  }
  const auto d = static_cast<double>(positions.size());
  out.bias /= d;
  out.variance /= d;
  return out;
}

// --- propensities ---------------------------------------------------------------

std::vector<double> estimate_theta_from_randomized_logs(std::span<const click_sim::SessionLog> sessions,
                                                        int num_positions) {
  if (num_positions < 1) throw ConfigError("num_positions must be positive");
  const auto K = static_cast<std::size_t>(num_positions);
  std::vector<double> impressions(K, 0.0), clicks(K, 0.0);
  for (const auto& s : sessions) {
    for (const auto& it : s.interactions) {
      if (it.position < 1 || it.position > num_positions) continue;
      const auto i = static_cast<std::size_t>(it.position - 1);
      impressions[i] += 1.0;
      clicks[i] += it.clicked ? 1.0 : 0.0;
    }
  }
  for (std::size_t i = 0; i < K; ++i) {
    if (impressions[i] == 0.0) throw CoverageError("no impressions at position " + std::to_string(i + 1));
  }
  if (clicks[0] == 0.0) throw CoverageError("no clicks at position 1; propensity ratio undefined");
  const double top = clicks[0] / impressions[0];
  constexpr double kFloor = 1e-6;
  std::vector<double> theta(K);
  for (std::size_t i = 0; i < K; ++i) theta[i] = std::clamp((clicks[i] / impressions[i]) / top, kFloor, 1.0);
  return theta;
}

// --- oracles ------------------------------------------------------------------

void RunningMoments::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  const double delta = other.mean_ - mean_;
  mean_ += delta * nb / n;
  m2_ += other.m2_ + delta * delta * na * nb / n;
  n_ += other.n_;
}

double RunningMoments::sample_variance() const noexcept {
  return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
}

double RunningMoments::population_variance() const noexcept {
  return n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0;
}

ExactMoments enumerate_moments(const ClickEstimator& estimator, const ClickModelParams& truth,
                               double gamma, std::span<const int> positions) {
  const std::size_t d = positions.size();
  if (d > 20) throw DomainError("exact enumeration limited to D <= 20");
  std::vector<double> p(d);
  for (std::size_t i = 0; i < d; ++i) p[i] = click_prob(truth, positions[i], gamma);

  const std::size_t patterns = std::size_t{1} << d;
  std::vector<double> prob(patterns), value(patterns);
  std::vector<PositionClick> data(d);
  for (std::size_t m = 0; m < patterns; ++m) {
    double w = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      const bool c = (m >> i) & 1U;
      data[i] = {positions[i], c};
      w *= c ? p[i] : 1.0 - p[i];
    }
    prob[m] = w;
    value[m] = estimator(data);
  }
  ExactMoments out;
  for (std::size_t m = 0; m < patterns; ++m) out.mean += prob[m] * value[m];
  for (std::size_t m = 0; m < patterns; ++m) out.variance += prob[m] * (value[m] - out.mean) * (value[m] - out.mean);
  return out;
}

BiasVarianceReport mc_bias_variance(const ClickEstimator& estimator, const ClickModelParams& truth,
                                    double gamma, std::span<const int> positions, std::size_t replications,
                                    std::uint64_t seed, std::size_t jobs) {
  if (replications < 2) throw ConfigError("mc_bias_variance needs at least 2 replications");
  const std::size_t d = positions.size();
  std::vector<double> p(d);
  for (std::size_t i = 0; i < d; ++i) p[i] = click_prob(truth, positions[i], gamma);

  constexpr std::size_t kChunk = 1024;
  const std::size_t n_chunks = (replications + kChunk - 1) / kChunk;
  std::vector<RunningMoments> partial(n_chunks);
  auto run_chunk = [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    std::vector<PositionClick> data(d);
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(replications, lo + kChunk);
    for (std::size_t r = lo; r < hi; ++r) {
      for (std::size_t i = 0; i < d; ++i) data[i] = {positions[i], uniform01(rng) < p[i]};
      partial[c].add(estimator(data));
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n_chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::future<void>> fs;
    for (std::size_t w = 0; w < workers; ++w) {
      fs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
      }));
    }
    for (auto& f : fs) f.get();
  }
  // Merge in chunk order so the result does not depend on `jobs`.
  RunningMoments total;
  for (const auto& m : partial) total.merge(m);

  BiasVarianceReport report;
  report.replications = replications;
  report.empirical_bias = total.mean() - gamma;
  report.empirical_variance = total.sample_variance();
  report.mc_standard_error = std::sqrt(report.empirical_variance / static_cast<double>(replications));
  if (d <= kMaxEnumeration) {
    const auto exact = enumerate_moments(estimator, truth, gamma, positions);
    report.exact_bias = exact.mean - gamma;
    report.exact_variance = exact.variance;
  }
  return report;
}

}  // namespace drrel::estimators
