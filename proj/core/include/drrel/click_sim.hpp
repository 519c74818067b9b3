#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drrel/rng.hpp"

namespace drrel::click_sim {

using QueryId = std::uint32_t;
using DocId = std::uint32_t;

/// Per-position parameters of the trust-bias extended position-based model.
///
/// A result at rank k is examined with probability theta_k. An examined
/// relevant result is clicked with probability eps_plus_k, an examined
/// irrelevant one with probability eps_minus_k, so that
///   P(click | k, gamma) = alpha_k * gamma + beta_k,
///   alpha_k = theta_k (eps_plus_k - eps_minus_k),  beta_k = theta_k eps_minus_k.
/// Positions are 1-based throughout the public API.
class ClickModelParams {
 public:
  ClickModelParams() = default;

  /// Validates: equal lengths, entries in [0,1], eps_minus < eps_plus, alpha > 0.
  ClickModelParams(std::vector<double> theta, std::vector<double> eps_plus,
                   std::vector<double> eps_minus);

  int num_positions() const noexcept { return static_cast<int>(theta_.size()); }

  double theta(int k) const { return theta_[index(k)]; }
  double eps_plus(int k) const { return eps_plus_[index(k)]; }
  double eps_minus(int k) const { return eps_minus_[index(k)]; }
  double alpha(int k) const;
  double beta(int k) const;

  const std::vector<double>& theta_vector() const noexcept { return theta_; }
  const std::vector<double>& eps_plus_vector() const noexcept { return eps_plus_; }
  const std::vector<double>& eps_minus_vector() const noexcept { return eps_minus_; }

  /// Throws DomainError unless 1 <= k <= K.
  std::size_t index(int k) const;

  /// Ten positions with decaying examination and mild trust bias.
  static ClickModelParams default_web(int num_positions = 10);

 private:
  std::vector<double> theta_;
  std::vector<double> eps_plus_;
  std::vector<double> eps_minus_;
};

/// P(C=1) = alpha_k * gamma + beta_k.
double click_probability(const ClickModelParams& params, int k, double gamma);

struct CatalogDoc {
  DocId doc_id = 0;
  double relevance = 0.0;  // gamma_{q,d}
  std::uint64_t feature_seed = 0;
};

struct CatalogQuery {
  QueryId query_id = 0;
  double weight = 0.0;  // relative monthly frequency
  std::vector<CatalogDoc> docs;
};

struct QueryCatalog {
  static constexpr int kSchemaVersion = 1;

  std::vector<CatalogQuery> queries;

  std::size_t num_pairs() const;
  const CatalogQuery& query(QueryId id) const;
  const CatalogDoc& doc(QueryId query_id, DocId doc_id) const;
  /// Throws ConfigError on duplicate ids, non-positive weights or gamma outside [0,1].
  void validate() const;
};

enum class PriorKind { point, uniform, beta };

struct RelevancePrior {
  PriorKind kind = PriorKind::uniform;
  double a = 0.0;  // point value / uniform lower / beta alpha
  double b = 1.0;  // uniform upper / beta beta

  static RelevancePrior point(double v) { return {PriorKind::point, v, v}; }
  static RelevancePrior uniform(double lo = 0.0, double hi = 1.0) { return {PriorKind::uniform, lo, hi}; }
  static RelevancePrior beta_dist(double a, double b) { return {PriorKind::beta, a, b}; }

  double sample(Rng& rng) const;
};

struct CatalogConfig {
  std::size_t n_queries = 1000;
  std::size_t docs_per_query = 10;
  double zipf_exponent = 1.0;
  RelevancePrior prior;
};

/// Query weights proportional to rank^-zipf_exponent; gamma drawn from the prior.
QueryCatalog generate_catalog(const CatalogConfig& config, std::uint64_t seed);

/// One displayed result.
struct Interaction {
  QueryId query_id = 0;
  DocId doc_id = 0;
  int position = 0;  // 1..K
  bool clicked = false;
  double display_time_s = 0.0;
  double dwell_time_s = 0.0;
  std::int64_t timestamp = 0;  // hours since epoch
};

struct SessionLog {
  QueryId query_id = 0;
  std::vector<DocId> docs;  // ranked
  std::vector<Interaction> interactions;  // interactions[i].position == i + 1

  std::int64_t timestamp() const { return interactions.empty() ? 0 : interactions.front().timestamp; }
  /// Throws DomainError if positions are not exactly 1..docs.size().
  void validate() const;
};

/// A session plus the latent examination bits. Only test oracles and
/// evaluation code may look at `examined`; nothing downstream of the log
/// parser ever sees this type.
struct SimulatedSession {
  SessionLog log;
  std::vector<bool> examined;
};

/// Returns indices into `query.docs`, best first; at most K are displayed.
using RankingPolicy = std::function<std::vector<std::size_t>(const CatalogQuery& query, Rng& rng)>;

/// Catalog order.
RankingPolicy identity_policy();
/// Uniformly random permutation per session.
RankingPolicy shuffled_policy();
/// Sort by gamma + N(0, sigma) per session; a stand-in for a production ranker.
RankingPolicy noisy_relevance_policy(double sigma);

struct TimingModel {
  double examined_log_mu = 2.0;      // LogNormal, seconds
  double examined_log_sigma = 0.5;
  double unexamined_mean_s = 0.4;    // Exponential mean, seconds
  double dwell_log_mu = 3.0;
  double dwell_log_sigma = 1.0;
};

struct SimulationConfig {
  std::size_t n_sessions = 0;
  std::int64_t start_hour = 0;
  std::int64_t span_hours = 24;
  /// Probability that the user stops scanning right after a click.
  double abandon_after_click = 0.0;
  TimingModel timing;
  /// Sessions per derived RNG stream; results do not depend on `jobs`.
  std::size_t chunk_size = 4096;
  std::size_t jobs = 1;
};

/// Simulated sessions in timestamp order. Deterministic given `seed`.
std::vector<SimulatedSession> simulate_sessions(const QueryCatalog& catalog,
                                                const ClickModelParams& params,
                                                const RankingPolicy& policy,
                                                const SimulationConfig& config,
                                                std::uint64_t seed);

/// Strips the latent fields.
std::vector<SessionLog> logs_only(std::span<const SimulatedSession> sessions);

struct RandRecord {
  QueryId query_id = 0;
  DocId doc_id = 0;
  bool clicked = false;
  std::int64_t timestamp = 0;
};

struct RandomizationConfig {
  std::size_t n = 0;
  /// Examination probability at the top slot; 1 assumes the first result is always seen.
  double top1_examination = 1.0;
  std::int64_t start_hour = 0;
  std::int64_t span_hours = 24;
};

/// Uniformly sampled (q,d) pairs shown alone at position 1; only the top-1 click is kept.
std::vector<RandRecord> generate_randomization_data(const QueryCatalog& catalog,
                                                    const ClickModelParams& params,
                                                    const RandomizationConfig& config,
                                                    std::uint64_t seed);

}  // namespace drrel::click_sim
