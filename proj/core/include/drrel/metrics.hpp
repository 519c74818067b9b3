#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drrel/click_sim.hpp"

namespace drrel::metrics {

using click_sim::DocId;
using click_sim::QueryId;

/// Grades 0..4 from relevance thresholds {0.2, 0.4, 0.6, 0.8}.
int grade_from_relevance(double gamma);
/// 2^grade - 1.
double gain_from_relevance(double gamma);

struct JudgedRanking {
  QueryId query_id = 0;
  std::vector<DocId> docs;
  std::vector<double> gains;      // G_i >= 0
  std::vector<double> relevance;  // R_i in [0,1]

  /// DomainError on length mismatch, negative gain or R outside [0,1].
  void validate() const;
};

/// Attaches oracle gains and relevance from the catalog.
JudgedRanking judge(const click_sim::CatalogQuery& query, std::span<const DocId> ranked);

/// sum_{i<=K} G_i / log2(i + 1). DomainError for K = 0.
double dcg_at_k(std::span<const double> gains, std::size_t k);
double dcg_at_k(const JudgedRanking& ranking, std::size_t k);

/// sum_{i<=K} (1/i) R_i prod_{j<i} (1 - R_j). DomainError for K = 0.
double err_at_k(std::span<const double> relevance, std::size_t k);
double err_at_k(const JudgedRanking& ranking, std::size_t k);

struct JudgeConfig {
  double tie_epsilon = 1e-6;
  std::size_t k = 4;
};

struct GsbResult {
  std::size_t good = 0;
  std::size_t same = 0;
  std::size_t bad = 0;

  /// (good - bad) / total; 0 for an empty comparison.
  double delta() const;
};

/// Compares oracle DCG@k of A against B per query. ConfigError when the two
/// sides do not cover the same queries.
GsbResult simulated_gsb(std::span<const JudgedRanking> a, std::span<const JudgedRanking> b,
                        const JudgeConfig& config = {});

/// Area under the ROC curve with midrank ties. DegenerateDataError for a single class.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// --- buckets ---------------------------------------------------------------------------

enum class Bucket { high, mid, tail };

std::string to_string(Bucket b);

/// Tail below `mid_from`, High at or above `high_from`.
struct BucketSpec {
  double mid_from = 10.0;
  double high_from = 1000.0;

  void validate() const;
  Bucket classify(double monthly_frequency) const;
};

struct QueryMetric {
  std::string system;
  std::string metric;  // "DCG" or "ERR"
  std::size_t k = 0;
  QueryId query_id = 0;
  double value = 0.0;
};

struct ReportRow {
  std::string system;
  Bucket bucket = Bucket::high;
  std::string metric;
  std::size_t k = 0;
  std::optional<double> value;                 // bucket mean; nullopt for an empty bucket
  std::optional<double> relative_improvement;  // percent vs baseline
  std::size_t n_queries = 0;
};

/// Mean per (system, bucket, metric, K) and percent improvement over `baseline`.
std::vector<ReportRow> bucketed_report(std::span<const QueryMetric> per_query,
                                       const std::map<QueryId, double>& monthly_frequency, const BucketSpec& spec,
                                       const std::string& baseline);

/// Columns: system,bucket,metric,K,value,relative_improvement,n_queries. Empty cells print N/A.
std::string report_to_csv(std::span<const ReportRow> rows);

/// Looks up a row; nullptr if absent.
const ReportRow* find_row(std::span<const ReportRow> rows, const std::string& system, Bucket bucket,
                          const std::string& metric, std::size_t k);

}  // namespace drrel::metrics
