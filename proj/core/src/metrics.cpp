#include "drrel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "drrel/error.hpp"

namespace drrel::metrics {

int grade_from_relevance(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("relevance must lie in [0,1]");
  int g = 0;
  for (double t : {0.2, 0.4, 0.6, 0.8}) {
    if (gamma >= t) ++g;
  }
  return g;
}

double gain_from_relevance(double gamma) { return std::ldexp(1.0, grade_from_relevance(gamma)) - 1.0; }

void JudgedRanking::validate() const {
  if (gains.size() != docs.size() || relevance.size() != docs.size()) {
    throw DomainError("judged ranking fields differ in length");
  }
  for (double g : gains) {
    if (!(g >= 0.0)) throw DomainError("gains must be nonnegative");
  }
  for (double r : relevance) {
    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("relevance must lie in [0,1]");
  }
}

JudgedRanking judge(const click_sim::CatalogQuery& query, std::span<const DocId> ranked) {
  JudgedRanking r;
  r.query_id = query.query_id;
  for (auto d : ranked) {
    const auto it = std::find_if(query.docs.begin(), query.docs.end(), [d](const auto& doc) { return doc.doc_id == d; });
    if (it == query.docs.end()) throw DomainError("document " + std::to_string(d) + " not in query");
    r.docs.push_back(d);
    r.gains.push_back(gain_from_relevance(it->relevance));
    r.relevance.push_back(it->relevance);
  }
  return r;
}

double dcg_at_k(std::span<const double> gains, std::size_t k) {
  if (k == 0) throw DomainError("K must be >= 1");
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(k, gains.size()); ++i) s += gains[i] / std::log2(static_cast<double>(i) + 2.0);
  return s;
}

double dcg_at_k(const JudgedRanking& r, std::size_t k) { return dcg_at_k(r.gains, k); }

double err_at_k(std::span<const double> relevance, std::size_t k) {
  if (k == 0) throw DomainError("K must be >= 1");
  double s = 0.0;
  double not_stopped = 1.0;
  for (std::size_t i = 0; i < std::min(k, relevance.size()); ++i) {
    s += not_stopped * relevance[i] / static_cast<double>(i + 1);
    not_stopped *= 1.0 - relevance[i];
  }
  return s;
}

double err_at_k(const JudgedRanking& r, std::size_t k) { return err_at_k(r.relevance, k); }

double GsbResult::delta() const {
  const auto total = good + same + bad;
  if (total == 0) return 0.0;
  return (static_cast<double>(good) - static_cast<double>(bad)) / static_cast<double>(total);
}

GsbResult simulated_gsb(std::span<const JudgedRanking> a, std::span<const JudgedRanking> b,
                        const JudgeConfig& config) {
  std::map<QueryId, const JudgedRanking*> bm;
  for (const auto& r : b) {
    if (!bm.emplace(r.query_id, &r).second) throw ConfigError("duplicate query in side B");
  }
  if (a.size() != bm.size()) throw ConfigError("GSB sides cover different query sets");
  GsbResult out;
  std::set<QueryId> seen;
  for (const auto& ra : a) {
    if (!seen.insert(ra.query_id).second) throw ConfigError("duplicate query in side A");
    const auto it = bm.find(ra.query_id);
    if (it == bm.end()) throw ConfigError("query " + std::to_string(ra.query_id) + " missing from side B");
    const double diff = dcg_at_k(ra, config.k) - dcg_at_k(*it->second, config.k);
    if (diff > config.tie_epsilon) {
      ++out.good;
    } else if (-diff > config.tie_epsilon) {
      ++out.bad;
    } else {
      ++out.same;
    }
  }
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw AlignmentError("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return scores[x] < scores[y]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]] != 0) {
        rank_sum += midrank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw DegenerateDataError("AUC needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::high: return "High";
    case Bucket::mid: return "Mid";
    case Bucket::tail: return "Tail";
  }
  return "?";
}

void BucketSpec::validate() const {
  if (!(mid_from < high_from)) throw ConfigError("bucket thresholds must be strictly increasing");
}

Bucket BucketSpec::classify(double f) const {
  if (f >= high_from) return Bucket::high;
  if (f >= mid_from) return Bucket::mid;
  return Bucket::tail;
}

std::vector<ReportRow> bucketed_report(std::span<const QueryMetric> per_query,
                                       const std::map<QueryId, double>& monthly_frequency, const BucketSpec& spec,
                                       const std::string& baseline) {
  spec.validate();
  using Key = std::tuple<std::string, std::size_t, Bucket>;  // metric, K, bucket
  std::map<std::string, std::map<Key, std::pair<double, std::size_t>>> sums;
  std::vector<std::string> systems;
  std::set<std::pair<std::string, std::size_t>> metrics;
  for (const auto& m : per_query) {
    const auto f = monthly_frequency.find(m.query_id);
    if (f == monthly_frequency.end()) throw ConfigError("no frequency for query " + std::to_string(m.query_id));
    if (std::find(systems.begin(), systems.end(), m.system) == systems.end()) systems.push_back(m.system);
    metrics.emplace(m.metric, m.k);
    auto& cell = sums[m.system][Key{m.metric, m.k, spec.classify(f->second)}];
    cell.first += m.value;
    ++cell.second;
  }
  if (!sums.empty() && !sums.contains(baseline)) throw ConfigError("baseline system " + baseline + " has no rows");

  auto mean = [&](const std::string& sys, const Key& key) -> std::pair<std::optional<double>, std::size_t> {
    const auto& m = sums[sys];
    const auto it = m.find(key);
    if (it == m.end() || it->second.second == 0) return {std::nullopt, 0};
    return {it->second.first / static_cast<double>(it->second.second), it->second.second};
  };

  std::vector<ReportRow> rows;
  for (const auto& sys : systems) {
    for (auto bucket : {Bucket::high, Bucket::mid, Bucket::tail}) {
      for (const auto& [metric, k] : metrics) {
        const Key key{metric, k, bucket};
        ReportRow r{sys, bucket, metric, k, std::nullopt, std::nullopt, 0};
        std::tie(r.value, r.n_queries) = mean(sys, key);
        const auto base = mean(baseline, key).first;
        if (r.value && base && *base != 0.0) r.relative_improvement = 100.0 * (*r.value - *base) / *base;
        rows.push_back(std::move(r));
      }
    }
  }
  return rows;
}

std::string report_to_csv(std::span<const ReportRow> rows) {
  std::ostringstream os;
  os.precision(10);
  os << "system,bucket,metric,K,value,relative_improvement,n_queries\n";
  for (const auto& r : rows) {
    os << r.system << ',' << to_string(r.bucket) << ',' << r.metric << ',' << r.k << ',';
    if (r.value) os << *r.value; else os << "N/A";
    os << ',';
    if (r.relative_improvement) os << *r.relative_improvement; else os << "N/A";
    os << ',' << r.n_queries << '\n';
  }
  return os.str();
}

const ReportRow* find_row(std::span<const ReportRow> rows, const std::string& system, Bucket bucket,
                          const std::string& metric, std::size_t k) {
  for (const auto& r : rows) {
    if (r.system == system && r.bucket == bucket && r.metric == metric && r.k == k) return &r;
  }
  return nullptr;
}

}  // namespace drrel::metrics
