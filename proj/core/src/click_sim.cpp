#include "drrel/click_sim.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <string>
#include <unordered_set>

#include "drrel/error.hpp"

namespace drrel::click_sim {
namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0 && std::isfinite(v); }

}  // namespace

ClickModelParams::ClickModelParams(std::vector<double> theta, std::vector<double> eps_plus,
                                   std::vector<double> eps_minus)
    : theta_(std::move(theta)), eps_plus_(std::move(eps_plus)), eps_minus_(std::move(eps_minus)) {
  if (theta_.empty()) throw ConfigError("click model needs at least one position");
  if (eps_plus_.size() != theta_.size() || eps_minus_.size() != theta_.size()) {
    throw ConfigError("theta, eps_plus and eps_minus must have the same length");
  }
  for (std::size_t i = 0; i < theta_.size(); ++i) {
    const std::string at = " at position " + std::to_string(i + 1);
    if (!in_unit(theta_[i]) || !in_unit(eps_plus_[i]) || !in_unit(eps_minus_[i])) {
      throw ConfigError("click model parameter outside [0,1]" + at);
    }
    if (!(eps_minus_[i] < eps_plus_[i])) throw ConfigError("eps_minus must be < eps_plus" + at);
    if (!(theta_[i] > 0.0)) throw ConfigError("theta must be > 0 so that alpha > 0" + at);
  }
}

std::size_t ClickModelParams::index(int k) const {
  if (k < 1 || k > num_positions()) {
    throw DomainError("position " + std::to_string(k) + " outside 1.." +
                      std::to_string(num_positions()));
  }
  return static_cast<std::size_t>(k - 1);
}

double ClickModelParams::alpha(int k) const {
  const auto i = index(k);
  return theta_[i] * (eps_plus_[i] - eps_minus_[i]);
}

double ClickModelParams::beta(int k) const {
  const auto i = index(k);
  return theta_[i] * eps_minus_[i];
}

ClickModelParams ClickModelParams::default_web(int num_positions) {
  std::vector<double> theta, ep, em;
  for (int k = 1; k <= num_positions; ++k) {
    theta.push_back(std::pow(static_cast<double>(k), -0.8));
    ep.push_back(0.98 - 0.02 * (k - 1));
    em.push_back(0.1 / k);
  }
  return {std::move(theta), std::move(ep), std::move(em)};
}

double click_probability(const ClickModelParams& params, int k, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("gamma outside [0,1]");
  return params.alpha(k) * gamma + params.beta(k);
}

// --- catalog -----------------------------------------------------------------

std::size_t QueryCatalog::num_pairs() const {
  std::size_t n = 0;
  for (const auto& q : queries) n += q.docs.size();
  return n;
}

const CatalogQuery& QueryCatalog::query(QueryId id) const {
  // Generated catalogs use query_id == index; fall back to a scan otherwise.
  if (id < queries.size() && queries[id].query_id == id) return queries[id];
  auto it = std::find_if(queries.begin(), queries.end(),
                         [id](const CatalogQuery& q) { return q.query_id == id; });
  if (it == queries.end()) throw DomainError("unknown query_id " + std::to_string(id));
  return *it;
}

const CatalogDoc& QueryCatalog::doc(QueryId query_id, DocId doc_id) const {
  const auto& q = query(query_id);
  auto it = std::find_if(q.docs.begin(), q.docs.end(),
                         [doc_id](const CatalogDoc& d) { return d.doc_id == doc_id; });
  if (it == q.docs.end()) {
    throw DomainError("unknown doc_id " + std::to_string(doc_id) + " for query " +
                      std::to_string(query_id));
  }
  return *it;
}

void QueryCatalog::validate() const {
  if (queries.empty()) throw ConfigError("empty catalog");
  std::unordered_set<QueryId> qids;
  std::unordered_set<DocId> dids;
  for (const auto& q : queries) {
    if (!qids.insert(q.query_id).second) throw ConfigError("duplicate query_id");
    if (!(q.weight > 0.0) || !std::isfinite(q.weight)) throw ConfigError("query weight must be positive");
    for (const auto& d : q.docs) {
      if (!dids.insert(d.doc_id).second) throw ConfigError("duplicate doc_id");
      if (!in_unit(d.relevance)) throw ConfigError("relevance outside [0,1]");
    }
  }
}

double RelevancePrior::sample(Rng& rng) const {
  switch (kind) {
    case PriorKind::point:
      return a;
    case PriorKind::uniform:
      return a + (b - a) * uniform01(rng);
    case PriorKind::beta: {
      std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
      const double x = ga(rng);
      const double y = gb(rng);
      return x / (x + y);
    }
  }
  return a;
}

QueryCatalog generate_catalog(const CatalogConfig& config, std::uint64_t seed) {
  if (config.n_queries == 0 || config.docs_per_query == 0) {
    throw ConfigError("catalog sizes must be positive");
  }
  if (!(config.zipf_exponent > 0.0)) throw ConfigError("zipf_exponent must be > 0");
  const auto& p = config.prior;
  if (p.kind == PriorKind::point && !in_unit(p.a)) throw ConfigError("point prior outside [0,1]");
  if (p.kind == PriorKind::uniform && !(in_unit(p.a) && in_unit(p.b) && p.a <= p.b)) {
    throw ConfigError("uniform prior bounds must satisfy 0 <= lo <= hi <= 1");
  }
  if (p.kind == PriorKind::beta && !(p.a > 0.0 && p.b > 0.0)) {
    throw ConfigError("beta prior shape parameters must be positive");
  }

  Rng rng = make_rng(seed, 0);
  QueryCatalog catalog;
  catalog.queries.reserve(config.n_queries);
  for (std::size_t i = 0; i < config.n_queries; ++i) {
    CatalogQuery q;
    q.query_id = static_cast<QueryId>(i);
    q.weight = std::pow(static_cast<double>(i + 1), -config.zipf_exponent);
    q.docs.reserve(config.docs_per_query);
    for (std::size_t j = 0; j < config.docs_per_query; ++j) {
      CatalogDoc d;
      d.doc_id = static_cast<DocId>(i * config.docs_per_query + j);
      d.relevance = std::clamp(p.sample(rng), 0.0, 1.0);
      d.feature_seed = rng();
      q.docs.push_back(d);
    }
    catalog.queries.push_back(std::move(q));
  }
  return catalog;
}

// --- sessions ----------------------------------------------------------------

void SessionLog::validate() const {
  if (interactions.size() != docs.size()) {
    throw DomainError("session has " + std::to_string(docs.size()) + " docs but " +
                      std::to_string(interactions.size()) + " interactions");
  }
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    const auto& it = interactions[i];
    if (it.position != static_cast<int>(i + 1)) throw DomainError("positions must be exactly 1..n in order");
    if (it.doc_id != docs[i]) throw DomainError("interaction doc_id does not match ranked docs");
    if (it.query_id != query_id) throw DomainError("interaction query_id does not match session");
  }
}

RankingPolicy identity_policy() {
  return [](const CatalogQuery& q, Rng&) {
    std::vector<std::size_t> order(q.docs.size());
    std::iota(order.begin(), order.end(), 0);
    return order;
  };
}

RankingPolicy shuffled_policy() {
  return [](const CatalogQuery& q, Rng& rng) {
    std::vector<std::size_t> order(q.docs.size());
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with our own uniform draw so the permutation is portable.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    return order;
  };
}

RankingPolicy noisy_relevance_policy(double sigma) {
  return [sigma](const CatalogQuery& q, Rng& rng) {
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(q.docs.size());
    for (std::size_t i = 0; i < q.docs.size(); ++i) {
      scored.emplace_back(q.docs[i].relevance + noise(rng), i);
    }
    std::sort(scored.begin(), scored.end(),
              [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
    std::vector<std::size_t> order;
    order.reserve(scored.size());
    for (const auto& s : scored) order.push_back(s.second);
    return order;
  };
}

namespace {

// Cumulative query weights for sampling.
std::vector<double> cumulative_weights(const QueryCatalog& catalog) {
  std::vector<double> cdf;
  cdf.reserve(catalog.queries.size());
  double acc = 0.0;
  for (const auto& q : catalog.queries) {
    acc += q.weight;
    cdf.push_back(acc);
  }
  return cdf;
}

std::size_t sample_index(const std::vector<double>& cdf, Rng& rng) {
  const double u = uniform01(rng) * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

SimulatedSession simulate_one(const QueryCatalog& catalog, const ClickModelParams& params,
                              const RankingPolicy& policy, const SimulationConfig& config,
                              const std::vector<double>& cdf, std::int64_t ts, Rng& rng) {
  const auto& q = catalog.queries[sample_index(cdf, rng)];
  auto order = policy(q, rng);
  const auto shown = std::min<std::size_t>(order.size(), static_cast<std::size_t>(params.num_positions()));

  std::lognormal_distribution<double> exam_time(config.timing.examined_log_mu, config.timing.examined_log_sigma);
  std::exponential_distribution<double> skim_time(1.0 / config.timing.unexamined_mean_s);
  std::lognormal_distribution<double> dwell(config.timing.dwell_log_mu, config.timing.dwell_log_sigma);

  SimulatedSession s;
  s.log.query_id = q.query_id;
  s.log.docs.reserve(shown);
  s.log.interactions.reserve(shown);
  s.examined.reserve(shown);

  // One scan depth per session: E_k = [u <= theta_k] keeps each marginal at theta_k.
  const double depth = uniform01(rng);
  bool abandoned = false;
  for (std::size_t i = 0; i < shown; ++i) {
    const int k = static_cast<int>(i + 1);
    const auto& d = q.docs.at(order[i]);
    const bool examined = !abandoned && depth <= params.theta(k);
    const double perceived = params.eps_plus(k) * d.relevance + params.eps_minus(k) * (1.0 - d.relevance);
    const double u_click = uniform01(rng);
    const bool clicked = examined && u_click < perceived;

    Interaction it;
    it.query_id = q.query_id;
    it.doc_id = d.doc_id;
    it.position = k;
    it.clicked = clicked;
    it.display_time_s = examined ? exam_time(rng) : skim_time(rng);
    it.dwell_time_s = clicked ? dwell(rng) : 0.0;
    it.timestamp = ts;

    if (clicked && config.abandon_after_click > 0.0 && bernoulli(rng, config.abandon_after_click)) {
      abandoned = true;
    }
    s.log.docs.push_back(d.doc_id);
    s.log.interactions.push_back(it);
    s.examined.push_back(examined);
  }
  return s;
}

}  // namespace

std::vector<SimulatedSession> simulate_sessions(const QueryCatalog& catalog,
                                                const ClickModelParams& params,
                                                const RankingPolicy& policy,
                                                const SimulationConfig& config,
                                                std::uint64_t seed) {
  if (config.n_sessions == 0) return {};
  catalog.validate();
  if (config.span_hours <= 0) throw ConfigError("span_hours must be positive");
  if (config.chunk_size == 0) throw ConfigError("chunk_size must be positive");
  if (!(config.abandon_after_click >= 0.0 && config.abandon_after_click <= 1.0)) {
    throw ConfigError("abandon_after_click outside [0,1]");
  }

  const auto cdf = cumulative_weights(catalog);
  const std::size_t n = config.n_sessions;
  const std::size_t n_chunks = (n + config.chunk_size - 1) / config.chunk_size;
  std::vector<SimulatedSession> out(n);

  auto run_chunk = [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    const std::size_t lo = c * config.chunk_size;
    const std::size_t hi = std::min(n, lo + config.chunk_size);
    for (std::size_t i = lo; i < hi; ++i) {
      // Arrivals spread evenly over the span, so the stream is already time ordered.
      const auto offset = static_cast<std::int64_t>(i) * config.span_hours / static_cast<std::int64_t>(n);
      out[i] = simulate_one(catalog, params, policy, config, cdf, config.start_hour + offset, rng);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, n_chunks));
  if (jobs == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::future<void>> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t c = w; c < n_chunks; c += jobs) run_chunk(c);
      }));
    }
    for (auto& f : workers) f.get();
  }
  return out;
}

std::vector<SessionLog> logs_only(std::span<const SimulatedSession> sessions) {
  std::vector<SessionLog> logs;
  logs.reserve(sessions.size());
  for (const auto& s : sessions) logs.push_back(s.log);
  return logs;
}

std::vector<RandRecord> generate_randomization_data(const QueryCatalog& catalog,
                                                    const ClickModelParams& params,
                                                    const RandomizationConfig& config,
                                                    std::uint64_t seed) {
  catalog.validate();
  if (config.n == 0) return {};
  if (!in_unit(config.top1_examination)) throw ConfigError("top1_examination outside [0,1]");
  if (config.span_hours <= 0) throw ConfigError("span_hours must be positive");

  // Flattened pair index for uniform sampling over (q,d).
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(catalog.num_pairs());
  for (std::size_t qi = 0; qi < catalog.queries.size(); ++qi) {
    for (std::size_t di = 0; di < catalog.queries[qi].docs.size(); ++di) pairs.emplace_back(qi, di);
  }
  if (pairs.empty()) throw ConfigError("catalog has no documents");

  Rng rng = make_rng(seed, 0x7261'6e64ULL);
  const double ep = params.eps_plus(1);
  const double em = params.eps_minus(1);
  std::vector<RandRecord> out;
  out.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const auto pick = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pairs.size())),
                               pairs.size() - 1);
    const auto& q = catalog.queries[pairs[pick].first];
    const auto& d = q.docs[pairs[pick].second];
    const bool examined = bernoulli(rng, config.top1_examination);
    const bool clicked = bernoulli(rng, ep * d.relevance + em * (1.0 - d.relevance));
    RandRecord r;
    r.query_id = q.query_id;
    r.doc_id = d.doc_id;
    r.clicked = examined && clicked;
    r.timestamp = config.start_hour +
                  static_cast<std::int64_t>(i) * config.span_hours / static_cast<std::int64_t>(config.n);
    out.push_back(r);
  }
  return out;
}

}  // namespace drrel::click_sim
