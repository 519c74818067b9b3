#include "drrel/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "drrel/digest.hpp"
#include "drrel/error.hpp"
#include "drrel/neural_dr.hpp"
#include "drrel/rng.hpp"
#include "drrel/tracking.hpp"

namespace drrel::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config <-> JSON ---------------------------------------------------------------------

namespace {

/// Reads known keys from an object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown config key " + path_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json train_to_json(const mlp::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"warmup_steps", t.warmup_steps},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs}};
}

void train_from(Reader r, mlp::TrainConfig& t) {
  r.get("learning_rate", t.learning_rate);
  r.get("warmup_steps", t.warmup_steps);
  r.get("batch_size", t.batch_size);
  r.get("epochs", t.epochs);
  r.finish();
}

std::string prior_kind(click_sim::PriorKind k) {
  switch (k) {
    case click_sim::PriorKind::point: return "point";
    case click_sim::PriorKind::uniform: return "uniform";
    case click_sim::PriorKind::beta: return "beta";
  }
  return "uniform";
}

json config_json(const ExperimentConfig& c, bool with_local) {
  json j;
  j["seed"] = c.seed;
  if (with_local) {
    j["output_dir"] = c.output_dir;
    j["jobs"] = c.jobs;
  }
  j["catalog"] = {{"n_queries", c.catalog.n_queries},
                  {"docs_per_query", c.catalog.docs_per_query},
                  {"zipf_exponent", c.catalog.zipf_exponent},
                  {"prior", {{"kind", prior_kind(c.catalog.prior.kind)}, {"a", c.catalog.prior.a}, {"b", c.catalog.prior.b}}}};
  j["click_model"] = {{"positions", c.positions}, {"theta", c.theta}, {"eps_plus", c.eps_plus}, {"eps_minus", c.eps_minus}};
  const auto& m = c.misspecification;
  j["misspecification"] = {{"alpha", m.alpha}, {"beta", m.beta}, {"theta", m.theta}, {"eps_plus", m.eps_plus},
                           {"eps_minus", m.eps_minus}};
  const auto& s = c.simulation;
  j["simulation"] = {{"n_sessions", s.n_sessions},
                     {"start_hour", s.start_hour},
                     {"span_hours", s.span_hours},
                     {"abandon_after_click", s.abandon_after_click},
                     {"policy", s.policy},
                     {"policy_sigma", s.policy_sigma},
                     {"timing",
                      {{"examined_log_mu", s.timing.examined_log_mu},
                       {"examined_log_sigma", s.timing.examined_log_sigma},
                       {"unexamined_mean_s", s.timing.unexamined_mean_s},
                       {"dwell_log_mu", s.timing.dwell_log_mu},
                       {"dwell_log_sigma", s.timing.dwell_log_sigma}}}};
  j["randomization"] = {{"n", c.randomization.n},
                        {"top1_examination", c.randomization.top1_examination},
                        {"start_hour", c.randomization.start_hour},
                        {"span_hours", c.randomization.span_hours}};
  j["encoder"] = {{"dim", c.encoder.dim},
                  {"signal_dims", c.encoder.signal_dims},
                  {"shared_noise", c.encoder.shared_noise},
                  {"feature_noise", c.encoder.feature_noise}};
  j["examination"] = {{"n_trees", c.exam.n_trees},   {"max_depth", c.exam.max_depth},
                      {"shrinkage", c.exam.shrinkage}, {"min_leaf", c.exam.min_leaf},
                      {"l2", c.exam.l2},               {"max_bins", c.exam.max_bins},
                      {"holdout_fraction", c.exam_holdout_fraction}};
  j["imputation_train"] = train_to_json(c.imputation_train);
  j["affine_train"] = train_to_json(c.affine_train);
  j["tradeoff_train"] = train_to_json(c.tradeoff_train);
  j["buckets"] = {{"mid_from", c.buckets.mid_from}, {"high_from", c.buckets.high_from}};
  j["judge"] = {{"tie_epsilon", c.judge.tie_epsilon}, {"k", c.judge.k}};
  j["ks"] = c.ks;
  j["theory"] = {{"n_configs", c.theory.n_configs},
                 {"replications", c.theory.replications},
                 {"mc_seeds", c.theory.mc_seeds}};
  return j;
}

}  // namespace

click_sim::ClickModelParams ExperimentConfig::click_params() const {
  if (theta.empty() && eps_plus.empty() && eps_minus.empty()) return click_sim::ClickModelParams::default_web(positions);
  return {theta, eps_plus, eps_minus};
}

void ExperimentConfig::validate() const {
  const auto params = click_params();
  if (params.num_positions() != positions) throw ConfigError("click_model.positions disagrees with theta length");
  estimators::EstimatorParams::from_truth(params, misspecification);
  if (catalog.n_queries == 0 || catalog.docs_per_query == 0) throw ConfigError("catalog must be nonempty");
  if (simulation.n_sessions == 0) throw ConfigError("simulation.n_sessions must be positive");
  if (simulation.span_hours <= 0) throw ConfigError("simulation.span_hours must be positive");
  if (!(simulation.abandon_after_click >= 0.0 && simulation.abandon_after_click <= 1.0)) {
    throw ConfigError("simulation.abandon_after_click must lie in [0,1]");
  }
  if (simulation.policy != "noisy" && simulation.policy != "shuffled" && simulation.policy != "identity") {
    throw ConfigError("simulation.policy must be noisy, shuffled or identity");
  }
  if (randomization.n == 0) throw ConfigError("randomization.n must be positive");
  if (!(exam_holdout_fraction > 0.0 && exam_holdout_fraction < 1.0)) {
    throw ConfigError("examination.holdout_fraction must lie in (0,1)");
  }
  exam.validate();
  imputation_train.validate();
  affine_train.validate();
  tradeoff_train.validate();
  buckets.validate();
  if (ks.empty() || std::find(ks.begin(), ks.end(), 0u) != ks.end()) throw ConfigError("ks must be positive");
  if (judge.k == 0) throw ConfigError("judge.k must be positive");
  if (theory.replications < 2) throw ConfigError("theory.replications must be >= 2");
}

std::string ExperimentConfig::to_json() const { return config_json(*this, true).dump(2); }

std::string ExperimentConfig::hash() const { return digest_hex(config_json(*this, false).dump()); }

ExperimentConfig ExperimentConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader r(j, "config");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("jobs", c.jobs);
  {
    auto cat = r.child("catalog");
    cat.get("n_queries", c.catalog.n_queries);
    cat.get("docs_per_query", c.catalog.docs_per_query);
    cat.get("zipf_exponent", c.catalog.zipf_exponent);
    auto prior = cat.child("prior");
    std::string kind = prior_kind(c.catalog.prior.kind);
    prior.get("kind", kind);
    prior.get("a", c.catalog.prior.a);
    prior.get("b", c.catalog.prior.b);
    if (kind == "point") {
      c.catalog.prior.kind = click_sim::PriorKind::point;
    } else if (kind == "uniform") {
      c.catalog.prior.kind = click_sim::PriorKind::uniform;
    } else if (kind == "beta") {
      c.catalog.prior.kind = click_sim::PriorKind::beta;
    } else {
      throw ConfigError("catalog.prior.kind must be point, uniform or beta");
    }
    prior.finish();
    cat.finish();
  }
  {
    auto cm = r.child("click_model");
    cm.get("positions", c.positions);
    cm.get("theta", c.theta);
    cm.get("eps_plus", c.eps_plus);
    cm.get("eps_minus", c.eps_minus);
    cm.finish();
  }
  {
    auto m = r.child("misspecification");
    m.get("alpha", c.misspecification.alpha);
    m.get("beta", c.misspecification.beta);
    m.get("theta", c.misspecification.theta);
    m.get("eps_plus", c.misspecification.eps_plus);
    m.get("eps_minus", c.misspecification.eps_minus);
    m.finish();
  }
  {
    auto s = r.child("simulation");
    s.get("n_sessions", c.simulation.n_sessions);
    s.get("start_hour", c.simulation.start_hour);
    s.get("span_hours", c.simulation.span_hours);
    s.get("abandon_after_click", c.simulation.abandon_after_click);
    s.get("policy", c.simulation.policy);
    s.get("policy_sigma", c.simulation.policy_sigma);
    auto t = s.child("timing");
    t.get("examined_log_mu", c.simulation.timing.examined_log_mu);
    t.get("examined_log_sigma", c.simulation.timing.examined_log_sigma);
    t.get("unexamined_mean_s", c.simulation.timing.unexamined_mean_s);
    t.get("dwell_log_mu", c.simulation.timing.dwell_log_mu);
    t.get("dwell_log_sigma", c.simulation.timing.dwell_log_sigma);
    t.finish();
    s.finish();
  }
  {
    auto rd = r.child("randomization");
    rd.get("n", c.randomization.n);
    rd.get("top1_examination", c.randomization.top1_examination);
    rd.get("start_hour", c.randomization.start_hour);
    rd.get("span_hours", c.randomization.span_hours);
    rd.finish();
  }
  {
    auto e = r.child("encoder");
    e.get("dim", c.encoder.dim);
    e.get("signal_dims", c.encoder.signal_dims);
    e.get("shared_noise", c.encoder.shared_noise);
    e.get("feature_noise", c.encoder.feature_noise);
    e.finish();
  }
  {
    auto e = r.child("examination");
    e.get("n_trees", c.exam.n_trees);
    e.get("max_depth", c.exam.max_depth);
    e.get("shrinkage", c.exam.shrinkage);
    e.get("min_leaf", c.exam.min_leaf);
    e.get("l2", c.exam.l2);
    e.get("max_bins", c.exam.max_bins);
    e.get("holdout_fraction", c.exam_holdout_fraction);
    e.finish();
  }
  train_from(r.child("imputation_train"), c.imputation_train);
  train_from(r.child("affine_train"), c.affine_train);
  train_from(r.child("tradeoff_train"), c.tradeoff_train);
  {
    auto b = r.child("buckets");
    b.get("mid_from", c.buckets.mid_from);
    b.get("high_from", c.buckets.high_from);
    b.finish();
  }
  {
    auto jd = r.child("judge");
    jd.get("tie_epsilon", c.judge.tie_epsilon);
    jd.get("k", c.judge.k);
    jd.finish();
  }
  r.get("ks", c.ks);
  {
    auto t = r.child("theory");
    t.get("n_configs", c.theory.n_configs);
    t.get("replications", c.theory.replications);
    t.get("mc_seeds", c.theory.mc_seeds);
    t.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(std::string_view text, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = text.empty() ? config_json(ExperimentConfig{}, true) : json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + o);
    std::string pointer;
    std::string key = o.substr(0, eq);
    std::size_t start = 0;
    while (start <= key.size()) {
      const auto dot = key.find('.', start);
      pointer += "/" + key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value;
    try {
      value = json::parse(o.substr(eq + 1));
    } catch (const json::exception&) {
      value = o.substr(eq + 1);
    }
    j[json::json_pointer(pointer)] = value;
  }
  return ExperimentConfig::from_json(j.dump());
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"simulate",       "train-exam", "train-imp", "train-affine",
                                              "train-tradeoff", "score",      "evaluate",  "verify-theory"};
  return names;
}

// --- artifacts ----------------------------------------------------------------------------------

namespace {

struct Ctx {
  const ExperimentConfig& cfg;
  fs::path dir;
  std::string hash;
  std::string stage;
  std::map<std::string, std::string> inputs;   // name -> digest
  std::map<std::string, std::string> outputs;

  json meta() const { return {{"schema_version", kArtifactSchemaVersion}, {"config_hash", hash}, {"seed", cfg.seed}}; }

  std::string csv_header() const {
    return "# schema_version=" + std::to_string(kArtifactSchemaVersion) + " config_hash=" + hash +
           " seed=" + std::to_string(cfg.seed) + "\n";
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = dir / name;
    const auto tmp = dir / (name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write " + tmp.string());
      out << content;
      if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
    outputs[name] = digest_hex(content);
  }

  void write_json(const std::string& name, json payload) {
    json j;
    j["meta"] = meta();
    j["payload"] = std::move(payload);
    write(name, j.dump());
  }

  void write_csv(const std::string& name, const std::string& body) { write(name, csv_header() + body); }

  std::string read_raw(const std::string& name, const std::string& producer) {
    const auto path = dir / name;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw MissingArtifactError("missing " + path.string() + "; run stage '" + producer + "' first");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    auto text = ss.str();
    inputs[name] = digest_hex(text);
    return text;
  }

  void check_meta(const json& m, const std::string& name, const std::string& producer) const {
    if (m.value("schema_version", -1) != kArtifactSchemaVersion) {
      throw SchemaError(name + " has an unsupported schema version; rerun stage '" + producer + "'");
    }
    if (m.value("config_hash", std::string()) != hash) {
      throw StaleArtifactError(name + " was produced under config " + m.value("config_hash", std::string("?")) +
                               " but the current config is " + hash + "; rerun stage '" + producer + "'");
    }
  }

  json read_json(const std::string& name, const std::string& producer) {
    const auto text = read_raw(name, producer);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw SchemaError(name + " is not valid JSON: " + e.what());
    }
    if (!j.contains("meta") || !j.contains("payload")) throw SchemaError(name + " lacks an artifact header");
    check_meta(j["meta"], name, producer);
    return std::move(j["payload"]);
  }

  /// Returns the JSONL text after validating its header line.
  std::string read_jsonl(const std::string& name, const std::string& producer) {
    auto text = read_raw(name, producer);
    const auto nl = text.find('\n');
    json header;
    try {
      header = json::parse(text.substr(0, nl));
    } catch (const json::exception& e) {
      throw SchemaError(name + " has a malformed header: " + e.what());
    }
    check_meta(header, name, producer);
    return text;
  }

  /// CSV rows (without the header comment and column line).
  std::vector<std::vector<std::string>> read_csv(const std::string& name, const std::string& producer) {
    const auto text = read_raw(name, producer);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    const std::string expected = csv_header();
    if (line + "\n" != expected) {
      if (line.rfind("# schema_version=", 0) != 0) throw SchemaError(name + " lacks an artifact header");
      throw StaleArtifactError(name + " header '" + line + "' does not match the current config " + hash +
                               "; rerun stage '" + producer + "'");
    }
    std::getline(in, line);  // column names
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::size_t start = 0;
      while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      rows.push_back(std::move(cells));
    }
    return rows;
  }

  void write_manifest(double seconds) {
    json m;
    m["stage"] = stage;
    m["schema_version"] = kArtifactSchemaVersion;
    m["config_hash"] = hash;
    m["seed"] = cfg.seed;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["duration_s"] = seconds;
    std::ofstream out(dir / (stage + ".manifest.json"), std::ios::binary | std::ios::trunc);
    out << m.dump(2) << '\n';
  }
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::uint64_t seed_for(const ExperimentConfig& c, std::uint64_t stream) { return derive_seed(c.seed, stream); }

enum Stream : std::uint64_t {
  kCatalog = 1,
  kSessions,
  kRandomization,
  kEncoder,
  kImpInit,
  kImpTrain,
  kAffineInit,
  kAffineTrain,
  kTradeoffInit,
  kTradeoffTrain,
  kTheory
};

// catalog.json
json catalog_to_json(const click_sim::QueryCatalog& cat) {
  json qs = json::array();
  for (const auto& q : cat.queries) {
    json docs = json::array();
    for (const auto& d : q.docs) docs.push_back({d.doc_id, d.relevance, d.feature_seed});
    qs.push_back({{"id", q.query_id}, {"weight", q.weight}, {"docs", std::move(docs)}});
  }
  return {{"schema_version", click_sim::QueryCatalog::kSchemaVersion}, {"queries", std::move(qs)}};
}

click_sim::QueryCatalog catalog_from_json(const json& j) {
  if (j.value("schema_version", 0) != click_sim::QueryCatalog::kSchemaVersion) throw SchemaError("catalog version");
  click_sim::QueryCatalog cat;
  for (const auto& q : j.at("queries")) {
    click_sim::CatalogQuery cq;
    cq.query_id = q.at("id").get<click_sim::QueryId>();
    cq.weight = q.at("weight").get<double>();
    for (const auto& d : q.at("docs")) {
      cq.docs.push_back({d.at(0).get<click_sim::DocId>(), d.at(1).get<double>(), d.at(2).get<std::uint64_t>()});
    }
    cat.queries.push_back(std::move(cq));
  }
  cat.validate();
  return cat;
}

std::string rand_to_jsonl(const Ctx& ctx, std::span<const click_sim::RandRecord> recs) {
  std::string out = ctx.meta().dump() + "\n";
  for (const auto& r : recs) {
    out += json{{"query_id", r.query_id}, {"doc_id", r.doc_id}, {"click", r.clicked ? 1 : 0}, {"ts", r.timestamp}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<click_sim::RandRecord> rand_from_jsonl(const std::string& text) {
  std::vector<click_sim::RandRecord> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("query_id").get<click_sim::QueryId>(), j.at("doc_id").get<click_sim::DocId>(),
                   j.at("click").get<int>() != 0, j.at("ts").get<std::int64_t>()});
  }
  return out;
}

std::vector<click_sim::SessionLog> load_sessions(Ctx& ctx) {
  const auto text = ctx.read_jsonl("sessions.jsonl", "simulate");
  auto parsed = tracking::parse_click_log(text);
  if (!parsed.rejects.empty()) {
    throw SchemaError("sessions.jsonl line " + std::to_string(parsed.rejects.front().line) + ": " +
                      parsed.rejects.front().reason);
  }
  return std::move(parsed.sessions);
}

std::vector<std::vector<bool>> load_truth(Ctx& ctx) {
  const auto text = ctx.read_jsonl("examination_truth.jsonl", "simulate");
  std::vector<std::vector<bool>> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<bool> bits;
    for (const auto& b : json::parse(line)) bits.push_back(b.get<int>() != 0);
    out.push_back(std::move(bits));
  }
  return out;
}

click_sim::RankingPolicy make_policy(const SimulationSpec& s) {
  if (s.policy == "shuffled") return click_sim::shuffled_policy();
  if (s.policy == "identity") return click_sim::identity_policy();
  return click_sim::noisy_relevance_policy(s.policy_sigma);
}

imputation::SyntheticEncoder make_encoder(const ExperimentConfig& c, const click_sim::QueryCatalog& cat) {
  auto ec = c.encoder;
  ec.seed = seed_for(c, kEncoder);
  return imputation::SyntheticEncoder(cat, ec);
}

mlp::TrainConfig with_seed(mlp::TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}

std::string loss_csv(std::span<const double> trace) {
  constexpr std::size_t kWindow = 50;
  std::string out = "window,mean_loss\n";
  const auto s = mlp::smoothed(trace, std::min<std::size_t>(kWindow, std::max<std::size_t>(1, trace.size())));
  for (std::size_t i = 0; i < s.size(); ++i) out += std::to_string(i) + "," + num(s[i]) + "\n";
  return out;
}

// --- stages -----------------------------------------------------------------------------------

StageResult stage_simulate(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto cat = click_sim::generate_catalog(c.catalog, seed_for(c, kCatalog));
  const auto params = c.click_params();
  click_sim::SimulationConfig sc;
  sc.n_sessions = c.simulation.n_sessions;
  sc.start_hour = c.simulation.start_hour;
  sc.span_hours = c.simulation.span_hours;
  sc.abandon_after_click = c.simulation.abandon_after_click;
  sc.timing = c.simulation.timing;
  sc.jobs = c.jobs;
  const auto sims = click_sim::simulate_sessions(cat, params, make_policy(c.simulation), sc, seed_for(c, kSessions));
  const auto logs = click_sim::logs_only(sims);
  const auto rand = click_sim::generate_randomization_data(cat, params, c.randomization, seed_for(c, kRandomization));

  ctx.write_json("catalog.json", catalog_to_json(cat));
  std::string sessions = ctx.meta().dump() + "\n" + tracking::serialize_click_log(logs, false);
  ctx.write("sessions.jsonl", sessions);
  std::string truth = ctx.meta().dump() + "\n";
  for (const auto& s : sims) {
    json bits = json::array();
    for (bool b : s.examined) bits.push_back(b ? 1 : 0);
    truth += bits.dump() + "\n";
  }
  ctx.write("examination_truth.jsonl", truth);
  ctx.write("randomization.jsonl", rand_to_jsonl(ctx, rand));
  return {{"catalog.json", "sessions.jsonl", "examination_truth.jsonl", "randomization.jsonl"},
          true,
          std::to_string(logs.size()) + " sessions, " + std::to_string(rand.size()) + " randomization records"};
}

StageResult stage_train_exam(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto sessions = load_sessions(ctx);
  const auto truth = load_truth(ctx);
  if (truth.size() != sessions.size()) throw SchemaError("examination_truth.jsonl does not align with sessions");
  const int page = c.positions;
  const auto n_hold = static_cast<std::size_t>(std::floor(c.exam_holdout_fraction * static_cast<double>(sessions.size())));
  const auto n_train = sessions.size() - n_hold;
  const std::span<const click_sim::SessionLog> train(sessions.data(), n_train);
  const std::span<const click_sim::SessionLog> hold(sessions.data() + n_train, n_hold);

  const auto examples = examination::mine_exam_labels(train, page);
  const auto result = examination::train_exam_model(examples, c.exam);

  std::vector<double> scores, label_scores;
  std::vector<int> hidden, mined;
  for (std::size_t i = 0; i < hold.size(); ++i) {
    const auto e = examination::exam_predict_session(result.model, hold[i], page);
    for (std::size_t j = 0; j < e.size(); ++j) {
      scores.push_back(e[j]);
      hidden.push_back(truth[n_train + i][j] ? 1 : 0);
      if (auto l = examination::label_from_display_time(hold[i].interactions[j].display_time_s)) {
        label_scores.push_back(e[j]);
        mined.push_back(*l ? 1 : 0);
      }
    }
  }
  const double auc_hidden = scores.empty() ? std::nan("") : metrics::roc_auc(scores, hidden);
  const double auc_mined = label_scores.empty() ? std::nan("") : metrics::roc_auc(label_scores, mined);

  const auto curves = examination::exam_curves(result.model, sessions, page);
  ctx.write_json("exam_model.json", json::parse(result.model.to_json()));
  ctx.write_csv("exam_position_curve.csv", examination::curve_to_csv(curves.by_position, "position"));
  ctx.write_csv("exam_anchor_curve.csv", examination::curve_to_csv(curves.below_anchor_by_offset, "offset"));
  ctx.write_csv("exam_anchor_position_curve.csv",
                examination::curve_to_csv(curves.below_anchor_by_position, "position"));
  std::string eval = "metric,value\n";
  eval += "auc_hidden_examination_holdout," + num(auc_hidden) + "\n";
  eval += "auc_mined_labels_holdout," + num(auc_mined) + "\n";
  eval += "n_train_examples," + std::to_string(examples.size()) + "\n";
  eval += "n_holdout_interactions," + std::to_string(scores.size()) + "\n";
  eval += "loss_initial," + num(result.loss_trace.front()) + "\n";
  eval += "loss_final," + num(result.loss_trace.back()) + "\n";
  ctx.write_csv("exam_eval.csv", eval);
  return {{"exam_model.json", "exam_position_curve.csv", "exam_anchor_curve.csv", "exam_anchor_position_curve.csv",
           "exam_eval.csv"},
          true,
          "holdout AUC vs hidden examination " + num(auc_hidden)};
}

StageResult stage_train_imp(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto cat = catalog_from_json(ctx.read_json("catalog.json", "simulate"));
  const auto rand = rand_from_jsonl(ctx.read_jsonl("randomization.jsonl", "simulate"));
  const auto enc = make_encoder(c, cat);
  auto model = imputation::make_model(enc.dim(), seed_for(c, kImpInit));
  const auto res = imputation::imp_train(std::move(model), enc, rand, with_seed(c.imputation_train, seed_for(c, kImpTrain)));
  ctx.write_json("imputation_model.json", json::parse(res.model.to_checkpoint()));
  ctx.write_csv("imputation_loss.csv", loss_csv(res.loss_trace));
  return {{"imputation_model.json", "imputation_loss.csv"}, true, "imputation trained"};
}

std::vector<std::vector<double>> features_from_json(const json& j) { return j.get<std::vector<std::vector<double>>>(); }

StageResult stage_train_affine(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto sessions = load_sessions(ctx);
  const auto rand = rand_from_jsonl(ctx.read_jsonl("randomization.jsonl", "simulate"));
  const auto exam = examination::GbdtModel::from_json(ctx.read_json("exam_model.json", "train-exam").dump());
  const auto annotated = tracking::attach_examination(sessions, exam, c.positions);
  const auto joined = neural_dr::replay_and_join(annotated, rand, c.jobs);
  const auto snap = joined.dicts.snapshot();

  auto model = neural_dr::ApproxAffineModel::make(tracking::kFeatureDim, seed_for(c, kAffineInit));
  const auto res = neural_dr::approx_affine_train(std::move(model), joined.features, rand,
                                                  with_seed(c.affine_train, seed_for(c, kAffineTrain)));

  ctx.write_json("tracking_snapshot.json", json::parse(snap->to_json()));
  ctx.write_json("rand_features.json", joined.features);
  std::vector<std::pair<click_sim::QueryId, click_sim::DocId>> pairs;
  for (const auto& r : rand) pairs.emplace_back(r.query_id, r.doc_id);
  ctx.write_csv("rand_click_features.csv", tracking::features_to_csv(*snap, pairs));
  ctx.write_json("affine_model.json", json::parse(res.model.to_checkpoint()));
  ctx.write_csv("affine_loss.csv", loss_csv(res.loss_trace));
  return {{"tracking_snapshot.json", "rand_features.json", "rand_click_features.csv", "affine_model.json",
           "affine_loss.csv"},
          true,
          std::to_string(snap->monthly.table.size()) + " pairs tracked"};
}

StageResult stage_train_tradeoff(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto cat = catalog_from_json(ctx.read_json("catalog.json", "simulate"));
  const auto rand = rand_from_jsonl(ctx.read_jsonl("randomization.jsonl", "simulate"));
  const auto features = features_from_json(ctx.read_json("rand_features.json", "train-affine"));
  const auto imp_bytes_before = ctx.read_raw("imputation_model.json", "train-imp");
  const auto aff_bytes_before = ctx.read_raw("affine_model.json", "train-affine");
  const auto imp = mlp::MlpModel::from_checkpoint(ctx.read_json("imputation_model.json", "train-imp").dump());
  const auto aff =
      neural_dr::ApproxAffineModel::from_checkpoint(ctx.read_json("affine_model.json", "train-affine").dump());
  const auto enc = make_encoder(c, cat);

  auto model = neural_dr::TradeoffModel::make(tracking::kFeatureDim, seed_for(c, kTradeoffInit));
  const auto res = neural_dr::tradeoff_train(std::move(model), features, rand, imp, enc, aff,
                                             with_seed(c.tradeoff_train, seed_for(c, kTradeoffTrain)));

  if (ctx.read_raw("imputation_model.json", "train-imp") != imp_bytes_before ||
      ctx.read_raw("affine_model.json", "train-affine") != aff_bytes_before) {
    throw InvariantError("frozen checkpoints changed on disk during trade-off training");
  }
  ctx.write_json("tradeoff_model.json", json::parse(res.model.to_checkpoint()));
  ctx.write_csv("tradeoff_loss.csv", loss_csv(res.loss_trace));

  neural_dr::ScorerBundle bundle;
  bundle.imputation_path = "imputation_model.json";
  bundle.imputation_digest = digest_hex(imp_bytes_before);
  bundle.affine_path = "affine_model.json";
  bundle.affine_digest = digest_hex(aff_bytes_before);
  bundle.tradeoff_path = "tradeoff_model.json";
  bundle.tradeoff_digest = ctx.outputs.at("tradeoff_model.json");
  ctx.write_json("scorer.json", json::parse(bundle.to_json()));
  return {{"tradeoff_model.json", "tradeoff_loss.csv", "scorer.json"}, true, "trade-off trained"};
}

StageResult stage_score(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto bundle = neural_dr::ScorerBundle::from_json(ctx.read_json("scorer.json", "train-tradeoff").dump());
  auto load_checked = [&](const std::string& path, const std::string& digest, const std::string& producer) {
    const auto raw = ctx.read_raw(path, producer);
    if (digest_hex(raw) != digest) {
      throw StaleArtifactError(path + " changed since the scorer bundle was written; rerun stage '" + producer + "'");
    }
    return ctx.read_json(path, producer).dump();
  };
  const auto imp = mlp::MlpModel::from_checkpoint(load_checked(bundle.imputation_path, bundle.imputation_digest, "train-imp"));
  const auto aff =
      neural_dr::ApproxAffineModel::from_checkpoint(load_checked(bundle.affine_path, bundle.affine_digest, "train-affine"));
  const auto trd =
      neural_dr::TradeoffModel::from_checkpoint(load_checked(bundle.tradeoff_path, bundle.tradeoff_digest, "train-tradeoff"));
  const auto cat = catalog_from_json(ctx.read_json("catalog.json", "simulate"));
  const auto snap = tracking::DictSnapshot::from_json(ctx.read_json("tracking_snapshot.json", "train-affine").dump());
  const auto exam = examination::GbdtModel::from_json(ctx.read_json("exam_model.json", "train-exam").dump());
  const auto sessions = load_sessions(ctx);
  const auto enc = make_encoder(c, cat);

  // Closed-form estimators over the last month of logged interactions.
  const auto est = estimators::EstimatorParams::from_truth(c.click_params(), c.misspecification);
  struct PairLog {
    std::vector<estimators::PositionClick> data;
    std::vector<double> e_hat;
  };
  std::map<tracking::PairKey, PairLog> logs;
  std::int64_t last_ts = 0;
  for (const auto& s : sessions) last_ts = std::max(last_ts, s.timestamp());
  const auto from_ts = last_ts - tracking::window_hours(tracking::WindowKind::monthly) + 1;
  for (const auto& s : sessions) {
    if (s.timestamp() < from_ts) continue;
    const auto e = examination::exam_predict_session(exam, s, c.positions);
    for (std::size_t i = 0; i < s.interactions.size(); ++i) {
      const auto& it = s.interactions[i];
      auto& pl = logs[tracking::pair_key(it.query_id, it.doc_id)];
      pl.data.push_back({it.position, it.clicked});
      pl.e_hat.push_back(e[i]);
    }
  }

  const std::vector<std::string> systems{"imputation", "approx-affine", "approx-dr", "affine-offline", "dr-offline"};
  std::string body = "system,query_id,doc_id,score,rank\n";
  std::string parts = "query_id,doc_id,gamma_imp,gamma_aff,zeta,dr,monthly_impressions\n";
  for (const auto& q : cat.queries) {
    std::map<click_sim::DocId, std::vector<double>> scored;
    std::vector<click_sim::DocId> cands;
    for (const auto& d : q.docs) {
      cands.push_back(d.doc_id);
      const auto s = neural_dr::dr_score(q.query_id, d.doc_id, snap, imp, enc, aff, trd);
      const auto it = logs.find(tracking::pair_key(q.query_id, d.doc_id));
      double aff_off = 0.0, dr_off = s.gamma_imp;
      if (it != logs.end()) {
        aff_off = estimators::clamp_unit(estimators::affine_estimate(it->second.data, est));
        dr_off = estimators::clamp_unit(estimators::dr_estimate(it->second.data, est, s.gamma_imp, it->second.e_hat));
      }
      scored[d.doc_id] = {s.gamma_imp, s.gamma_aff, s.rank_value(), aff_off, dr_off};
      const auto* ps = snap.monthly.table.find(q.query_id, d.doc_id);
      parts += std::to_string(q.query_id) + "," + std::to_string(d.doc_id) + "," + num(s.gamma_imp) + "," +
               num(s.gamma_aff) + "," + num(s.zeta) + "," + num(s.value) + "," +
               std::to_string(ps ? ps->impressions : 0) + "\n";
    }
    for (std::size_t si = 0; si < systems.size(); ++si) {
      const auto ranked = neural_dr::rank_documents(
          q.query_id, cands, [&](click_sim::QueryId, click_sim::DocId d) { return scored.at(d)[si]; });
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        body += systems[si] + "," + std::to_string(q.query_id) + "," + std::to_string(ranked[r]) + "," +
                num(scored.at(ranked[r])[si]) + "," + std::to_string(r + 1) + "\n";
      }
    }
  }
  ctx.write_csv("scores.csv", body);
  ctx.write_csv("dr_components.csv", parts);
  return {{"scores.csv", "dr_components.csv"}, true, std::to_string(cat.queries.size()) + " queries scored"};
}

StageResult stage_evaluate(Ctx& ctx) {
  const auto& c = ctx.cfg;
  const auto rows = ctx.read_csv("scores.csv", "score");
  const auto cat = catalog_from_json(ctx.read_json("catalog.json", "simulate"));
  const auto sessions = load_sessions(ctx);

  std::map<std::string, std::map<click_sim::QueryId, std::vector<std::pair<int, click_sim::DocId>>>> rankings;
  std::vector<std::string> systems;
  for (const auto& r : rows) {
    if (r.size() != 5) throw SchemaError("scores.csv rows need 5 columns");
    if (std::find(systems.begin(), systems.end(), r[0]) == systems.end()) systems.push_back(r[0]);
    rankings[r[0]][static_cast<click_sim::QueryId>(std::stoul(r[1]))].emplace_back(
        std::stoi(r[4]), static_cast<click_sim::DocId>(std::stoul(r[2])));
  }

  // Realized sessions per query over the last four weeks.
  std::map<click_sim::QueryId, double> freq;
  for (const auto& q : cat.queries) freq[q.query_id] = 0.0;
  std::int64_t last_ts = 0;
  for (const auto& s : sessions) last_ts = std::max(last_ts, s.timestamp());
  const auto from_ts = last_ts - tracking::window_hours(tracking::WindowKind::monthly) + 1;
  for (const auto& s : sessions) {
    if (s.timestamp() >= from_ts) freq[s.query_id] += 1.0;
  }

  std::vector<metrics::QueryMetric> per_query;
  std::map<std::string, std::vector<metrics::JudgedRanking>> judged;
  std::string pq = "system,query_id,bucket,metric,K,value\n";
  for (const auto& sys : systems) {
    for (auto& [qid, list] : rankings[sys]) {
      std::sort(list.begin(), list.end());
      std::vector<click_sim::DocId> docs;
      for (const auto& [rank, d] : list) docs.push_back(d);
      auto jr = metrics::judge(cat.query(qid), docs);
      const auto bucket = metrics::to_string(c.buckets.classify(freq.at(qid)));
      for (auto k : c.ks) {
        for (const char* metric : {"DCG", "ERR"}) {
          const double v = std::string(metric) == "DCG" ? metrics::dcg_at_k(jr, k) : metrics::err_at_k(jr, k);
          per_query.push_back({sys, metric, k, qid, v});
          pq += sys + "," + std::to_string(qid) + "," + bucket + "," + metric + "," + std::to_string(k) + "," + num(v) + "\n";
        }
      }
      judged[sys].push_back(std::move(jr));
    }
  }
  const auto report = metrics::bucketed_report(per_query, freq, c.buckets, "approx-affine");

  std::string gsb = "system_a,system_b,good,same,bad,delta_gsb\n";
  for (const auto& sys : systems) {
    if (sys == "approx-dr") continue;
    const auto g = metrics::simulated_gsb(judged["approx-dr"], judged[sys], c.judge);
    gsb += "approx-dr," + sys + "," + std::to_string(g.good) + "," + std::to_string(g.same) + "," +
           std::to_string(g.bad) + "," + num(g.delta()) + "\n";
  }
  std::string buckets = "bucket,n_queries\n";
  std::map<std::string, std::size_t> counts;
  for (const auto& [q, f] : freq) ++counts[metrics::to_string(c.buckets.classify(f))];
  for (const auto* b : {"High", "Mid", "Tail"}) buckets += std::string(b) + "," + std::to_string(counts[b]) + "\n";

  ctx.write_csv("per_query_metrics.csv", pq);
  ctx.write_csv("report.csv", metrics::report_to_csv(report));
  ctx.write_csv("gsb.csv", gsb);
  ctx.write_csv("buckets.csv", buckets);
  return {{"per_query_metrics.csv", "report.csv", "gsb.csv", "buckets.csv"}, true, "evaluation written"};
}

StageResult stage_verify_theory(Ctx& ctx) {
  auto tc = ctx.cfg.theory;
  tc.seed = seed_for(ctx.cfg, kTheory);
  tc.jobs = ctx.cfg.jobs;
  const auto rep = theory::verify_theory(tc);
  ctx.write_csv("theory_report.csv", theory::rows_to_csv(rep.rows));
  ctx.write_csv("theory_checks.csv", theory::checks_to_csv(rep.checks));
  std::string summary;
  for (const auto& ch : rep.checks) summary += (ch.passed ? "PASS " : "FAIL ") + ch.name + ": " + ch.detail + "\n";
  return {{"theory_report.csv", "theory_checks.csv"}, rep.all_passed(), summary};
}

}  // namespace

StageResult run_stage(std::string_view stage, const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(config.output_dir);
  Ctx ctx{config, fs::path(config.output_dir), config.hash(), std::string(stage), {}, {}};
  StageResult result;
  if (stage == "simulate") {
    result = stage_simulate(ctx);
  } else if (stage == "train-exam") {
    result = stage_train_exam(ctx);
  } else if (stage == "train-imp") {
    result = stage_train_imp(ctx);
  } else if (stage == "train-affine") {
    result = stage_train_affine(ctx);
  } else if (stage == "train-tradeoff") {
    result = stage_train_tradeoff(ctx);
  } else if (stage == "score") {
    result = stage_score(ctx);
  } else if (stage == "evaluate") {
    result = stage_evaluate(ctx);
  } else if (stage == "verify-theory") {
    result = stage_verify_theory(ctx);
  } else {
    throw ConfigError("unknown stage '" + std::string(stage) + "'");
  }
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  ctx.write_manifest(elapsed.count());
  return result;
}

std::vector<StageResult> run_all(const ExperimentConfig& config) {
  std::vector<StageResult> out;
  for (const auto& s : stage_names()) out.push_back(run_stage(s, config));
  return out;
}

}  // namespace drrel::pipeline
