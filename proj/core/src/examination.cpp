#include "drrel/examination.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "drrel/error.hpp"
#include "drrel/mlp.hpp"

namespace drrel::examination {

std::array<double, ExamFeatures::kDim> ExamFeatures::to_array() const {
  return {static_cast<double>(position),
          clicked ? 1.0 : 0.0,
          static_cast<double>(clicks_before),
          static_cast<double>(dist_prev_click),
          static_cast<double>(session_click_total),
          is_last_on_page ? 1.0 : 0.0};
}

std::optional<bool> label_from_display_time(double t) {
  if (t > kPositiveDisplayTime) return true;
  if (t < kNegativeDisplayTime) return false;
  return std::nullopt;
}

ExamFeatures extract_exam_features(const SessionLog& session, int position, int page_size) {
  if (position < 1 || static_cast<std::size_t>(position) > session.interactions.size()) {
    throw DomainError("position " + std::to_string(position) + " not displayed in session");
  }
  ExamFeatures f;
  f.position = position;
  f.dist_prev_click = page_size + 1;
  for (const auto& it : session.interactions) {
    if (!it.clicked) continue;
    ++f.session_click_total;
    if (it.position < position) {
      ++f.clicks_before;
      f.dist_prev_click = position - it.position;  // interactions are in position order
    }
  }
  f.clicked = session.interactions[static_cast<std::size_t>(position - 1)].clicked;
  f.is_last_on_page = position == page_size;
  return f;
}

std::vector<ExamLabeledExample> mine_exam_labels(std::span<const SessionLog> sessions, int page_size) {
  std::vector<ExamLabeledExample> out;
  for (const auto& s : sessions) {
    for (const auto& it : s.interactions) {
      const auto label = label_from_display_time(it.display_time_s);
      if (!label) continue;
      out.push_back({extract_exam_features(s, it.position, page_size), *label});
    }
  }
  return out;
}

// --- trees ---------------------------------------------------------------------------

void GbdtConfig::validate() const {
  if (max_depth == 0) throw ConfigError("max_depth must be >= 1");
  if (!(shrinkage >= 0.0)) throw ConfigError("shrinkage must be >= 0");
  if (min_leaf == 0) throw ConfigError("min_leaf must be >= 1");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be >= 0");
  if (max_bins < 2 || max_bins > 65535) throw ConfigError("max_bins must be in [2, 65535]");
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

double GbdtModel::raw_score(std::span<const double> x) const {
  if (x.size() != num_features) throw DimensionError("GBDT expects " + std::to_string(num_features) + " features");
  double s = init_log_odds;
  for (const auto& t : trees) s += shrinkage * t.predict(x);
  return s;
}

double GbdtModel::predict_proba(std::span<const double> x) const { return mlp::sigmoid(raw_score(x)); }

std::string GbdtModel::to_json() const {
  nlohmann::json j;
  j["format"] = "drrel.gbdt";
  j["version"] = 1;
  j["shrinkage"] = shrinkage;
  j["init_log_odds"] = init_log_odds;
  j["num_features"] = num_features;
  auto& jt = j["trees"] = nlohmann::json::array();
  for (const auto& t : trees) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) {
        nodes.push_back({{"leaf", n.value}});
      } else {
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    jt.push_back(std::move(nodes));
  }
  return j.dump();
}

GbdtModel GbdtModel::from_json(std::string_view text) {
  GbdtModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "drrel.gbdt" || j.value("version", 0) != 1) {
      throw SchemaError("not a version-1 GBDT model file");
    }
    m.shrinkage = j.at("shrinkage").get<double>();
    m.init_log_odds = j.at("init_log_odds").get<double>();
    m.num_features = j.at("num_features").get<std::size_t>();
    for (const auto& jt : j.at("trees")) {
      RegressionTree t;
      for (const auto& jn : jt) {
        TreeNode n;
        if (jn.contains("leaf")) {
          n.value = jn.at("leaf").get<double>();
        } else {
          n.feature = jn.at("feature").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
        }
        t.nodes.push_back(n);
      }
      const auto size = static_cast<int>(t.nodes.size());
      for (const auto& n : t.nodes) {
        if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size ||
                             n.feature >= static_cast<int>(m.num_features))) {
          throw SchemaError("GBDT node references out of range");
        }
      }
      if (t.nodes.empty()) throw SchemaError("empty tree");
      m.trees.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed GBDT model: ") + e.what());
  }
  return m;
}

namespace {

struct BinnedData {
  std::vector<std::vector<double>> edges;         // per feature, ascending bin upper edges
  std::vector<std::vector<std::uint16_t>> bins;   // per feature, per sample
};

BinnedData bin_features(std::span<const std::vector<double>> x, std::size_t n_features, std::size_t max_bins) {
  BinnedData b;
  b.edges.resize(n_features);
  b.bins.assign(n_features, std::vector<std::uint16_t>(x.size()));
  std::vector<double> col(x.size());
  for (std::size_t f = 0; f < n_features; ++f) {
    for (std::size_t i = 0; i < x.size(); ++i) col[i] = x[i][f];
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> edges;
    if (uniq.size() <= max_bins) {
      edges = uniq;
    } else {
      for (std::size_t q = 1; q <= max_bins; ++q) {
        const auto at = std::min(sorted.size() - 1, q * sorted.size() / max_bins);
        edges.push_back(sorted[q == max_bins ? sorted.size() - 1 : at]);
      }
      edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      b.bins[f][i] = static_cast<std::uint16_t>(std::lower_bound(edges.begin(), edges.end(), col[i]) - edges.begin());
    }
    b.edges[f] = std::move(edges);
  }
  return b;
}

struct TreeBuilder {
  const BinnedData& data;
  std::span<const double> grad;
  std::span<const double> hess;
  const GbdtConfig& config;
  RegressionTree tree;

  double leaf_value(double g, double h) const { return -g / (h + config.l2); }
  double score(double g, double h) const { return g * g / (h + config.l2); }

  int build(std::vector<std::size_t>& idx, std::size_t depth) {
    double g = 0.0, h = 0.0;
    for (auto i : idx) {
      g += grad[i];
      h += hess[i];
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{});
    tree.nodes.back().value = leaf_value(g, h);
    if (depth >= config.max_depth || idx.size() < 2 * config.min_leaf) return id;

    const double parent = score(g, h);
    double best_gain = 1e-12;
    int best_f = -1;
    std::size_t best_bin = 0;
    for (std::size_t f = 0; f < data.edges.size(); ++f) {
      const auto nb = data.edges[f].size();
      if (nb < 2) continue;
      std::vector<double> hg(nb, 0.0), hh(nb, 0.0);
      std::vector<std::size_t> hn(nb, 0);
      for (auto i : idx) {
        const auto bin = data.bins[f][i];
        hg[bin] += grad[i];
        hh[bin] += hess[i];
        ++hn[bin];
      }
      double gl = 0.0, hl = 0.0;
      std::size_t nl = 0;
      for (std::size_t bin = 0; bin + 1 < nb; ++bin) {
        gl += hg[bin];
        hl += hh[bin];
        nl += hn[bin];
        const std::size_t nr = idx.size() - nl;
        if (nl < config.min_leaf || nr < config.min_leaf) continue;
        const double gain = score(gl, hl) + score(g - gl, h - hl) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_bin = bin;
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<std::size_t> left, right;
    const auto& col = data.bins[static_cast<std::size_t>(best_f)];
    for (auto i : idx) (col[i] <= best_bin ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_f;
    node.threshold = data.edges[static_cast<std::size_t>(best_f)][best_bin];
    node.left = l;
    node.right = r;
    return id;
  }
};

double mean_log_loss(std::span<const double> raw, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) s += mlp::logistic_loss_from_logit(raw[i], y[i]);
  return s / static_cast<double>(raw.size());
}

}  // namespace

GbdtTrainResult gbdt_train(std::span<const std::vector<double>> features, std::span<const double> labels,
                           const GbdtConfig& config) {
  config.validate();
  if (features.size() != labels.size()) throw DimensionError("features and labels differ in length");
  if (features.empty()) throw EmptyDataError("gbdt_train: no examples");
  const std::size_t n = features.size();
  const std::size_t n_features = features.front().size();
  double positives = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].size() != n_features) throw DimensionError("ragged feature rows");
    if (labels[i] != 0.0 && labels[i] != 1.0) throw DomainError("labels must be 0 or 1");
    positives += labels[i];
  }
  if (positives == 0.0 || positives == static_cast<double>(n)) {
    throw DegenerateDataError("gbdt_train: training data contains a single class");
  }

  GbdtTrainResult result;
  auto& model = result.model;
  model.shrinkage = config.shrinkage;
  model.num_features = n_features;
  const double base = positives / static_cast<double>(n);
  model.init_log_odds = std::log(base / (1.0 - base));

  const auto binned = bin_features(features, n_features, config.max_bins);
  std::vector<double> raw(n, model.init_log_odds), grad(n), hess(n), trial(n);
  double loss = mean_log_loss(raw, labels);
  result.loss_trace.push_back(loss);

  for (std::size_t t = 0; t < config.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = mlp::sigmoid(raw[i]);
      grad[i] = p - labels[i];
      hess[i] = std::max(p * (1.0 - p), 1e-12);
    }
    TreeBuilder builder{binned, grad, hess, config, {}};
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    builder.build(idx, 0);
    RegressionTree tree = std::move(builder.tree);

    // Backtrack on the leaf values so the training loss never increases.
    double new_loss = loss;
    for (int attempt = 0; attempt < 30; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = raw[i] + config.shrinkage * tree.predict(features[i]);
      new_loss = mean_log_loss(trial, labels);
      if (new_loss <= loss) break;
      for (auto& node : tree.nodes) node.value *= 0.5;
    }
    if (new_loss > loss) {
      for (auto& node : tree.nodes) node.value = 0.0;
      new_loss = loss;
    } else {
      raw.swap(trial);
    }
    loss = new_loss;
    result.loss_trace.push_back(loss);
    model.trees.push_back(std::move(tree));
  }
  return result;
}

GbdtTrainResult train_exam_model(std::span<const ExamLabeledExample> examples, const GbdtConfig& config) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  x.reserve(examples.size());
  y.reserve(examples.size());
  for (const auto& e : examples) {
    const auto a = e.features.to_array();
    x.emplace_back(a.begin(), a.end());
    y.push_back(e.label ? 1.0 : 0.0);
  }
  return gbdt_train(x, y, config);
}

double exam_predict(const GbdtModel& model, const ExamFeatures& features) {
  const auto a = features.to_array();
  return model.predict_proba(a);
}

std::vector<double> exam_predict_session(const GbdtModel& model, const SessionLog& session, int page_size) {
  std::vector<double> out;
  out.reserve(session.interactions.size());
  for (const auto& it : session.interactions) {
    out.push_back(exam_predict(model, extract_exam_features(session, it.position, page_size)));
  }
  return out;
}

// --- curves ---------------------------------------------------------------------------

CurveAccumulator::CurveAccumulator(int page_size)
    : page_size_(page_size),
      pos_sum_(static_cast<std::size_t>(page_size) + 1, 0.0),
      anchor_sum_(static_cast<std::size_t>(page_size) + 1, 0.0),
      anchor_pos_sum_(static_cast<std::size_t>(page_size) + 1, 0.0),
      pos_n_(static_cast<std::size_t>(page_size) + 1, 0),
      anchor_n_(static_cast<std::size_t>(page_size) + 1, 0),
      anchor_pos_n_(static_cast<std::size_t>(page_size) + 1, 0) {}

void CurveAccumulator::add_session(const SessionLog& session, std::span<const double> e_hat) {
  if (e_hat.size() != session.interactions.size()) throw AlignmentError("one e_hat per interaction required");
  int last_click = 0;
  for (std::size_t i = 0; i < session.interactions.size(); ++i) {
    const auto& it = session.interactions[i];
    if (it.position < 1 || it.position > page_size_) continue;
    const auto k = static_cast<std::size_t>(it.position);
    pos_sum_[k] += e_hat[i];
    ++pos_n_[k];
    if (last_click > 0) {
      const auto off = static_cast<std::size_t>(it.position - last_click);
      anchor_sum_[off] += e_hat[i];
      ++anchor_n_[off];
      anchor_pos_sum_[k] += e_hat[i];
      ++anchor_pos_n_[k];
    }
    if (it.clicked) last_click = it.position;
  }
}

void CurveAccumulator::merge(const CurveAccumulator& other) {
  if (other.page_size_ != page_size_) throw DimensionError("curve accumulators differ in page size");
  for (std::size_t k = 0; k < pos_sum_.size(); ++k) {
    pos_sum_[k] += other.pos_sum_[k];
    pos_n_[k] += other.pos_n_[k];
    anchor_sum_[k] += other.anchor_sum_[k];
    anchor_n_[k] += other.anchor_n_[k];
    anchor_pos_sum_[k] += other.anchor_pos_sum_[k];
    anchor_pos_n_[k] += other.anchor_pos_n_[k];
  }
}

std::vector<CurvePoint> CurveAccumulator::finish(const std::vector<double>& sum, const std::vector<std::size_t>& n) {
  std::vector<CurvePoint> out;
  for (std::size_t k = 1; k < sum.size(); ++k) {
    if (n[k] == 0) continue;
    out.push_back({static_cast<int>(k), sum[k] / static_cast<double>(n[k]), n[k]});
  }
  return out;
}

std::vector<CurvePoint> CurveAccumulator::by_position() const { return finish(pos_sum_, pos_n_); }
std::vector<CurvePoint> CurveAccumulator::below_anchor_by_offset() const { return finish(anchor_sum_, anchor_n_); }
std::vector<CurvePoint> CurveAccumulator::below_anchor_by_position() const {
  return finish(anchor_pos_sum_, anchor_pos_n_);
}

ExamCurves exam_curves(const GbdtModel& model, std::span<const SessionLog> sessions, int page_size) {
  CurveAccumulator acc(page_size);
  for (const auto& s : sessions) acc.add_session(s, exam_predict_session(model, s, page_size));
  return {acc.by_position(), acc.below_anchor_by_offset(), acc.below_anchor_by_position()};
}

std::string curve_to_csv(std::span<const CurvePoint> curve, std::string_view key_name) {
  std::ostringstream os;
  os.precision(17);
  os << key_name << ",mean_e,n\n";
  for (const auto& p : curve) os << p.key << ',' << p.mean_e << ',' << p.n << '\n';
  return os.str();
}

// --- retraining ---------------------------------------------------------------------------

RetrainSchedule::RetrainSchedule(std::int64_t cadence_hours) : cadence_(cadence_hours) {
  if (cadence_hours <= 0) throw ConfigError("retrain cadence must be positive");
}

bool RetrainSchedule::due(std::int64_t clock_hour) const {
  return !last_ || clock_hour / cadence_ > *last_ / cadence_;
}

void RetrainSchedule::mark(std::int64_t clock_hour) { last_ = clock_hour; }

std::optional<GbdtModel> retrain_if_due(RetrainSchedule& schedule, std::int64_t clock_hour,
                                        std::span<const SessionLog> recent, const GbdtConfig& config,
                                        int page_size) {
  if (!schedule.due(clock_hour)) return std::nullopt;
  const auto examples = mine_exam_labels(recent, page_size);
  schedule.mark(clock_hour);
  try {
    return train_exam_model(examples, config).model;
  } catch (const DegenerateDataError&) {
    return std::nullopt;
  } catch (const EmptyDataError&) {
    return std::nullopt;
  }
}

}  // namespace drrel::examination
