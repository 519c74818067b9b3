#include "drrel/neural_dr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "drrel/digest.hpp"
#include "drrel/error.hpp"

namespace drrel::neural_dr {

using nlohmann::json;

double ScaledMlp::predict(std::span<const double> x) const {
  const auto z = scaler.apply(x);
  return mlp::mlp_predict(net, z);
}

std::string ScaledMlp::to_checkpoint(std::string_view kind) const {
  json j;
  j["format"] = "drrel.scaled_mlp";
  j["version"] = 1;
  j["kind"] = std::string(kind);
  j["scaler"] = {{"mean", scaler.mean}, {"scale", scaler.scale}};
  j["mlp"] = json::parse(net.to_checkpoint());
  return j.dump();
}

ScaledMlp ScaledMlp::from_checkpoint(std::string_view text, std::string_view kind) {
  ScaledMlp m;
  try {
    const auto j = json::parse(text);
    if (j.value("format", "") != "drrel.scaled_mlp" || j.value("version", 0) != 1) {
      throw SchemaError("not a version-1 scaled MLP checkpoint");
    }
    if (j.value("kind", "") != kind) {
      throw SchemaError("checkpoint kind " + j.value("kind", std::string("?")) + " where " + std::string(kind) +
                        " was expected");
    }
    m.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    m.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    m.net = mlp::MlpModel::from_checkpoint(j.at("mlp").dump());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
  if (m.scaler.mean.size() != m.net.input_dim() || m.scaler.scale.size() != m.net.input_dim()) {
    throw SchemaError("scaler and network disagree on input dimension");
  }
  return m;
}

std::vector<std::size_t> default_dims(std::size_t input_dim) { return {input_dim, 64, 32, 16, 1}; }

ApproxAffineModel ApproxAffineModel::make(std::size_t input_dim, std::uint64_t seed) {
  ApproxAffineModel m;
  m.scaler = mlp::FeatureScaler::identity(input_dim);
  m.net = mlp::MlpModel::random(default_dims(input_dim), mlp::Activation::tanh, mlp::Activation::sigmoid, seed);
  return m;
}

ApproxAffineModel ApproxAffineModel::from_checkpoint(std::string_view text) {
  ApproxAffineModel m;
  static_cast<ScaledMlp&>(m) = ScaledMlp::from_checkpoint(text, kKind);
  if (m.net.layers().back().activation != mlp::Activation::sigmoid) throw SchemaError("affine head must be sigmoid");
  return m;
}

TradeoffModel TradeoffModel::make(std::size_t input_dim, std::uint64_t seed) {
  TradeoffModel m;
  m.scaler = mlp::FeatureScaler::identity(input_dim);
  m.net = mlp::MlpModel::random(default_dims(input_dim), mlp::Activation::tanh, mlp::Activation::tanh, seed);
  return m;
}

TradeoffModel TradeoffModel::from_checkpoint(std::string_view text) {
  TradeoffModel m;
  static_cast<ScaledMlp&>(m) = ScaledMlp::from_checkpoint(text, kKind);
  if (m.net.layers().back().activation != mlp::Activation::tanh) throw SchemaError("trade-off head must be tanh");
  return m;
}

// --- joining ------------------------------------------------------------------------------

JoinResult replay_and_join(std::span<const tracking::AnnotatedSession> sessions,
                           std::span<const RandRecord> rand_data, std::size_t jobs) {
  JoinResult out;
  out.features.assign(rand_data.size(), std::vector<double>(tracking::kFeatureDim, 0.0));
  if (sessions.empty() && rand_data.empty()) return out;

  std::vector<std::size_t> s_order(sessions.size()), r_order(rand_data.size());
  std::iota(s_order.begin(), s_order.end(), 0);
  std::iota(r_order.begin(), r_order.end(), 0);
  std::stable_sort(s_order.begin(), s_order.end(),
                   [&](auto a, auto b) { return sessions[a].log.timestamp() < sessions[b].log.timestamp(); });
  std::stable_sort(r_order.begin(), r_order.end(),
                   [&](auto a, auto b) { return rand_data[a].timestamp < rand_data[b].timestamp; });

  std::int64_t first = std::numeric_limits<std::int64_t>::max();
  std::int64_t last = std::numeric_limits<std::int64_t>::min();
  if (!s_order.empty()) {
    first = std::min(first, sessions[s_order.front()].log.timestamp());
    last = std::max(last, sessions[s_order.back()].log.timestamp());
  }
  if (!r_order.empty()) {
    first = std::min(first, rand_data[r_order.front()].timestamp);
    last = std::max(last, rand_data[r_order.back()].timestamp);
  }

  std::size_t si = 0, ri = 0;
  std::vector<tracking::AnnotatedSession> batch;
  for (std::int64_t hour = first; hour <= last; ++hour) {
    batch.clear();
    while (si < s_order.size() && sessions[s_order[si]].log.timestamp() <= hour) batch.push_back(sessions[s_order[si++]]);
    out.dicts.advance(hour, batch, jobs);
    if (ri < r_order.size() && rand_data[r_order[ri]].timestamp <= hour) {
      const auto snap = out.dicts.snapshot();
      while (ri < r_order.size() && rand_data[r_order[ri]].timestamp <= hour) {
        const auto& r = rand_data[r_order[ri]];
        out.features[r_order[ri]] = tracking::build_click_features(*snap, r.query_id, r.doc_id).to_vector();
        ++ri;
      }
    }
  }
  out.dicts.refresh_all();
  return out;
}

// --- training ---------------------------------------------------------------------------------

namespace {

void check_join(std::span<const std::vector<double>> features, std::span<const RandRecord> rand_data) {
  if (features.size() != rand_data.size()) {
    throw DimensionError("features (" + std::to_string(features.size()) + ") and randomization records (" +
                         std::to_string(rand_data.size()) + ") differ in length");
  }
  if (rand_data.empty()) throw EmptyDataError("no randomization records");
}

std::vector<std::vector<double>> scale_all(const mlp::FeatureScaler& scaler,
                                           std::span<const std::vector<double>> rows) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(scaler.apply(r));
  return out;
}

}  // namespace

AffineTrainResult approx_affine_train(ApproxAffineModel model, std::span<const std::vector<double>> features,
                                      std::span<const RandRecord> rand_data, const mlp::TrainConfig& config) {
  check_join(features, rand_data);
  model.scaler = mlp::FeatureScaler::fit(features);
  const auto inputs = scale_all(model.scaler, features);
  std::vector<double> labels;
  labels.reserve(rand_data.size());
  for (const auto& r : rand_data) labels.push_back(r.clicked ? 1.0 : 0.0);
  auto trained = mlp::train_binary_cross_entropy(model.net, inputs, labels, config);
  return {std::move(model), std::move(trained.loss_trace)};
}

double tradeoff_dloss_dzeta(double zeta, double gamma_imp, double gamma_aff, bool clicked) {
  const double g = zeta * gamma_imp + gamma_aff;
  if (g < kClampLow || g > kClampHigh) return 0.0;
  const double c_hat = clicked ? 1.0 : -1.0;
  return -c_hat * gamma_imp / g;
}

double tradeoff_example_loss(const mlp::MlpModel& net, std::span<const double> scaled_x, double gamma_imp,
                             double gamma_aff, bool clicked, mlp::MlpGradients* grads) {
  mlp::ForwardCache cache;
  const double zeta = mlp::mlp_forward(net, scaled_x, grads != nullptr ? &cache : nullptr).front();
  const double c_hat = clicked ? 1.0 : -1.0;
  const double g = std::clamp(zeta * gamma_imp + gamma_aff, kClampLow, kClampHigh);
  if (grads != nullptr) {
    const double d = tradeoff_dloss_dzeta(zeta, gamma_imp, gamma_aff, clicked);
    grads->add(mlp::mlp_backward(net, cache, std::span<const double>(&d, 1)));
  }
  return -c_hat * std::log(g);
}

TradeoffTrainResult tradeoff_train(TradeoffModel model, std::span<const std::vector<double>> features,
                                   std::span<const RandRecord> rand_data, const mlp::MlpModel& imputation_model,
                                   const imputation::FeatureEncoder& encoder, const ApproxAffineModel& affine_model,
                                   const mlp::TrainConfig& config) {
  check_join(features, rand_data);
  if (model.net.layers().empty() || model.net.layers().back().activation != mlp::Activation::tanh) {
    throw DimensionError("trade-off model needs a tanh head");
  }
  const auto imp_digest = digest_hex(imputation_model.to_checkpoint());
  const auto aff_digest = digest_hex(affine_model.to_checkpoint());

  // Frozen components are evaluated once; they enter the loss as constants.
  std::vector<double> gamma_imp(rand_data.size()), gamma_aff(rand_data.size());
  for (std::size_t i = 0; i < rand_data.size(); ++i) {
    gamma_imp[i] = imputation::imp_predict(imputation_model, encoder, rand_data[i].query_id, rand_data[i].doc_id);
    gamma_aff[i] = affine_model.predict(features[i]);
  }
  model.scaler = mlp::FeatureScaler::fit(features);
  const auto inputs = scale_all(model.scaler, features);

  auto trained = mlp::minibatch_descent(
      model.net, rand_data.size(), config, [&](const mlp::MlpModel& net, std::size_t i, mlp::MlpGradients& grads) {
        return tradeoff_example_loss(net, inputs[i], gamma_imp[i], gamma_aff[i], rand_data[i].clicked, &grads);
      });

  if (digest_hex(imputation_model.to_checkpoint()) != imp_digest ||
      digest_hex(affine_model.to_checkpoint()) != aff_digest) {
    throw InvariantError("frozen model parameters changed during trade-off training");
  }
  return {std::move(model), std::move(trained.loss_trace), imp_digest, aff_digest};
}

// --- scoring ---------------------------------------------------------------------------------

DrScore compose(double zeta, double gamma_imp, double gamma_aff) {
  DrScore s;
  s.zeta = zeta;
  s.gamma_imp = gamma_imp;
  s.gamma_aff = gamma_aff;
  s.value = zeta * gamma_imp + gamma_aff;
  s.clamped = std::clamp(s.value, kClampLow, kClampHigh);
  return s;
}

DrScore dr_score(QueryId query_id, DocId doc_id, const tracking::DictSnapshot& dicts,
                 const mlp::MlpModel& imputation_model, const imputation::FeatureEncoder& encoder,
                 const ApproxAffineModel& affine_model, const TradeoffModel& tradeoff_model) {
  const auto features = tracking::build_click_features(dicts, query_id, doc_id);
  const auto x = features.to_vector();
  auto s = compose(tradeoff_model.predict(x), imputation::imp_predict(imputation_model, encoder, query_id, doc_id),
                   affine_model.predict(x));
  s.unseen = features.is_zero();
  return s;
}

std::vector<DocId> rank_documents(QueryId query_id, std::span<const DocId> candidates, const Scorer& scorer) {
  if (candidates.empty()) throw DomainError("rank_documents needs at least one candidate");
  std::vector<std::pair<double, DocId>> scored;
  scored.reserve(candidates.size());
  for (auto d : candidates) scored.emplace_back(scorer(query_id, d), d);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<DocId> out;
  out.reserve(scored.size());
  for (const auto& [s, d] : scored) out.push_back(d);
  return out;
}

// --- bundle ------------------------------------------------------------------------------------

std::string ScorerBundle::to_json() const {
  json j;
  j["format"] = "drrel.scorer";
  j["version"] = 1;
  j["feature_schema"] = feature_schema;
  j["imputation"] = {{"path", imputation_path}, {"digest", imputation_digest}};
  j["affine"] = {{"path", affine_path}, {"digest", affine_digest}};
  j["tradeoff"] = {{"path", tradeoff_path}, {"digest", tradeoff_digest}};
  return j.dump(2);
}

ScorerBundle ScorerBundle::from_json(std::string_view text) {
  ScorerBundle b;
  try {
    const auto j = json::parse(text);
    if (j.value("format", "") != "drrel.scorer" || j.value("version", 0) != 1) {
      throw SchemaError("not a version-1 scorer bundle");
    }
    b.feature_schema = j.at("feature_schema").get<std::string>();
    if (b.feature_schema != tracking::kFeatureSchemaId) {
      throw SchemaError("scorer bundle expects feature schema " + b.feature_schema + " but this build produces " +
                        std::string(tracking::kFeatureSchemaId));
    }
    b.imputation_path = j.at("imputation").at("path").get<std::string>();
    b.imputation_digest = j.at("imputation").at("digest").get<std::string>();
    b.affine_path = j.at("affine").at("path").get<std::string>();
    b.affine_digest = j.at("affine").at("digest").get<std::string>();
    b.tradeoff_path = j.at("tradeoff").at("path").get<std::string>();
    b.tradeoff_digest = j.at("tradeoff").at("digest").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed scorer bundle: ") + e.what());
  }
  return b;
}

}  // namespace drrel::neural_dr
