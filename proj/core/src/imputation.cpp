#include "drrel/imputation.hpp"

#include <algorithm>
#include <cmath>

#include "drrel/error.hpp"
#include "drrel/rng.hpp"

namespace drrel::imputation {

SyntheticEncoder::SyntheticEncoder(const click_sim::QueryCatalog& catalog, SyntheticEncoderConfig config)
    : config_(config) {
  if (config_.dim == 0 || config_.signal_dims > config_.dim) throw ConfigError("invalid encoder dimensions");
  for (const auto& q : catalog.queries) {
    for (const auto& d : q.docs) pairs_.emplace(d.doc_id, PairInfo{d.relevance, d.feature_seed});
  }
}

std::vector<double> SyntheticEncoder::encode(QueryId /*query_id*/, DocId doc_id) const {
  auto it = pairs_.find(doc_id);
  if (it == pairs_.end()) throw DomainError("encoder has no features for doc " + std::to_string(doc_id));
  Rng rng = make_rng(it->second.seed ^ mix64(config_.seed), 0x656e63ULL);
  std::normal_distribution<double> z(0.0, 1.0);

  const double latent = it->second.relevance + config_.shared_noise * z(rng);
  const double unit = std::clamp(latent, 0.0, 1.0);
  std::vector<double> f(config_.dim);
  for (std::size_t i = 0; i < config_.signal_dims; ++i) {
    double v = 0.0;
    switch (i % 6) {
      case 0: v = latent; break;
      case 1: v = std::tanh(3.0 * (latent - 0.5)); break;
      case 2: v = std::sqrt(unit); break;
      case 3: v = unit * unit; break;
      case 4: v = std::exp(latent) - 1.0; break;
      case 5: v = 2.0 * latent - 1.0; break;
    }
    f[i] = v + config_.feature_noise * z(rng);
  }
  for (std::size_t i = config_.signal_dims; i < config_.dim; ++i) f[i] = z(rng);
  return f;
}

std::vector<std::size_t> default_dims(std::size_t input_dim) { return {input_dim, 64, 32, 16, 1}; }

mlp::MlpModel make_model(std::size_t input_dim, std::uint64_t seed) {
  const auto dims = default_dims(input_dim);
  return mlp::MlpModel::random(dims, mlp::Activation::tanh, mlp::Activation::sigmoid, seed);
}

mlp::MlpModel make_zero_model(std::size_t input_dim) {
  const auto dims = default_dims(input_dim);
  return mlp::MlpModel::zeros(dims, mlp::Activation::tanh, mlp::Activation::sigmoid);
}

double imp_predict(const mlp::MlpModel& model, const FeatureEncoder& encoder, QueryId query_id, DocId doc_id) {
  const auto x = encoder.encode(query_id, doc_id);
  return mlp::mlp_predict(model, x);
}

ImpTrainResult imp_train(mlp::MlpModel model, const FeatureEncoder& encoder,
                         std::span<const click_sim::RandRecord> rand_data, const mlp::TrainConfig& config) {
  if (rand_data.empty()) throw EmptyDataError("imp_train: no randomization data");
  std::vector<std::vector<double>> inputs;
  std::vector<double> labels;
  inputs.reserve(rand_data.size());
  labels.reserve(rand_data.size());
  for (const auto& r : rand_data) {
    inputs.push_back(encoder.encode(r.query_id, r.doc_id));
    labels.push_back(r.clicked ? 1.0 : 0.0);
  }
  auto trained = mlp::train_binary_cross_entropy(model, inputs, labels, config);
  return {std::move(model), std::move(trained.loss_trace)};
}

}  // namespace drrel::imputation
