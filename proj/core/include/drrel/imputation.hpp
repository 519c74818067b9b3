#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "drrel/click_sim.hpp"
#include "drrel/mlp.hpp"

namespace drrel::imputation {

using click_sim::DocId;
using click_sim::QueryId;

/// Maps a query-document pair to a fixed-length dense vector.
class FeatureEncoder {
 public:
  virtual ~FeatureEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> encode(QueryId query_id, DocId doc_id) const = 0;
};

struct SyntheticEncoderConfig {
  std::size_t dim = 16;
  std::size_t signal_dims = 6;
  /// Per-pair error shared by all signal dimensions; the part a model cannot average away.
  double shared_noise = 0.1;
  /// Independent noise on each signal dimension.
  double feature_noise = 0.05;
  std::uint64_t seed = 0;
};

/// Deterministic stand-in for a semantic encoder. The first `signal_dims`
/// features are monotone transforms of a noisy copy of gamma; the rest are
/// pure distractors. Everything is derived from the pair's feature seed.
class SyntheticEncoder final : public FeatureEncoder {
 public:
  SyntheticEncoder(const click_sim::QueryCatalog& catalog, SyntheticEncoderConfig config = {});

  std::size_t dim() const override { return config_.dim; }
  std::vector<double> encode(QueryId query_id, DocId doc_id) const override;

 private:
  struct PairInfo {
    double relevance;
    std::uint64_t seed;
  };
  SyntheticEncoderConfig config_;
  std::unordered_map<DocId, PairInfo> pairs_;
};

/// Default architecture {F, 64, 32, 16, 1} with tanh hidden units and a sigmoid head.
std::vector<std::size_t> default_dims(std::size_t input_dim);

mlp::MlpModel make_model(std::size_t input_dim, std::uint64_t seed);
mlp::MlpModel make_zero_model(std::size_t input_dim);

/// gamma_imp in (0,1).
double imp_predict(const mlp::MlpModel& model, const FeatureEncoder& encoder, QueryId query_id, DocId doc_id);

struct ImpTrainResult {
  mlp::MlpModel model;
  std::vector<double> loss_trace;
};

/// Cross-entropy fine-tuning on top-1 randomization clicks.
ImpTrainResult imp_train(mlp::MlpModel model, const FeatureEncoder& encoder,
                         std::span<const click_sim::RandRecord> rand_data, const mlp::TrainConfig& config);

}  // namespace drrel::imputation
