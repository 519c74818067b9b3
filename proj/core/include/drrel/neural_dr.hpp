#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drrel/click_sim.hpp"
#include "drrel/imputation.hpp"
#include "drrel/mlp.hpp"
#include "drrel/tracking.hpp"

namespace drrel::neural_dr {

using click_sim::DocId;
using click_sim::QueryId;
using click_sim::RandRecord;

/// Standardized inputs feeding a single-output MLP.
struct ScaledMlp {
  mlp::FeatureScaler scaler;
  mlp::MlpModel net;

  double predict(std::span<const double> x) const;
  std::string to_checkpoint(std::string_view kind) const;
  static ScaledMlp from_checkpoint(std::string_view text, std::string_view kind);

  friend bool operator==(const ScaledMlp&, const ScaledMlp&) = default;
};

/// gamma_aff_bar = sigmoid(MLP(x)) in (0,1).
struct ApproxAffineModel : ScaledMlp {
  static constexpr std::string_view kKind = "approx-affine";
  static ApproxAffineModel make(std::size_t input_dim, std::uint64_t seed);
  std::string to_checkpoint() const { return ScaledMlp::to_checkpoint(kKind); }
  static ApproxAffineModel from_checkpoint(std::string_view text);
};

/// zeta_bar = tanh(MLP(x)) in [-1,1].
struct TradeoffModel : ScaledMlp {
  static constexpr std::string_view kKind = "tradeoff";
  static TradeoffModel make(std::size_t input_dim, std::uint64_t seed);
  std::string to_checkpoint() const { return ScaledMlp::to_checkpoint(kKind); }
  static TradeoffModel from_checkpoint(std::string_view text);
};

/// Hidden sizes {64, 32, 16}.
std::vector<std::size_t> default_dims(std::size_t input_dim);

// --- joining ------------------------------------------------------------------------------

struct JoinResult {
  /// Feature vector current at each randomization record's timestamp, in input order.
  std::vector<std::vector<double>> features;
  /// Dictionaries after the last hour, with every window refreshed.
  tracking::TrackingDicts dicts;
};

/// Replays sessions hour by hour through fresh dictionaries and joins every
/// randomization record to the snapshot at its hour.
JoinResult replay_and_join(std::span<const tracking::AnnotatedSession> sessions,
                           std::span<const RandRecord> rand_data, std::size_t jobs = 1);

// --- training -------------------------------------------------------------------------------

struct AffineTrainResult {
  ApproxAffineModel model;
  std::vector<double> loss_trace;
};

/// Cross-entropy of clicks on joined features.
AffineTrainResult approx_affine_train(ApproxAffineModel model, std::span<const std::vector<double>> features,
                                      std::span<const RandRecord> rand_data, const mlp::TrainConfig& config);

inline constexpr double kClampLow = 1e-6;
inline constexpr double kClampHigh = 1.0;

/// Loss of one record under the trade-off objective:
///   -c_hat * log(clamp(zeta * gamma_imp + gamma_aff)),  c_hat = 2c - 1.
/// gamma_imp and gamma_aff are constants (stop-gradient). Adds the gradient
/// for the trade-off net into `grads` when given.
double tradeoff_example_loss(const mlp::MlpModel& net, std::span<const double> scaled_x, double gamma_imp,
                             double gamma_aff, bool clicked, mlp::MlpGradients* grads = nullptr);

/// d loss / d zeta; zero where the clamp is active.
double tradeoff_dloss_dzeta(double zeta, double gamma_imp, double gamma_aff, bool clicked);

struct TradeoffTrainResult {
  TradeoffModel model;
  std::vector<double> loss_trace;
  std::string imputation_digest;
  std::string affine_digest;
};

/// Trains only the trade-off net. Digests of both frozen models are taken
/// before and after; a difference raises InvariantError.
TradeoffTrainResult tradeoff_train(TradeoffModel model, std::span<const std::vector<double>> features,
                                   std::span<const RandRecord> rand_data, const mlp::MlpModel& imputation_model,
                                   const imputation::FeatureEncoder& encoder, const ApproxAffineModel& affine_model,
                                   const mlp::TrainConfig& config);

// --- scoring ---------------------------------------------------------------------------------

struct DrScore {
  double value = 0.0;  // zeta * gamma_imp + gamma_aff
  double zeta = 0.0;
  double gamma_imp = 0.0;
  double gamma_aff = 0.0;
  double clamped = kClampLow;
  /// The pair had no impressions in any window.
  bool unseen = false;

  /// Ranking score: gamma_imp for unseen pairs (the empty-data convention), `value` otherwise.
  double rank_value() const noexcept { return unseen ? gamma_imp : value; }
};

DrScore compose(double zeta, double gamma_imp, double gamma_aff);

DrScore dr_score(QueryId query_id, DocId doc_id, const tracking::DictSnapshot& dicts,
                 const mlp::MlpModel& imputation_model, const imputation::FeatureEncoder& encoder,
                 const ApproxAffineModel& affine_model, const TradeoffModel& tradeoff_model);

using Scorer = std::function<double(QueryId, DocId)>;

/// Descending score; equal scores by ascending doc_id. Throws DomainError on no candidates.
std::vector<DocId> rank_documents(QueryId query_id, std::span<const DocId> candidates, const Scorer& scorer);

// --- bundle ----------------------------------------------------------------------------------

/// References to the three checkpoints plus the feature schema they expect.
struct ScorerBundle {
  std::string feature_schema{tracking::kFeatureSchemaId};
  std::string imputation_path;
  std::string imputation_digest;
  std::string affine_path;
  std::string affine_digest;
  std::string tradeoff_path;
  std::string tradeoff_digest;

  std::string to_json() const;
  /// SchemaError unless the feature schema matches kFeatureSchemaId.
  static ScorerBundle from_json(std::string_view text);
};

}  // namespace drrel::neural_dr
