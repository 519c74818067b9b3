#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "drrel/click_sim.hpp"
#include "drrel/estimators.hpp"
#include "drrel/examination.hpp"
#include "drrel/imputation.hpp"
#include "drrel/metrics.hpp"
#include "drrel/mlp.hpp"
#include "drrel/theory.hpp"

namespace drrel::pipeline {

inline constexpr int kArtifactSchemaVersion = 1;

struct SimulationSpec {
  std::size_t n_sessions = 150000;
  std::int64_t start_hour = 0;
  std::int64_t span_hours = 840;
  double abandon_after_click = 0.7;
  std::string policy = "noisy";  // noisy | shuffled | identity
  double policy_sigma = 0.3;
  click_sim::TimingModel timing;
};

/// Everything a run depends on. Serialized as JSON; the hash of the
/// canonical form (minus output_dir and jobs) stamps every artifact.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "drrel-out";
  std::size_t jobs = 1;

  click_sim::CatalogConfig catalog{3000, 10, 1.1, {}};
  std::vector<double> theta;      // empty: default_web(positions)
  std::vector<double> eps_plus;
  std::vector<double> eps_minus;
  int positions = 10;
  estimators::Misspecification misspecification;

  SimulationSpec simulation;
  click_sim::RandomizationConfig randomization{60000, 1.0, 0, 840};
  imputation::SyntheticEncoderConfig encoder;

  examination::GbdtConfig exam;
  double exam_holdout_fraction = 0.2;

  mlp::TrainConfig imputation_train;
  mlp::TrainConfig affine_train;
  mlp::TrainConfig tradeoff_train{0.005, 100, 64, 1, 0};

  metrics::BucketSpec buckets;
  metrics::JudgeConfig judge;
  std::vector<std::size_t> ks{1, 4, 10};

  theory::TheoryConfig theory;

  click_sim::ClickModelParams click_params() const;
  void validate() const;

  std::string to_json() const;
  /// Unknown keys raise ConfigError.
  static ExperimentConfig from_json(std::string_view text);
  /// Hex digest of the canonical JSON, excluding output_dir and jobs.
  std::string hash() const;
};

/// Applies "a.b.c=value" overrides; value is parsed as JSON, falling back to a string.
ExperimentConfig load_config(std::string_view text, const std::vector<std::string>& overrides);

/// Stage names in pipeline order.
const std::vector<std::string>& stage_names();

struct StageResult {
  std::vector<std::string> artifacts;  // file names under output_dir
  bool checks_passed = true;           // verify-theory only
  std::string summary;
};

/// Runs one stage. Throws MissingArtifactError naming the producing stage
/// when an input is absent, StaleArtifactError on a config-hash mismatch.
StageResult run_stage(std::string_view stage, const ExperimentConfig& config);

/// Runs every stage in order.
std::vector<StageResult> run_all(const ExperimentConfig& config);

}  // namespace drrel::pipeline
