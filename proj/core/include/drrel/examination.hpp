#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drrel/click_sim.hpp"

namespace drrel::examination {

using click_sim::SessionLog;

/// Display-time thresholds used to mine examination labels (seconds).
inline constexpr double kPositiveDisplayTime = 5.0;
inline constexpr double kNegativeDisplayTime = 1.0;

/// Behavioral features of one displayed result. Only click-log fields feed
/// these; the latent examination bit lives in a different type.
struct ExamFeatures {
  static constexpr std::size_t kDim = 6;

  int position = 1;
  bool clicked = false;
  int clicks_before = 0;        // clicks at positions < k
  int dist_prev_click = 0;      // k - (last click above); page_size + 1 if none
  int session_click_total = 0;
  bool is_last_on_page = false;

  std::array<double, kDim> to_array() const;
};

struct ExamLabeledExample {
  ExamFeatures features;
  bool label = false;
};

/// true for t > 5s, false for t < 1s, nullopt inside the dead band.
std::optional<bool> label_from_display_time(double display_time_s);

ExamFeatures extract_exam_features(const SessionLog& session, int position, int page_size = 10);

/// One example per interaction outside the 1s..5s dead band.
std::vector<ExamLabeledExample> mine_exam_labels(std::span<const SessionLog> sessions, int page_size = 10);

// --- gradient boosted trees ------------------------------------------------------

struct GbdtConfig {
  std::size_t n_trees = 50;
  std::size_t max_depth = 3;
  double shrinkage = 0.1;
  std::size_t min_leaf = 20;
  double l2 = 1.0;
  std::size_t max_bins = 64;

  void validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  std::size_t depth() const;
};

struct GbdtModel {
  std::vector<RegressionTree> trees;
  double shrinkage = 0.1;
  double init_log_odds = 0.0;
  std::size_t num_features = 0;

  double raw_score(std::span<const double> x) const;
  /// sigmoid(raw_score) in (0,1).
  double predict_proba(std::span<const double> x) const;

  std::string to_json() const;
  static GbdtModel from_json(std::string_view text);
};

struct GbdtTrainResult {
  GbdtModel model;
  /// Mean training log-loss; entry 0 is the prior-only model, entry t after t trees.
  std::vector<double> loss_trace;
};

/// Stagewise logistic boosting with Newton leaf values on binned features.
/// Throws DegenerateDataError when all labels agree.
GbdtTrainResult gbdt_train(std::span<const std::vector<double>> features, std::span<const double> labels,
                           const GbdtConfig& config);

GbdtTrainResult train_exam_model(std::span<const ExamLabeledExample> examples, const GbdtConfig& config = {});

/// e_hat for one interaction.
double exam_predict(const GbdtModel& model, const ExamFeatures& features);

/// e_hat for every interaction of a session, in position order.
std::vector<double> exam_predict_session(const GbdtModel& model, const SessionLog& session, int page_size = 10);

// --- curves ---------------------------------------------------------------------------

struct CurvePoint {
  int key = 0;  // position or offset
  double mean_e = 0.0;
  std::size_t n = 0;
};

/// Mergeable sums behind the curves.
class CurveAccumulator {
 public:
  explicit CurveAccumulator(int page_size = 10);

  void add_session(const SessionLog& session, std::span<const double> e_hat);
  void merge(const CurveAccumulator& other);

  std::vector<CurvePoint> by_position() const;
  /// Offset = distance to the most recent click above.
  std::vector<CurvePoint> below_anchor_by_offset() const;
  /// Same interactions as above, grouped by their position.
  std::vector<CurvePoint> below_anchor_by_position() const;

 private:
  static std::vector<CurvePoint> finish(const std::vector<double>& sum, const std::vector<std::size_t>& n);

  int page_size_;
  std::vector<double> pos_sum_, anchor_sum_, anchor_pos_sum_;
  std::vector<std::size_t> pos_n_, anchor_n_, anchor_pos_n_;
};

struct ExamCurves {
  std::vector<CurvePoint> by_position;
  std::vector<CurvePoint> below_anchor_by_offset;
  std::vector<CurvePoint> below_anchor_by_position;
};

ExamCurves exam_curves(const GbdtModel& model, std::span<const SessionLog> sessions, int page_size = 10);

/// "key_name,mean_e,n" rows.
std::string curve_to_csv(std::span<const CurvePoint> curve, std::string_view key_name);

/// Simulated-clock retraining cadence (hourly by default).
class RetrainSchedule {
 public:
  explicit RetrainSchedule(std::int64_t cadence_hours = 1);

  /// True the first time and whenever a cadence boundary has been crossed.
  bool due(std::int64_t clock_hour) const;
  void mark(std::int64_t clock_hour);

 private:
  std::int64_t cadence_;
  std::optional<std::int64_t> last_;
};

/// Retrains on `recent` sessions when the schedule is due; otherwise nullopt.
std::optional<GbdtModel> retrain_if_due(RetrainSchedule& schedule, std::int64_t clock_hour,
                                        std::span<const SessionLog> recent, const GbdtConfig& config,
                                        int page_size = 10);

}  // namespace drrel::examination
