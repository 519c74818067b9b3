#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drrel/click_sim.hpp"
#include "drrel/examination.hpp"

namespace drrel::tracking {

using click_sim::DocId;
using click_sim::QueryId;
using click_sim::SessionLog;

inline constexpr int kLogSchemaVersion = 1;

// --- log parsing -------------------------------------------------------------------

struct RejectedLine {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct ParseResult {
  std::vector<SessionLog> sessions;
  std::vector<RejectedLine> rejects;
};

/// JSONL session log. An optional first line {"schema_version": N} is
/// checked against kLogSchemaVersion (SchemaError on mismatch). Malformed
/// lines land in `rejects`. Blank lines are ignored.
ParseResult parse_click_log(std::string_view text);

/// One JSON object, no trailing newline.
std::string serialize_session(const SessionLog& session);
std::string serialize_click_log(std::span<const SessionLog> sessions, bool with_header = true);

struct AnnotatedSession {
  SessionLog log;
  std::vector<double> e_hat;  // one per interaction
};

std::vector<AnnotatedSession> attach_examination(std::span<const SessionLog> sessions,
                                                 const examination::GbdtModel& model, int page_size = 10);

// --- accumulators -----------------------------------------------------------------

/// Sufficient statistics for one (q,d) pair. Real-valued sums are held in
/// fixed point so that merging is exactly associative and commutative.
struct PairStats {
  static constexpr double kEScale = 1e9;
  static constexpr double kTimeScale = 1e6;

  std::int64_t impressions = 0;
  std::int64_t clicks = 0;
  std::int64_t skips = 0;
  std::int64_t sum_position = 0;
  std::int64_t sum_e_fixed = 0;
  std::int64_t sum_display_fixed = 0;
  std::int64_t sum_dwell_fixed = 0;

  void add(int position, bool clicked, bool skipped, double e_hat, double display_s, double dwell_s);
  void merge(const PairStats& other);

  double sum_e() const { return static_cast<double>(sum_e_fixed) / kEScale; }
  double sum_display() const { return static_cast<double>(sum_display_fixed) / kTimeScale; }
  double sum_dwell() const { return static_cast<double>(sum_dwell_fixed) / kTimeScale; }

  friend bool operator==(const PairStats&, const PairStats&) = default;
};

using PairKey = std::uint64_t;
inline PairKey pair_key(QueryId q, DocId d) { return (static_cast<std::uint64_t>(q) << 32) | d; }
inline QueryId key_query(PairKey k) { return static_cast<QueryId>(k >> 32); }
inline DocId key_doc(PairKey k) { return static_cast<DocId>(k & 0xffffffffu); }

/// Pair -> stats. A commutative monoid under merge.
class StatsTable {
 public:
  void add_session(const AnnotatedSession& session);
  void merge(const StatsTable& other);

  const PairStats* find(QueryId q, DocId d) const;
  std::size_t size() const noexcept { return stats_.size(); }
  bool empty() const noexcept { return stats_.empty(); }
  const std::unordered_map<PairKey, PairStats>& entries() const noexcept { return stats_; }
  std::unordered_map<PairKey, PairStats>& mutable_entries() noexcept { return stats_; }

  friend bool operator==(const StatsTable&, const StatsTable&) = default;

 private:
  std::unordered_map<PairKey, PairStats> stats_;
};

/// Aggregates sessions over `jobs` shards, merging shard tables in order.
StatsTable aggregate(std::span<const AnnotatedSession> sessions, std::size_t jobs = 1);

// --- windows --------------------------------------------------------------------------

enum class WindowKind { monthly, weekly, daily };

std::string to_string(WindowKind kind);
/// Coverage length in hours: 672, 168, 24.
std::int64_t window_hours(WindowKind kind);
/// Refresh cadence in hours: 168, 24, 1.
std::int64_t cadence_hours(WindowKind kind);

struct WindowDict {
  WindowKind kind = WindowKind::daily;
  /// Inclusive hour range [start, end]; empty before the first refresh.
  std::int64_t coverage_start = 0;
  std::int64_t coverage_end = -1;
  StatsTable table;

  friend bool operator==(const WindowDict&, const WindowDict&) = default;
};

/// What readers see: the three dictionaries as of their latest refreshes.
struct DictSnapshot {
  std::int64_t clock = 0;
  WindowDict monthly{WindowKind::monthly, 0, -1, {}};
  WindowDict weekly{WindowKind::weekly, 0, -1, {}};
  WindowDict daily{WindowKind::daily, 0, -1, {}};

  const WindowDict& window(WindowKind kind) const;

  std::string to_json() const;
  static DictSnapshot from_json(std::string_view text);

  friend bool operator==(const DictSnapshot&, const DictSnapshot&) = default;
};

struct AdvanceStats {
  std::size_t accepted = 0;        // interactions added
  std::size_t future_skipped = 0;  // timestamp > clock
  std::size_t expired_skipped = 0; // older than the monthly window
  bool replay = false;             // identical (clock, batch) seen before
  std::array<bool, 3> refreshed{}; // monthly, weekly, daily
};

/// Hour-bucketed sufficient statistics plus the three materialized windows.
/// Daily refreshes when the clock crosses an hour, weekly a day, monthly a week.
class TrackingDicts {
 public:
  TrackingDicts() : snapshot_(std::make_shared<DictSnapshot>()) {}

  /// Moves the simulated clock to `clock` (must not go backwards) and ingests
  /// the batch. Replaying an identical (clock, batch) is a no-op.
  AdvanceStats advance(std::int64_t clock, std::span<const AnnotatedSession> sessions, std::size_t jobs = 1);

  /// Refreshes every window regardless of cadence.
  void refresh_all();

  std::shared_ptr<const DictSnapshot> snapshot() const { return snapshot_; }
  std::optional<std::int64_t> clock() const noexcept { return clock_; }
  std::size_t bucket_count() const noexcept { return buckets_.size(); }

  /// Digest of the full internal state.
  std::string state_digest() const;

 private:
  WindowDict materialize(WindowKind kind, std::int64_t clock) const;
  void prune(std::int64_t clock);

  std::optional<std::int64_t> clock_;
  std::map<std::int64_t, StatsTable> buckets_;  // hour -> stats
  std::set<std::pair<std::int64_t, std::string>> applied_;
  std::shared_ptr<const DictSnapshot> snapshot_;
};

// --- features --------------------------------------------------------------------------

inline constexpr std::size_t kFeaturesPerWindow = 7;
inline constexpr std::size_t kFeatureDim = 3 * kFeaturesPerWindow;
inline constexpr std::string_view kFeatureSchemaId = "click-features-v1";

struct ClickFeatureVector {
  std::array<double, kFeatureDim> x{};
  std::string_view schema_id = kFeatureSchemaId;

  std::vector<double> to_vector() const { return {x.begin(), x.end()}; }
  bool is_zero() const;
};

/// Names in layout order: {monthly, weekly, daily} x {log_impressions, ctr,
/// examined_ctr, mean_position, mean_display_s, mean_dwell_s, skip_rate}.
const std::array<std::string, kFeatureDim>& feature_names();

/// All zeros for a pair absent from every window.
ClickFeatureVector build_click_features(const DictSnapshot& snapshot, QueryId query_id, DocId doc_id);

/// "query_id,doc_id,<feature names>" rows in the given pair order.
std::string features_to_csv(const DictSnapshot& snapshot, std::span<const std::pair<QueryId, DocId>> pairs);

}  // namespace drrel::tracking
