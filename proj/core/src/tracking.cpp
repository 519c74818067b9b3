#include "drrel/tracking.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <future>
#include <sstream>

#include <json.hpp>

#include "drrel/digest.hpp"
#include "drrel/error.hpp"

namespace drrel::tracking {

using nlohmann::json;

// --- parsing -------------------------------------------------------------------------

namespace {

std::string check_session(const SessionLog& s) {
  if (s.docs.size() != s.interactions.size()) return "docs and interactions differ in length";
  for (std::size_t i = 0; i < s.interactions.size(); ++i) {
    const auto& it = s.interactions[i];
    if (it.position != static_cast<int>(i) + 1) return "positions must be 1..n in order";
    if (it.doc_id != s.docs[i]) return "interaction doc_id does not match docs at its position";
    if (!std::isfinite(it.display_time_s) || it.display_time_s < 0.0) return "negative display time";
    if (!std::isfinite(it.dwell_time_s) || it.dwell_time_s < 0.0) return "negative dwell time";
    if (it.clicked && it.display_time_s <= 0.0) return "clicked result with zero display time";
    if (it.timestamp < 0) return "negative timestamp";
  }
  return {};
}

SessionLog session_from_json(const json& j) {
  SessionLog s;
  s.query_id = j.at("query_id").get<QueryId>();
  s.docs = j.at("docs").get<std::vector<DocId>>();
  for (const auto& ji : j.at("interactions")) {
    click_sim::Interaction it;
    it.query_id = s.query_id;
    it.doc_id = ji.at("doc_id").get<DocId>();
    it.position = ji.at("pos").get<int>();
    const auto& c = ji.at("click");
    it.clicked = c.is_boolean() ? c.get<bool>() : c.get<int>() != 0;
    it.display_time_s = ji.at("display_s").get<double>();
    it.dwell_time_s = ji.at("dwell_s").get<double>();
    it.timestamp = ji.at("ts").get<std::int64_t>();
    s.interactions.push_back(it);
  }
  return s;
}

}  // namespace

ParseResult parse_click_log(std::string_view text) {
  ParseResult out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool first_content = true;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      out.rejects.push_back({line_no, std::string("malformed JSON: ") + e.what()});
      first_content = false;
      continue;
    }
    if (first_content && j.is_object() && j.contains("schema_version") && !j.contains("query_id")) {
      first_content = false;
      const auto& v = j["schema_version"];
      if (!v.is_number_integer() || v.get<int>() != kLogSchemaVersion) {
        throw SchemaError("click log schema_version " + v.dump() + " does not match supported version " +
                          std::to_string(kLogSchemaVersion));
      }
      continue;
    }
    first_content = false;
    try {
      auto s = session_from_json(j);
      if (auto why = check_session(s); !why.empty()) {
        out.rejects.push_back({line_no, why});
        continue;
      }
      out.sessions.push_back(std::move(s));
    } catch (const json::exception& e) {
      out.rejects.push_back({line_no, std::string("schema violation: ") + e.what()});
    }
  }
  return out;
}

std::string serialize_session(const SessionLog& s) {
  json j;
  j["query_id"] = s.query_id;
  j["docs"] = s.docs;
  auto& arr = j["interactions"] = json::array();
  for (const auto& it : s.interactions) {
    arr.push_back({{"doc_id", it.doc_id},
                   {"pos", it.position},
                   {"click", it.clicked ? 1 : 0},
                   {"display_s", it.display_time_s},
                   {"dwell_s", it.dwell_time_s},
                   {"ts", it.timestamp}});
  }
  return j.dump();
}

std::string serialize_click_log(std::span<const SessionLog> sessions, bool with_header) {
  std::string out;
  if (with_header) out += "{\"schema_version\":" + std::to_string(kLogSchemaVersion) + "}\n";
  for (const auto& s : sessions) {
    out += serialize_session(s);
    out += '\n';
  }
  return out;
}

std::vector<AnnotatedSession> attach_examination(std::span<const SessionLog> sessions,
                                                 const examination::GbdtModel& model, int page_size) {
  std::vector<AnnotatedSession> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back({s, examination::exam_predict_session(model, s, page_size)});
  return out;
}

// --- accumulators -------------------------------------------------------------------

void PairStats::add(int position, bool clicked, bool skipped, double e_hat, double display_s, double dwell_s) {
  ++impressions;
  clicks += clicked ? 1 : 0;
  skips += skipped ? 1 : 0;
  sum_position += position;
  sum_e_fixed += std::llround(e_hat * kEScale);
  sum_display_fixed += std::llround(display_s * kTimeScale);
  sum_dwell_fixed += std::llround(dwell_s * kTimeScale);
}

void PairStats::merge(const PairStats& o) {
  impressions += o.impressions;
  clicks += o.clicks;
  skips += o.skips;
  sum_position += o.sum_position;
  sum_e_fixed += o.sum_e_fixed;
  sum_display_fixed += o.sum_display_fixed;
  sum_dwell_fixed += o.sum_dwell_fixed;
}

namespace {

int last_click_position(const SessionLog& s) {
  int last = 0;
  for (const auto& it : s.interactions) {
    if (it.clicked) last = it.position;
  }
  return last;
}

void check_annotation(const AnnotatedSession& s) {
  if (s.e_hat.size() != s.log.interactions.size()) throw AlignmentError("one e_hat per interaction required");
}

}  // namespace

void StatsTable::add_session(const AnnotatedSession& s) {
  check_annotation(s);
  const int last = last_click_position(s.log);
  for (std::size_t i = 0; i < s.log.interactions.size(); ++i) {
    const auto& it = s.log.interactions[i];
    stats_[pair_key(it.query_id, it.doc_id)].add(it.position, it.clicked, !it.clicked && it.position < last,
                                                  s.e_hat[i], it.display_time_s, it.dwell_time_s);
  }
}

void StatsTable::merge(const StatsTable& other) {
  for (const auto& [k, v] : other.stats_) stats_[k].merge(v);
}

const PairStats* StatsTable::find(QueryId q, DocId d) const {
  const auto it = stats_.find(pair_key(q, d));
  return it == stats_.end() ? nullptr : &it->second;
}

StatsTable aggregate(std::span<const AnnotatedSession> sessions, std::size_t jobs) {
  jobs = std::max<std::size_t>(1, std::min(jobs, sessions.size()));
  if (jobs <= 1) {
    StatsTable t;
    for (const auto& s : sessions) t.add_session(s);
    return t;
  }
  const std::size_t per = (sessions.size() + jobs - 1) / jobs;
  std::vector<std::future<StatsTable>> parts;
  for (std::size_t b = 0; b < sessions.size(); b += per) {
    auto shard = sessions.subspan(b, std::min(per, sessions.size() - b));
    parts.push_back(std::async(std::launch::async, [shard] {
      StatsTable t;
      for (const auto& s : shard) t.add_session(s);
      return t;
    }));
  }
  StatsTable total;
  for (auto& p : parts) total.merge(p.get());
  return total;
}

// --- windows ---------------------------------------------------------------------------

std::string to_string(WindowKind kind) {
  switch (kind) {
    case WindowKind::monthly: return "monthly";
    case WindowKind::weekly: return "weekly";
    case WindowKind::daily: return "daily";
  }
  return "?";
}

std::int64_t window_hours(WindowKind kind) {
  switch (kind) {
    case WindowKind::monthly: return 4 * 168;
    case WindowKind::weekly: return 168;
    case WindowKind::daily: return 24;
  }
  return 0;
}

std::int64_t cadence_hours(WindowKind kind) {
  switch (kind) {
    case WindowKind::monthly: return 168;
    case WindowKind::weekly: return 24;
    case WindowKind::daily: return 1;
  }
  return 1;
}

const WindowDict& DictSnapshot::window(WindowKind kind) const {
  switch (kind) {
    case WindowKind::monthly: return monthly;
    case WindowKind::weekly: return weekly;
    case WindowKind::daily: return daily;
  }
  return daily;
}

namespace {

json stats_to_json(const PairStats& s) {
  return json::array({s.impressions, s.clicks, s.skips, s.sum_position, s.sum_e_fixed, s.sum_display_fixed,
                      s.sum_dwell_fixed});
}

PairStats stats_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) throw SchemaError("pair stats must be a 7-element array");
  PairStats s;
  s.impressions = j[0].get<std::int64_t>();
  s.clicks = j[1].get<std::int64_t>();
  s.skips = j[2].get<std::int64_t>();
  s.sum_position = j[3].get<std::int64_t>();
  s.sum_e_fixed = j[4].get<std::int64_t>();
  s.sum_display_fixed = j[5].get<std::int64_t>();
  s.sum_dwell_fixed = j[6].get<std::int64_t>();
  if (s.clicks > s.impressions || s.clicks < 0) throw SchemaError("pair stats violate clicks <= impressions");
  return s;
}

std::string pair_string(PairKey k) { return std::to_string(key_query(k)) + ":" + std::to_string(key_doc(k)); }

PairKey parse_pair_string(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw SchemaError("pair key must be \"q:d\"");
  return pair_key(static_cast<QueryId>(std::stoul(s.substr(0, colon))),
                  static_cast<DocId>(std::stoul(s.substr(colon + 1))));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  auto q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

std::string DictSnapshot::to_json() const {
  json j;
  j["format"] = "drrel.tracking";
  j["version"] = 1;
  j["feature_schema"] = std::string(kFeatureSchemaId);
  j["clock"] = clock;
  for (const auto* w : {&monthly, &weekly, &daily}) {
    json jw;
    jw["coverage"] = json::array({w->coverage_start, w->coverage_end});
    auto& pairs = jw["pairs"] = json::object();
    for (const auto& [k, s] : w->table.entries()) pairs[pair_string(k)] = stats_to_json(s);
    j["dicts"][to_string(w->kind)] = std::move(jw);
  }
  return j.dump();
}

DictSnapshot DictSnapshot::from_json(std::string_view text) {
  DictSnapshot snap;
  try {
    const auto j = json::parse(text);
    if (j.value("format", "") != "drrel.tracking" || j.value("version", 0) != 1) {
      throw SchemaError("not a version-1 tracking snapshot");
    }
    if (j.value("feature_schema", "") != kFeatureSchemaId) throw SchemaError("feature schema mismatch");
    snap.clock = j.at("clock").get<std::int64_t>();
    for (auto* w : {&snap.monthly, &snap.weekly, &snap.daily}) {
      const auto& jw = j.at("dicts").at(to_string(w->kind));
      w->coverage_start = jw.at("coverage").at(0).get<std::int64_t>();
      w->coverage_end = jw.at("coverage").at(1).get<std::int64_t>();
      for (const auto& [k, v] : jw.at("pairs").items()) {
        w->table.mutable_entries()[parse_pair_string(k)] = stats_from_json(v);
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed tracking snapshot: ") + e.what());
  }
  return snap;
}

WindowDict TrackingDicts::materialize(WindowKind kind, std::int64_t clock) const {
  WindowDict w;
  w.kind = kind;
  w.coverage_start = clock - window_hours(kind) + 1;
  w.coverage_end = clock;
  for (auto it = buckets_.lower_bound(w.coverage_start); it != buckets_.end() && it->first <= clock; ++it) {
    w.table.merge(it->second);
  }
  return w;
}

void TrackingDicts::prune(std::int64_t clock) {
  const auto oldest = clock - window_hours(WindowKind::monthly) + 1;
  buckets_.erase(buckets_.begin(), buckets_.lower_bound(oldest));
}

AdvanceStats TrackingDicts::advance(std::int64_t clock, std::span<const AnnotatedSession> sessions,
                                    std::size_t jobs) {
  AdvanceStats st;
  std::string batch;
  for (const auto& s : sessions) {
    check_annotation(s);
    batch += serialize_session(s.log);
    for (double e : s.e_hat) batch += hex64(std::bit_cast<std::uint64_t>(e));
    batch += '\n';
  }
  const auto key = std::make_pair(clock, digest_hex(batch));
  if (applied_.contains(key)) {
    st.replay = true;
    return st;
  }
  if (clock_ && clock < *clock_) {
    throw DomainError("clock moved backwards from " + std::to_string(*clock_) + " to " + std::to_string(clock));
  }

  const auto oldest = clock - window_hours(WindowKind::monthly) + 1;
  for (const auto& s : sessions) {
    for (const auto& it : s.log.interactions) {
      if (it.timestamp > clock) {
        ++st.future_skipped;
      } else if (it.timestamp < oldest) {
        ++st.expired_skipped;
      } else {
        ++st.accepted;
      }
    }
  }
  auto route = [clock, oldest](std::span<const AnnotatedSession> shard) {
    std::map<std::int64_t, StatsTable> out;
    for (const auto& s : shard) {
      const int last = last_click_position(s.log);
      for (std::size_t i = 0; i < s.log.interactions.size(); ++i) {
        const auto& it = s.log.interactions[i];
        if (it.timestamp > clock || it.timestamp < oldest) continue;
        out[it.timestamp].mutable_entries()[pair_key(it.query_id, it.doc_id)].add(
            it.position, it.clicked, !it.clicked && it.position < last, s.e_hat[i], it.display_time_s,
            it.dwell_time_s);
      }
    }
    return out;
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, sessions.size()));
  const std::size_t per = sessions.empty() ? 1 : (sessions.size() + jobs - 1) / jobs;
  std::vector<std::future<std::map<std::int64_t, StatsTable>>> parts;
  for (std::size_t b = 0; b < sessions.size(); b += per) {
    auto shard = sessions.subspan(b, std::min(per, sessions.size() - b));
    parts.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, route, shard));
  }
  for (auto& p : parts) {
    for (auto& [hour, table] : p.get()) buckets_[hour].merge(table);
  }

  const auto prev = clock_;
  clock_ = clock;
  applied_.insert(key);
  prune(clock);

  auto next = std::make_shared<DictSnapshot>(*snapshot_);
  next->clock = clock;
  const bool hour = !prev || clock > *prev;
  const bool day = !prev || floor_div(clock, 24) > floor_div(*prev, 24);
  const bool week = !prev || floor_div(clock, 168) > floor_div(*prev, 168);
  if (week) next->monthly = materialize(WindowKind::monthly, clock);
  if (day) next->weekly = materialize(WindowKind::weekly, clock);
  if (hour) next->daily = materialize(WindowKind::daily, clock);
  st.refreshed = {week, day, hour};
  snapshot_ = std::move(next);
  return st;
}

void TrackingDicts::refresh_all() {
  if (!clock_) return;
  auto next = std::make_shared<DictSnapshot>();
  next->clock = *clock_;
  next->monthly = materialize(WindowKind::monthly, *clock_);
  next->weekly = materialize(WindowKind::weekly, *clock_);
  next->daily = materialize(WindowKind::daily, *clock_);
  snapshot_ = std::move(next);
}

std::string TrackingDicts::state_digest() const {
  std::ostringstream os;
  os << "clock=" << (clock_ ? std::to_string(*clock_) : "none") << '\n';
  for (const auto& [hour, table] : buckets_) {
    std::vector<std::pair<PairKey, PairStats>> rows(table.entries().begin(), table.entries().end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    os << "h" << hour << '\n';
    for (const auto& [k, s] : rows) os << k << ' ' << stats_to_json(s).dump() << '\n';
  }
  os << snapshot_->to_json();
  return digest_hex(os.str());
}

// --- features --------------------------------------------------------------------------

bool ClickFeatureVector::is_zero() const {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; });
}

const std::array<std::string, kFeatureDim>& feature_names() {
  static const auto names = [] {
    std::array<std::string, kFeatureDim> n;
    const char* fields[kFeaturesPerWindow] = {"log_impressions", "ctr", "examined_ctr", "mean_position",
                                              "mean_display_s", "mean_dwell_s", "skip_rate"};
    std::size_t i = 0;
    for (auto kind : {WindowKind::monthly, WindowKind::weekly, WindowKind::daily}) {
      for (const char* f : fields) n[i++] = to_string(kind) + "_" + f;
    }
    return n;
  }();
  return names;
}

ClickFeatureVector build_click_features(const DictSnapshot& snapshot, QueryId query_id, DocId doc_id) {
  ClickFeatureVector v;
  std::size_t base = 0;
  for (auto kind : {WindowKind::monthly, WindowKind::weekly, WindowKind::daily}) {
    const auto* s = snapshot.window(kind).table.find(query_id, doc_id);
    if (s != nullptr && s->impressions > 0) {
      const auto imps = static_cast<double>(s->impressions);
      const auto clicks = static_cast<double>(s->clicks);
      const double se = s->sum_e();
      v.x[base + 0] = std::log1p(imps);
      v.x[base + 1] = clicks / imps;
      v.x[base + 2] = se > 0.0 ? std::clamp(clicks / se, 0.0, 1.0) : 0.0;
      v.x[base + 3] = static_cast<double>(s->sum_position) / imps;
      v.x[base + 4] = s->sum_display() / imps;
      v.x[base + 5] = s->clicks > 0 ? s->sum_dwell() / clicks : 0.0;
      v.x[base + 6] = static_cast<double>(s->skips) / imps;
    }
    base += kFeaturesPerWindow;
  }
  return v;
}

std::string features_to_csv(const DictSnapshot& snapshot, std::span<const std::pair<QueryId, DocId>> pairs) {
  std::ostringstream os;
  os.precision(17);
  os << "query_id,doc_id";
  for (const auto& n : feature_names()) os << ',' << n;
  os << '\n';
  for (const auto& [q, d] : pairs) {
    const auto v = build_click_features(snapshot, q, d);
    os << q << ',' << d;
    for (double x : v.x) os << ',' << x;
    os << '\n';
  }
  return os.str();
}

}  // namespace drrel::tracking
