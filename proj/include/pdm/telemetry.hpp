#ifndef PDM_TELEMETRY_HPP
#define PDM_TELEMETRY_HPP

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdm/error.hpp"
#include "pdm/format.hpp"

namespace pdm {

using Millis = std::int64_t;

enum class ParameterKind : std::uint8_t {
  ejection_pct,
  extruder_pressure,
  machine_speed,
  actual_values_input,
  heating_zone,
};

/// One machine parameter. Heating zones carry a 1-based zone index; the
/// other kinds leave it at 0. Ordering is the canonical frame order.
struct ParameterId {
  ParameterKind kind = ParameterKind::ejection_pct;
  std::uint32_t zone = 0;

  static constexpr ParameterId ejection_pct() { return {ParameterKind::ejection_pct, 0}; }
  static constexpr ParameterId extruder_pressure() { return {ParameterKind::extruder_pressure, 0}; }
  static constexpr ParameterId machine_speed() { return {ParameterKind::machine_speed, 0}; }
  static constexpr ParameterId actual_values_input() { return {ParameterKind::actual_values_input, 0}; }
  static constexpr ParameterId heating_zone(std::uint32_t k) { return {ParameterKind::heating_zone, k}; }

  friend constexpr auto operator<=>(const ParameterId&, const ParameterId&) = default;
};

inline std::string to_token(ParameterId p) {
  switch (p.kind) {
    case ParameterKind::ejection_pct: return "ejection_pct";
    case ParameterKind::extruder_pressure: return "extruder_pressure";
    case ParameterKind::machine_speed: return "machine_speed";
    case ParameterKind::actual_values_input: return "actual_values_input";
    case ParameterKind::heating_zone: return "heating_zone_" + std::to_string(p.zone);
  }
  return "unknown";
}

/// Parses a wire token. Zone range is checked against a Schema, not here.
inline std::optional<ParameterId> parse_parameter(std::string_view token) {
  if (token == "ejection_pct") return ParameterId::ejection_pct();
  if (token == "extruder_pressure") return ParameterId::extruder_pressure();
  if (token == "machine_speed") return ParameterId::machine_speed();
  if (token == "actual_values_input") return ParameterId::actual_values_input();
  constexpr std::string_view prefix = "heating_zone_";
  if (token.starts_with(prefix)) {
    auto k = parse_int<std::uint32_t>(token.substr(prefix.size()));
    if (k && *k >= 1) return ParameterId::heating_zone(*k);
  }
  return std::nullopt;
}

inline constexpr std::size_t kBaseParameterCount = 4;

/// The frame layout: four fixed parameters followed by Z heating zones.
class Schema {
 public:
  explicit Schema(std::uint32_t zones = 4) : zones_(zones) {}

  std::uint32_t zones() const { return zones_; }
  std::size_t feature_count() const { return kBaseParameterCount + zones_; }

  bool contains(ParameterId p) const {
    if (p.kind != ParameterKind::heating_zone) return p.zone == 0;
    return p.zone >= 1 && p.zone <= zones_;
  }

  std::size_t index(ParameterId p) const {
    if (!contains(p)) fail(ErrorCode::invalid_argument, "parameter not in schema: " + to_token(p));
    if (p.kind == ParameterKind::heating_zone) return kBaseParameterCount + p.zone - 1;
    return static_cast<std::size_t>(p.kind);
  }

  ParameterId at(std::size_t index) const {
    if (index >= feature_count()) fail(ErrorCode::invalid_argument, "feature index out of range");
    if (index < kBaseParameterCount) return {static_cast<ParameterKind>(index), 0};
    return ParameterId::heating_zone(static_cast<std::uint32_t>(index - kBaseParameterCount + 1));
  }

  std::vector<ParameterId> parameters() const {
    std::vector<ParameterId> out;
    for (std::size_t i = 0; i < feature_count(); ++i) out.push_back(at(i));
    return out;
  }

  std::vector<std::string> tokens() const {
    std::vector<std::string> out;
    for (auto p : parameters()) out.push_back(to_token(p));
    return out;
  }

  ParameterId parse(std::string_view token) const {
    auto p = parse_parameter(token);
    if (!p || !contains(*p)) {
      fail(ErrorCode::invalid_argument, "unknown parameter '" + std::string(token) + "'");
    }
    return *p;
  }

  friend bool operator==(const Schema&, const Schema&) = default;

 private:
  std::uint32_t zones_;
};

struct SensorReading {
  std::string machine_id;
  Millis timestamp = 0;
  ParameterId parameter;
  double value = 0.0;

  friend bool operator==(const SensorReading&, const SensorReading&) = default;
};

/// One aligned multivariate sample; absent slots stay nullopt.
struct SeriesFrame {
  Millis timestamp = 0;
  std::vector<std::optional<double>> values;

  bool complete() const {
    return std::all_of(values.begin(), values.end(), [](const auto& v) { return v.has_value(); });
  }

  friend bool operator==(const SeriesFrame&, const SeriesFrame&) = default;
};

enum class MachineStatus { running, down, maintenance };

inline std::string_view to_string(MachineStatus s) {
  switch (s) {
    case MachineStatus::running: return "running";
    case MachineStatus::down: return "down";
    case MachineStatus::maintenance: return "maintenance";
  }
  return "unknown";
}

struct SeriesPoint {
  Millis timestamp = 0;  // bucket start
  std::optional<double> value;

  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

enum class Aggregation { mean, last, max };

inline Millis floor_div(Millis a, Millis b) {
  Millis q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// Buckets an ascending series onto a fixed grid. Bucket b covers
/// [b*period, (b+1)*period); empty buckets between the first and last
/// occupied ones come out as gaps.
inline std::vector<SeriesPoint> resample(std::span<const SensorReading> series, Millis period,
                                         Aggregation agg) {
  if (period <= 0) fail(ErrorCode::invalid_argument, "resample period must be positive");
  std::vector<SeriesPoint> out;
  if (series.empty()) return out;

  const Millis first = floor_div(series.front().timestamp, period);
  const Millis last = floor_div(series.back().timestamp, period);
  if (last < first) fail(ErrorCode::invalid_argument, "resample input must be ascending");
  const auto buckets = static_cast<std::size_t>(last - first + 1);

  std::vector<double> acc(buckets, 0.0);
  std::vector<std::size_t> count(buckets, 0);
  Millis prev = std::numeric_limits<Millis>::min();
  for (const auto& r : series) {
    if (r.timestamp < prev) fail(ErrorCode::invalid_argument, "resample input must be ascending");
    prev = r.timestamp;
    const auto b = static_cast<std::size_t>(floor_div(r.timestamp, period) - first);
    switch (agg) {
      case Aggregation::mean: acc[b] += r.value; break;
      case Aggregation::last: acc[b] = r.value; break;
      case Aggregation::max: acc[b] = count[b] == 0 ? r.value : std::max(acc[b], r.value); break;
    }
    ++count[b];
  }

  out.reserve(buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    SeriesPoint p{(first + static_cast<Millis>(b)) * period, std::nullopt};
    if (count[b] > 0) {
      p.value = agg == Aggregation::mean ? acc[b] / static_cast<double>(count[b]) : acc[b];
    }
    out.push_back(p);
  }
  return out;
}

inline constexpr std::string_view kLogMagic = "pdm-log";

inline std::string log_header(const Schema& schema) {
  return std::string(kLogMagic) + " v1 zones=" + std::to_string(schema.zones());
}

inline std::string format_reading(const SensorReading& r) {
  return std::to_string(r.timestamp) + "," + r.machine_id + "," + to_token(r.parameter) + "," +
         format_double(r.value);
}

/// Checks a `pdm-log v1 zones=<Z>` header and returns Z.
inline std::uint32_t parse_log_header(std::string_view line) {
  auto fields = split(trim(line), ' ');
  if (fields.size() != 3 || fields[0] != kLogMagic) {
    fail(ErrorCode::format, "not a telemetry log (bad header)");
  }
  if (fields[1] != "v1") fail(ErrorCode::format, "unsupported log version '" + std::string(fields[1]) + "'");
  if (!fields[2].starts_with("zones=")) fail(ErrorCode::format, "log header missing zones");
  auto zones = parse_int<std::uint32_t>(fields[2].substr(6));
  if (!zones) fail(ErrorCode::format, "log header has invalid zone count");
  return *zones;
}

inline SensorReading parse_reading(std::string_view line, const Schema& schema, std::size_t line_no) {
  auto fields = split(line, ',');
  if (fields.size() != 4) throw ParseError(line_no, "expected 4 fields");
  auto ts = parse_int<Millis>(fields[0]);
  if (!ts || *ts < 0) throw ParseError(line_no, "bad timestamp");
  if (!valid_machine_id(fields[1])) throw ParseError(line_no, "bad machine id");
  auto p = parse_parameter(fields[2]);
  if (!p || !schema.contains(*p)) throw ParseError(line_no, "bad parameter");
  auto v = parse_double(fields[3]);
  if (!v || !std::isfinite(*v)) throw ParseError(line_no, "bad value");
  return SensorReading{std::string(fields[1]), *ts, *p, *v};
}

/// Reads a whole telemetry log file (header checked against `schema`).
inline std::vector<SensorReading> read_log_file(const std::filesystem::path& path,
                                                const Schema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::storage, "cannot open log " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::format, "empty log file " + path.string());
  if (parse_log_header(line) != schema.zones()) {
    fail(ErrorCode::format, "log zone count does not match configured schema");
  }
  std::vector<SensorReading> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_reading(line, schema, line_no));
  }
  return out;
}

inline void validate_reading(const SensorReading& r, const Schema& schema) {
  if (!std::isfinite(r.value)) fail(ErrorCode::rejected_reading, "non-finite value");
  if (r.timestamp < 0) fail(ErrorCode::rejected_reading, "negative timestamp");
  if (!valid_machine_id(r.machine_id)) fail(ErrorCode::rejected_reading, "invalid machine id");
  if (!schema.contains(r.parameter)) {
    fail(ErrorCode::rejected_reading, "parameter outside schema: " + to_token(r.parameter));
  }
}

/// Append-only time-series store. Duplicate (machine, parameter, timestamp)
/// keys are last-write-wins. With a log path, every append is written
/// through to the log before it becomes visible.
///
/// One writer at a time; readers share a lock and always see whole appends.
class TelemetryStore {
 public:
  explicit TelemetryStore(Schema schema = Schema{}) : schema_(schema) {}

  /// Opens (or creates) a durable store backed by `log_path`; an existing
  /// log is replayed first.
  TelemetryStore(Schema schema, const std::filesystem::path& log_path) : schema_(schema) {
    std::error_code ec;
    const bool exists = std::filesystem::exists(log_path, ec);
    if (exists) {
      for (auto& r : read_log_file(log_path, schema_)) insert(r);
    }
    log_.open(log_path, std::ios::app);
    if (!log_) fail(ErrorCode::storage, "cannot open log for append: " + log_path.string());
    if (!exists) {
      log_ << log_header(schema_) << '\n';
      log_.flush();
      if (!log_) fail(ErrorCode::storage, "cannot write log header");
    }
  }

  TelemetryStore(const TelemetryStore&) = delete;
  TelemetryStore& operator=(const TelemetryStore&) = delete;

  const Schema& schema() const { return schema_; }

  std::size_t append(const SensorReading& reading) {
    validate_reading(reading, schema_);
    std::unique_lock lock(mutex_);
    if (log_.is_open()) {
      log_ << format_reading(reading) << '\n';
      log_.flush();
      if (!log_) fail(ErrorCode::storage, "telemetry log write failed");
    }
    insert(reading);
    return size_;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return size_;
  }

  bool has_machine(std::string_view machine) const {
    std::shared_lock lock(mutex_);
    return machines_.find(machine) != machines_.end();
  }

  std::vector<std::string> machines() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : machines_) out.push_back(id);
    return out;
  }

  /// Readings with t0 <= timestamp < t1, ascending.
  std::vector<SensorReading> query_range(std::string_view machine, ParameterId parameter, Millis t0,
                                         Millis t1) const {
    if (t0 > t1) fail(ErrorCode::invalid_range, "query range start after end");
    const auto idx = schema_.index(parameter);
    std::shared_lock lock(mutex_);
    std::vector<SensorReading> out;
    auto it = machines_.find(machine);
    if (it == machines_.end()) return out;
    const auto& series = it->second[idx];
    for (auto s = series.lower_bound(t0); s != series.end() && s->first < t1; ++s) {
      out.push_back(SensorReading{it->first, s->first, parameter, s->second});
    }
    return out;
  }

  SeriesFrame latest_frame(std::string_view machine) const {
    std::shared_lock lock(mutex_);
    auto it = machines_.find(machine);
    if (it == machines_.end()) fail(ErrorCode::not_found, "unknown machine '" + std::string(machine) + "'");
    SeriesFrame frame{0, std::vector<std::optional<double>>(schema_.feature_count())};
    for (std::size_t p = 0; p < frame.values.size(); ++p) {
      const auto& series = it->second[p];
      if (series.empty()) continue;
      const auto& [ts, value] = *series.rbegin();
      frame.values[p] = value;
      frame.timestamp = std::max(frame.timestamp, ts);
    }
    return frame;
  }

  /// First and last timestamps seen for a machine across all parameters.
  std::pair<Millis, Millis> time_span(std::string_view machine) const {
    std::shared_lock lock(mutex_);
    auto it = machines_.find(machine);
    if (it == machines_.end()) fail(ErrorCode::not_found, "unknown machine '" + std::string(machine) + "'");
    Millis lo = std::numeric_limits<Millis>::max();
    Millis hi = std::numeric_limits<Millis>::min();
    for (const auto& series : it->second) {
      if (series.empty()) continue;
      lo = std::min(lo, series.begin()->first);
      hi = std::max(hi, series.rbegin()->first);
    }
    return {lo, hi};
  }

  /// Grid-aligned frames for buckets intersecting [t0, t1). Every bucket in
  /// the range is emitted; parameters without data in a bucket are absent.
  std::vector<SeriesFrame> frames(std::string_view machine, Millis t0, Millis t1, Millis period,
                                  Aggregation agg = Aggregation::mean) const {
    if (period <= 0) fail(ErrorCode::invalid_argument, "frame period must be positive");
    if (t0 > t1) fail(ErrorCode::invalid_range, "frame range start after end");
    std::shared_lock lock(mutex_);
    auto it = machines_.find(machine);
    if (it == machines_.end()) fail(ErrorCode::not_found, "unknown machine '" + std::string(machine) + "'");
    std::vector<SeriesFrame> out;
    if (t1 <= t0) return out;
    const Millis first = floor_div(t0, period);
    const Millis last = floor_div(t1 - 1, period);
    for (Millis b = first; b <= last; ++b) {
      out.push_back(SeriesFrame{b * period, std::vector<std::optional<double>>(schema_.feature_count())});
    }
    for (std::size_t p = 0; p < schema_.feature_count(); ++p) {
      const auto& series = it->second[p];
      std::vector<SensorReading> readings;
      for (auto s = series.lower_bound(first * period); s != series.end() && s->first < (last + 1) * period; ++s) {
        readings.push_back(SensorReading{it->first, s->first, schema_.at(p), s->second});
      }
      for (const auto& pt : resample(readings, period, agg)) {
        if (!pt.value) continue;
        out[static_cast<std::size_t>(floor_div(pt.timestamp, period) - first)].values[p] = pt.value;
      }
    }
    return out;
  }

  /// Writes every record (machine, parameter, timestamp order) to `path`.
  std::size_t save_log(const std::filesystem::path& path) const {
    std::shared_lock lock(mutex_);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::storage, "cannot write log " + path.string());
    out << log_header(schema_) << '\n';
    std::size_t n = 0;
    for (const auto& [machine, series] : machines_) {
      for (std::size_t p = 0; p < series.size(); ++p) {
        for (const auto& [ts, value] : series[p]) {
          out << format_reading(SensorReading{machine, ts, schema_.at(p), value}) << '\n';
          ++n;
        }
      }
    }
    out.flush();
    if (!out) fail(ErrorCode::storage, "log write failed " + path.string());
    return n;
  }

  /// Merges every record of the log at `path` (last-write-wins); returns
  /// the number of records read. Loaded records are not re-logged.
  std::size_t load_log(const std::filesystem::path& path) {
    auto records = read_log_file(path, schema_);
    std::unique_lock lock(mutex_);
    for (const auto& r : records) insert(r);
    return records.size();
  }

 private:
  using Series = std::map<Millis, double>;

  void insert(const SensorReading& r) {
    auto it = machines_.find(r.machine_id);
    if (it == machines_.end()) {
      it = machines_.emplace(r.machine_id, std::vector<Series>(schema_.feature_count())).first;
    }
    auto [slot, inserted] = it->second[schema_.index(r.parameter)].insert_or_assign(r.timestamp, r.value);
    if (inserted) ++size_;
  }

  Schema schema_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::vector<Series>, std::less<>> machines_;
  std::size_t size_ = 0;
  std::ofstream log_;
};

}  // namespace pdm

#endif  // PDM_TELEMETRY_HPP
