#ifndef PDM_DOWNTIME_HPP
#define PDM_DOWNTIME_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "pdm/envelope.hpp"
#include "pdm/error.hpp"
#include "pdm/forest.hpp"
#include "pdm/format.hpp"
#include "pdm/lstm.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/telemetry.hpp"

namespace pdm {

/// Everything needed to turn raw history into a forecast.
struct ForecastModel {
  LstmParams params;
  NormalizationStats stats;
  std::size_t window_len = 32;
  Millis period = 1000;
  std::optional<Forest> classifier;  // votes "violation within the horizon"
};

struct DowntimeForecast {
  std::string machine_id;
  Millis generated_at = 0;
  std::optional<Millis> predicted_down_at;
  std::optional<Millis> lead_time;
  double confidence = 0.0;
  std::vector<std::pair<ParameterId, std::size_t>> contributing;  // (parameter, 1-based forecast step)
  std::vector<Millis> step_timestamps;  // generated_at + k*period, k = 1..K
  std::vector<Vector> steps;            // raw units

  bool downtime() const { return predicted_down_at.has_value(); }
};

/// Detection over already-denormalized forecast rows. Row k (0-based) is the
/// forecast for generated_at + (k+1)*period.
inline DowntimeForecast detect_downtime(std::string machine_id, Millis generated_at, Millis period,
                                        std::vector<Vector> rows, const OperatingEnvelope& envelope,
                                        const Schema& schema) {
  DowntimeForecast fc;
  fc.machine_id = std::move(machine_id);
  fc.generated_at = generated_at;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    fc.step_timestamps.push_back(generated_at + static_cast<Millis>(k + 1) * period);
  }
  if (auto exit = first_sustained_exit(rows, envelope)) {
    fc.predicted_down_at = generated_at + static_cast<Millis>(exit->onset_step + 1) * period;
    fc.lead_time = *fc.predicted_down_at - generated_at;
    for (auto [j, step] : exit->contributing) fc.contributing.emplace_back(schema.at(j), step + 1);
  }
  fc.steps = std::move(rows);
  fc.confidence = 1.0;
  return fc;
}

/// Rolls the LSTM K steps past the last W frames of `history` and applies the
/// envelope. Confidence is the fraction of ensemble members (the LSTM, plus
/// the classifier when present) that agree with the reported decision.
inline DowntimeForecast forecast_downtime(std::string machine_id, std::span<const SeriesFrame> history,
                                          const ForecastModel& model, const OperatingEnvelope& envelope,
                                          std::size_t horizon_steps, const Schema& schema) {
  if (horizon_steps < 1) fail(ErrorCode::invalid_argument, "horizon_steps must be >= 1");
  const std::size_t f = model.params.input_size;
  if (model.stats.size() != f || envelope.bounds.size() != f || schema.feature_count() != f) {
    fail(ErrorCode::dimension, "model, stats, envelope and schema disagree on feature count");
  }
  if (history.size() < model.window_len) {
    fail(ErrorCode::invalid_dataset, "insufficient history: need " + std::to_string(model.window_len) +
                                         " frames, have " + std::to_string(history.size()));
  }
  const auto recent = history.subspan(history.size() - model.window_len);
  Sequence window;
  for (const auto& frame : recent) {
    if (frame.values.size() != f) fail(ErrorCode::dimension, "frame width does not match model");
    if (!frame.complete()) fail(ErrorCode::invalid_dataset, "insufficient history: window has absent values");
    Vector raw(f);
    for (std::size_t j = 0; j < f; ++j) raw[j] = *frame.values[j];
    window.push_back(model.stats.normalize(raw));
  }
  std::vector<Vector> rows;
  for (const auto& y : predict_horizon(window, model.params, horizon_steps)) rows.push_back(model.stats.denormalize(y));

  auto fc = detect_downtime(std::move(machine_id), recent.back().timestamp, model.period, std::move(rows), envelope,
                            schema);
  if (model.classifier) {
    const bool forest_says_down = predict(*model.classifier, flatten_window(window)) >= 0.5;
    fc.confidence = forest_says_down == fc.downtime() ? 1.0 : 0.5;
  }
  return fc;
}

/// Binary labels for windowed samples: 1 when the raw frames following the
/// window's last input row contain a sustained envelope exit within
/// `horizon_steps` rows.
inline std::vector<double> make_downtime_labels(std::span<const SeriesFrame> raw_frames,
                                                const WindowedDataset& ds, const OperatingEnvelope& envelope,
                                                std::size_t horizon_steps) {
  std::vector<double> labels;
  labels.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t first = ds.start_rows[i] + ds.window_len;
    const std::size_t last = std::min(raw_frames.size(), first + horizon_steps);
    std::vector<Vector> rows;
    for (std::size_t r = first; r < last; ++r) {
      Vector row(raw_frames[r].values.size());
      bool complete = true;
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (!raw_frames[r].values[j]) {
          complete = false;
          break;
        }
        row[j] = *raw_frames[r].values[j];
      }
      if (!complete) break;
      rows.push_back(std::move(row));
    }
    labels.push_back(first_sustained_exit(rows, envelope) ? 1.0 : 0.0);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Alerts

enum class AlertSeverity { warning, critical };
enum class AlertState { open, acknowledged, resolved };

inline std::string_view to_string(AlertSeverity s) { return s == AlertSeverity::warning ? "warning" : "critical"; }

inline std::string_view to_string(AlertState s) {
  switch (s) {
    case AlertState::open: return "open";
    case AlertState::acknowledged: return "acknowledged";
    case AlertState::resolved: return "resolved";
  }
  return "unknown";
}

inline std::optional<AlertSeverity> parse_severity(std::string_view s) {
  if (s == "warning") return AlertSeverity::warning;
  if (s == "critical") return AlertSeverity::critical;
  return std::nullopt;
}

inline std::optional<AlertState> parse_alert_state(std::string_view s) {
  if (s == "open") return AlertState::open;
  if (s == "acknowledged") return AlertState::acknowledged;
  if (s == "resolved") return AlertState::resolved;
  return std::nullopt;
}

struct Alert {
  std::uint64_t id = 0;
  std::string machine_id;
  AlertSeverity severity = AlertSeverity::warning;
  Millis created_at = 0;
  AlertState state = AlertState::open;
  std::string message;
  // Snapshot of the triggering forecast (warnings) or violation (critical).
  std::optional<Millis> predicted_down_at;
  std::optional<Millis> lead_time;
  double confidence = 0.0;

  bool active() const { return state != AlertState::resolved; }
  friend bool operator==(const Alert&, const Alert&) = default;
};

inline constexpr std::string_view kAlertsMagic = "pdm-alerts v1";

namespace detail {

inline std::string optional_ms(const std::optional<Millis>& v) { return v ? std::to_string(*v) : "-"; }

inline std::optional<Millis> parse_optional_ms(std::string_view s, std::size_t line) {
  if (s == "-") return std::nullopt;
  auto v = parse_int<Millis>(s);
  if (!v) throw ParseError(line, "bad timestamp '" + std::string(s) + "'");
  return v;
}

inline bool single_line(std::string_view s) { return s.find_first_of("\r\n") == std::string_view::npos; }

/// Write-then-rename so readers never see a half-written snapshot.
inline void replace_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) fail(ErrorCode::storage, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::storage, "cannot replace " + path.string() + ": " + ec.message());
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::storage, "cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace detail

/// Line format: id,machine,severity,created_at,state,predicted_down_at|-,
/// lead_time|-,confidence,message (message runs to end of line).
inline std::string format_alert(const Alert& a) {
  return std::to_string(a.id) + "," + a.machine_id + "," + std::string(to_string(a.severity)) + "," +
         std::to_string(a.created_at) + "," + std::string(to_string(a.state)) + "," +
         detail::optional_ms(a.predicted_down_at) + "," + detail::optional_ms(a.lead_time) + "," +
         format_double(a.confidence) + "," + a.message;
}

inline Alert parse_alert(std::string_view line, std::size_t line_no) {
  auto f = split(line, ',', 9);
  if (f.size() != 9) throw ParseError(line_no, "expected 9 fields");
  Alert a;
  auto id = parse_int<std::uint64_t>(f[0]);
  auto created = parse_int<Millis>(f[3]);
  auto severity = parse_severity(f[2]);
  auto state = parse_alert_state(f[4]);
  auto confidence = parse_double(f[7]);
  if (!id || !created || !severity || !state || !confidence || !valid_machine_id(f[1])) {
    throw ParseError(line_no, "malformed alert record");
  }
  a.id = *id;
  a.machine_id = std::string(f[1]);
  a.severity = *severity;
  a.created_at = *created;
  a.state = *state;
  a.predicted_down_at = detail::parse_optional_ms(f[5], line_no);
  a.lead_time = detail::parse_optional_ms(f[6], line_no);
  a.confidence = *confidence;
  a.message = std::string(f[8]);
  return a;
}

/// Alert lifecycle. One active alert per (machine, severity); transitions
/// are open -> acknowledged -> resolved or open -> resolved. With a path,
/// every change rewrites the snapshot file.
class AlertManager {
 public:
  AlertManager() = default;
  explicit AlertManager(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(*path_)) load();
  }

  /// Warning when a forecast predicts downtime sooner than the threshold;
  /// resolves the active warning once a forecast no longer does.
  std::optional<Alert> on_forecast(const DowntimeForecast& fc, Millis warning_threshold, Millis now) {
    std::unique_lock lock(mutex_);
    const bool condition = fc.lead_time && *fc.lead_time < warning_threshold;
    if (!condition) {
      resolve_where(fc.machine_id, AlertSeverity::warning);
      persist();
      return std::nullopt;
    }
    if (auto* a = find_active(fc.machine_id, AlertSeverity::warning)) return *a;
    Alert a;
    a.machine_id = fc.machine_id;
    a.severity = AlertSeverity::warning;
    a.created_at = now;
    a.predicted_down_at = fc.predicted_down_at;
    a.lead_time = fc.lead_time;
    a.confidence = fc.confidence;
    a.message = "downtime predicted in " + std::to_string(*fc.lead_time) + " ms";
    if (!fc.contributing.empty()) a.message += " (" + to_token(fc.contributing.front().first) + ")";
    return open(std::move(a));
  }

  /// Critical while any envelope violation is active; resolves when clear.
  std::optional<Alert> on_violations(const std::string& machine_id, std::span<const Violation> violations,
                                     const Schema& schema, Millis now) {
    std::unique_lock lock(mutex_);
    if (violations.empty()) {
      resolve_where(machine_id, AlertSeverity::critical);
      persist();
      return std::nullopt;
    }
    if (auto* a = find_active(machine_id, AlertSeverity::critical)) return *a;
    Alert a;
    a.machine_id = machine_id;
    a.severity = AlertSeverity::critical;
    a.created_at = now;
    a.predicted_down_at = violations.front().onset;
    a.lead_time = 0;
    a.confidence = 1.0;
    a.message = "envelope violation: ";
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (i) a.message += ", ";
      a.message += to_token(schema.at(violations[i].parameter));
    }
    return open(std::move(a));
  }

  /// Open -> acknowledged; acknowledging again is a no-op. A resolved
  /// alert cannot be acknowledged (conflict).
  Alert acknowledge(std::uint64_t id) {
    std::unique_lock lock(mutex_);
    auto it = std::find_if(alerts_.begin(), alerts_.end(), [&](const Alert& a) { return a.id == id; });
    if (it == alerts_.end()) fail(ErrorCode::not_found, "no alert with id " + std::to_string(id));
    if (it->state == AlertState::resolved) fail(ErrorCode::conflict, "alert " + std::to_string(id) + " is resolved");
    if (it->state == AlertState::open) {
      it->state = AlertState::acknowledged;
      persist();
    }
    return *it;
  }

  /// Resolves every active alert of a machine; returns how many changed.
  std::size_t resolve_all(const std::string& machine_id) {
    std::unique_lock lock(mutex_);
    const std::size_t n = resolve_where(machine_id, std::nullopt);
    persist();
    return n;
  }

  std::vector<Alert> list(const std::string& machine_id, std::optional<AlertState> state = std::nullopt) const {
    std::shared_lock lock(mutex_);
    std::vector<Alert> out;
    for (const auto& a : alerts_) {
      if (a.machine_id == machine_id && (!state || a.state == *state)) out.push_back(a);
    }
    return out;
  }

  std::optional<Alert> get(std::uint64_t id) const {
    std::shared_lock lock(mutex_);
    for (const auto& a : alerts_) {
      if (a.id == id) return a;
    }
    return std::nullopt;
  }

  std::vector<Alert> all() const {
    std::shared_lock lock(mutex_);
    return alerts_;
  }

  std::string serialize() const {
    std::shared_lock lock(mutex_);
    return serialize_locked();
  }

 private:
  Alert open(Alert a) {
    a.id = next_id_++;
    a.state = AlertState::open;
    alerts_.push_back(a);
    persist();
    return a;
  }

  Alert* find_active(const std::string& machine, AlertSeverity severity) {
    for (auto& a : alerts_) {
      if (a.machine_id == machine && a.severity == severity && a.active()) return &a;
    }
    return nullptr;
  }

  std::size_t resolve_where(const std::string& machine, std::optional<AlertSeverity> severity) {
    std::size_t n = 0;
    for (auto& a : alerts_) {
      if (a.machine_id == machine && a.active() && (!severity || a.severity == *severity)) {
        a.state = AlertState::resolved;
        ++n;
      }
    }
    return n;
  }

  std::string serialize_locked() const {
    std::string text = std::string(kAlertsMagic) + "\n";
    for (const auto& a : alerts_) text += format_alert(a) + "\n";
    return text;
  }

  void persist() {
    if (path_) detail::replace_file(*path_, serialize_locked());
  }

  void load() {
    const auto lines = detail::read_lines(*path_);
    if (lines.empty() || lines[0] != kAlertsMagic) fail(ErrorCode::format, "not an alert log (expected '" + std::string(kAlertsMagic) + "')");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      alerts_.push_back(parse_alert(lines[i], i + 1));
      next_id_ = std::max(next_id_, alerts_.back().id + 1);
    }
  }

  mutable std::shared_mutex mutex_;
  std::optional<std::filesystem::path> path_;
  std::vector<Alert> alerts_;
  std::uint64_t next_id_ = 1;
};

// ---------------------------------------------------------------------------
// Maintenance

struct MaintenanceEvent {
  std::string machine_id;
  Millis timestamp = 0;
  std::string note;
  std::string performed_by;

  friend bool operator==(const MaintenanceEvent&, const MaintenanceEvent&) = default;
};

inline constexpr std::string_view kMaintenanceMagic = "pdm-maint v1";

/// Line format: timestamp_ms,machine_id,performed_by,note (note runs to end
/// of line; performed_by may not contain commas).
inline std::string format_event(const MaintenanceEvent& e) {
  return std::to_string(e.timestamp) + "," + e.machine_id + "," + e.performed_by + "," + e.note;
}

inline MaintenanceEvent parse_event(std::string_view line, std::size_t line_no) {
  auto f = split(line, ',', 4);
  if (f.size() != 4) throw ParseError(line_no, "expected 4 fields");
  auto ts = parse_int<Millis>(f[0]);
  if (!ts || !valid_machine_id(f[1])) throw ParseError(line_no, "malformed maintenance record");
  return {std::string(f[1]), *ts, std::string(f[3]), std::string(f[2])};
}

inline void validate_event(const MaintenanceEvent& e) {
  if (!valid_machine_id(e.machine_id)) fail(ErrorCode::invalid_argument, "bad machine id");
  if (e.timestamp < 0) fail(ErrorCode::invalid_argument, "timestamp must be >= 0");
  if (e.note.empty()) fail(ErrorCode::invalid_argument, "note must not be empty");
  if (!detail::single_line(e.note) || !detail::single_line(e.performed_by) ||
      e.performed_by.find(',') != std::string::npos) {
    fail(ErrorCode::invalid_argument, "note and performed_by must be single-line; performed_by without commas");
  }
}

/// Append-only maintenance history with per-machine status.
class MaintenanceLog {
 public:
  MaintenanceLog() = default;
  explicit MaintenanceLog(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(*path_)) {
      const auto lines = detail::read_lines(*path_);
      if (lines.empty() || lines[0] != kMaintenanceMagic) {
        fail(ErrorCode::format, "not a maintenance log (expected '" + std::string(kMaintenanceMagic) + "')");
      }
      for (std::size_t i = 1; i < lines.size(); ++i) {
        if (!lines[i].empty()) events_.push_back(parse_event(lines[i], i + 1));
      }
    } else {
      std::ofstream out(*path_, std::ios::binary);
      out << kMaintenanceMagic << "\n";
      if (!out) fail(ErrorCode::storage, "cannot create " + path_->string());
    }
  }

  void append(const MaintenanceEvent& e) {
    validate_event(e);
    std::unique_lock lock(mutex_);
    if (path_) {
      std::ofstream out(*path_, std::ios::binary | std::ios::app);
      out << format_event(e) << "\n";
      out.flush();
      if (!out) fail(ErrorCode::storage, "cannot append to " + path_->string());
    }
    events_.push_back(e);
  }

  std::vector<MaintenanceEvent> events(const std::string& machine_id) const {
    std::shared_lock lock(mutex_);
    std::vector<MaintenanceEvent> out;
    for (const auto& e : events_) {
      if (e.machine_id == machine_id) out.push_back(e);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    return out;
  }

  /// Event timestamps, for make_windows.
  std::vector<Millis> boundaries(const std::string& machine_id) const {
    std::vector<Millis> out;
    for (const auto& e : events(machine_id)) out.push_back(e.timestamp);
    return out;
  }

  MachineStatus status(const std::string& machine_id) const {
    std::shared_lock lock(mutex_);
    auto it = status_.find(machine_id);
    return it == status_.end() ? MachineStatus::running : it->second;
  }

  void set_status(const std::string& machine_id, MachineStatus s) {
    std::unique_lock lock(mutex_);
    status_[machine_id] = s;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::optional<std::filesystem::path> path_;
  std::vector<MaintenanceEvent> events_;
  std::map<std::string, MachineStatus, std::less<>> status_;
};

struct MaintenanceOutcome {
  std::size_t resolved_alerts = 0;
  std::vector<MachineStatus> status_trail;  // statuses the machine passed through
};

/// Appends the event, resolves the machine's active alerts and cycles its
/// status through maintenance back to running.
inline MaintenanceOutcome record_maintenance(const MaintenanceEvent& event, Millis now,
                                             const std::function<bool(const std::string&)>& machine_known,
                                             MaintenanceLog& log, AlertManager& alerts) {
  if (!machine_known(event.machine_id)) fail(ErrorCode::not_found, "unknown machine '" + event.machine_id + "'");
  if (event.timestamp > now) fail(ErrorCode::invalid_argument, "maintenance timestamp is in the future");
  validate_event(event);
  MaintenanceOutcome out;
  log.set_status(event.machine_id, MachineStatus::maintenance);
  out.status_trail.push_back(MachineStatus::maintenance);
  log.append(event);
  out.resolved_alerts = alerts.resolve_all(event.machine_id);
  log.set_status(event.machine_id, MachineStatus::running);
  out.status_trail.push_back(MachineStatus::running);
  return out;
}

}  // namespace pdm

#endif  // PDM_DOWNTIME_HPP
