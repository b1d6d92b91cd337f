#ifndef PDM_PIPELINE_HPP
#define PDM_PIPELINE_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdm/config.hpp"
#include "pdm/downtime.hpp"
#include "pdm/forest.hpp"
#include "pdm/lstm.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/sim.hpp"
#include "pdm/telemetry.hpp"

namespace pdm {

// File names inside a data directory.
inline constexpr std::string_view kTelemetryFile = "telemetry.log";
inline constexpr std::string_view kMaintenanceFile = "maintenance.log";
inline constexpr std::string_view kAlertsFile = "alerts.log";

using Progress = std::function<void(const std::string&)>;

/// Writes a simulator stream in the telemetry log format (time-major).
inline void write_sim_log(const SimRun& run, const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::storage, "cannot write " + path.string());
  out << log_header(schema) << '\n';
  for (const auto& r : run.readings) out << format_reading(r) << '\n';
  out.flush();
  if (!out) fail(ErrorCode::storage, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Model metadata sidecar (<model>.meta): everything needed to rebuild the
// exact training windows and to scale live data.

struct ModelMeta {
  std::string machine_id;
  std::uint32_t zones = 4;
  Millis period = 1000;
  WindowSpec window;
  double train_fraction = 0.8;
  CleaningConfig cleaning;
  NormalizationStats stats;
  OperatingEnvelope envelope;
  std::size_t label_horizon = 30;
  std::size_t regression_forests = 0;
  bool has_classifier = false;

  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

inline constexpr std::string_view kMetaMagic = "pdm-meta v1";

inline std::string encode_meta(const ModelMeta& m) {
  std::ostringstream out;
  out << kMetaMagic << '\n';
  out << "machine_id = " << m.machine_id << '\n';
  out << "zones = " << m.zones << '\n';
  out << "period_ms = " << m.period << '\n';
  out << "window_length = " << m.window.window_len << '\n';
  out << "window_horizon = " << m.window.horizon << '\n';
  out << "window_stride = " << m.window.stride << '\n';
  out << "train_fraction = " << format_double(m.train_fraction) << '\n';
  out << "outlier_z = " << format_double(m.cleaning.outlier_z) << '\n';
  out << "max_gap = " << m.cleaning.max_gap << '\n';
  out << "normalization = " << (m.stats.mode == NormalizationMode::min_max ? "min_max" : "z_score") << '\n';
  for (std::size_t j = 0; j < m.stats.entries.size(); ++j) {
    out << "stats." << j << " = " << format_double(m.stats.entries[j].a) << "," << format_double(m.stats.entries[j].b)
        << '\n';
  }
  out << "sustain_steps = " << m.envelope.sustain_steps << '\n';
  for (std::size_t j = 0; j < m.envelope.bounds.size(); ++j) {
    out << "envelope." << j << " = " << format_double(m.envelope.bounds[j].lower) << ","
        << format_double(m.envelope.bounds[j].upper) << '\n';
  }
  out << "label_horizon = " << m.label_horizon << '\n';
  out << "regression_forests = " << m.regression_forests << '\n';
  out << "classifier = " << (m.has_classifier ? "true" : "false") << '\n';
  return out.str();
}

inline ModelMeta decode_meta(std::string_view text) {
  const auto nl = text.find('\n');
  if (trim(text.substr(0, nl)) != kMetaMagic) fail(ErrorCode::format, "not a model metadata file");
  const auto kv = KeyValueConfig::parse(nl == std::string_view::npos ? "" : text.substr(nl + 1));
  auto pair = [&](const std::string& key) {
    auto v = kv.get(key);
    if (!v) fail(ErrorCode::corruption, "metadata lacks " + key);
    auto parts = split(*v, ',');
    auto a = parts.size() == 2 ? parse_double(parts[0]) : std::nullopt;
    auto b = parts.size() == 2 ? parse_double(parts[1]) : std::nullopt;
    if (!a || !b) fail(ErrorCode::corruption, "metadata " + key + " is malformed");
    return std::pair{*a, *b};
  };
  ModelMeta m;
  m.machine_id = kv.get_string("machine_id", "");
  m.zones = kv.get_int<std::uint32_t>("zones", 4);
  m.period = kv.get_int<Millis>("period_ms", 1000);
  m.window.window_len = kv.get_int<std::size_t>("window_length", 32);
  m.window.horizon = kv.get_int<std::size_t>("window_horizon", 1);
  m.window.stride = kv.get_int<std::size_t>("window_stride", 1);
  m.train_fraction = kv.get_double("train_fraction", 0.8);
  m.cleaning.outlier_z = kv.get_double("outlier_z", 4.0);
  m.cleaning.max_gap = kv.get_int<std::size_t>("max_gap", 5);
  m.stats.mode = kv.get_string("normalization", "min_max") == "z_score" ? NormalizationMode::z_score
                                                                        : NormalizationMode::min_max;
  const std::size_t f = kBaseParameterCount + m.zones;
  for (std::size_t j = 0; j < f; ++j) {
    auto [a, b] = pair("stats." + std::to_string(j));
    m.stats.entries.push_back({a, b});
  }
  m.envelope.sustain_steps = kv.get_int<std::size_t>("sustain_steps", 3);
  for (std::size_t j = 0; j < f; ++j) {
    auto [lo, hi] = pair("envelope." + std::to_string(j));
    m.envelope.bounds.push_back({lo, hi});
  }
  m.label_horizon = kv.get_int<std::size_t>("label_horizon", 30);
  m.regression_forests = kv.get_int<std::size_t>("regression_forests", 0);
  m.has_classifier = kv.get_bool("classifier", false);
  return m;
}

inline std::filesystem::path meta_path(const std::filesystem::path& model) {
  auto p = model;
  p += ".meta";
  return p;
}

inline std::filesystem::path forest_path(const std::filesystem::path& model) {
  auto p = model;
  p += ".forest";
  return p;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  std::string machine_id;
  std::vector<SeriesFrame> frames;  // cleaned, raw units
  std::vector<Millis> boundaries;
  NormalizationStats stats;
  WindowedDataset all;
  WindowedDataset train;
  WindowedDataset validation;
};

inline std::string pick_machine(const TelemetryStore& store, const std::optional<std::string>& wanted) {
  if (wanted && !wanted->empty()) {
    if (!store.has_machine(*wanted)) fail(ErrorCode::not_found, "unknown machine '" + *wanted + "'");
    return *wanted;
  }
  auto machines = store.machines();
  if (machines.empty()) fail(ErrorCode::invalid_dataset, "telemetry store is empty");
  return machines.front();
}

/// Grid frames over the machine's whole history, cleaned per column.
inline std::vector<SeriesFrame> cleaned_frames(const TelemetryStore& store, const std::string& machine, Millis period,
                                               const CleaningConfig& cleaning) {
  const auto [lo, hi] = store.time_span(machine);
  auto frames = store.frames(machine, lo, hi + 1, period, Aggregation::mean);
  return clean_frames(frames, cleaning).first;
}

/// History for live forecasting: gaps are interpolated but nothing is
/// clamped, and a trailing partially-ingested step is dropped.
inline std::vector<SeriesFrame> forecast_history(const TelemetryStore& store, const std::string& machine,
                                                 Millis period, std::size_t max_gap) {
  const auto [lo, hi] = store.time_span(machine);
  auto frames = store.frames(machine, lo, hi + 1, period, Aggregation::mean);
  CleaningConfig fill_only{std::numeric_limits<double>::infinity(), max_gap};
  frames = clean_frames(frames, fill_only).first;
  while (!frames.empty() && !frames.back().complete()) frames.pop_back();
  return frames;
}

/// Frames -> (optionally fitted) scaling -> windows -> chronological split.
inline PreparedData prepare_data(const TelemetryStore& store, const std::string& machine, Millis period,
                                 const WindowSpec& window, double train_fraction, const CleaningConfig& cleaning,
                                 std::vector<Millis> boundaries, NormalizationMode mode,
                                 const std::optional<NormalizationStats>& fixed_stats = std::nullopt) {
  PreparedData d;
  d.machine_id = machine;
  d.frames = cleaned_frames(store, machine, period, cleaning);
  d.boundaries = std::move(boundaries);
  d.stats = fixed_stats ? *fixed_stats : fit_normalizer(d.frames, mode);
  const auto normalized = normalize_frames(d.frames, d.stats);
  d.all = make_windows(normalized, window, d.boundaries);
  if (d.all.empty()) fail(ErrorCode::invalid_dataset, "no complete windows: need more history");
  std::tie(d.train, d.validation) = chrono_split(d.all, train_fraction);
  return d;
}

/// Flattened windows as forest inputs.
inline std::vector<Vector> forest_inputs(const WindowedDataset& ds) {
  std::vector<Vector> xs;
  xs.reserve(ds.size());
  for (const auto& w : ds.inputs) xs.push_back(flatten_window(w));
  return xs;
}

/// Mean over samples of the per-sample mean squared error across features.
inline double forest_mse(const std::vector<Forest>& forests, const WindowedDataset& ds) {
  if (ds.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = flatten_window(ds.inputs[i]);
    Vector y(forests.size());
    for (std::size_t j = 0; j < forests.size(); ++j) y[j] = predict(forests[j], x);
    total += mse_loss(y, ds.targets[i]);
  }
  return total / static_cast<double>(ds.size());
}

/// "Next value equals the last observed value."
inline double persistence_mse(const WindowedDataset& ds) {
  if (ds.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) total += mse_loss(ds.inputs[i].back(), ds.targets[i]);
  return total / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Stages

struct TrainArtifacts {
  TrainReport report;
  ModelMeta meta;
  std::vector<Forest> regressors;  // one per feature
  std::optional<Forest> classifier;
};

inline TrainArtifacts train_models(const TelemetryStore& store, const std::vector<Millis>& boundaries,
                                   const PipelineConfig& cfg, const Progress& progress = {}) {
  const std::string machine = pick_machine(store, cfg.machine);
  auto data = prepare_data(store, machine, cfg.period(), cfg.window, cfg.train_fraction, cfg.cleaning, boundaries,
                           cfg.normalization);
  if (progress) {
    progress("machine " + machine + ": " + std::to_string(data.frames.size()) + " frames, " +
             std::to_string(data.train.size()) + " train / " + std::to_string(data.validation.size()) +
             " validation windows");
  }
  TrainArtifacts out;
  out.report = train(data.train, data.validation, cfg.train);
  if (progress) {
    progress("lstm: epoch-1 mse " + format_double(out.report.train_mse.empty() ? 0.0 : out.report.train_mse.front()) +
             ", final " + format_double(out.report.train_mse.empty() ? 0.0 : out.report.train_mse.back()) + " (" +
             format_double(std::round(out.report.wall_seconds * 100) / 100) + " s)");
  }

  const auto xs = forest_inputs(data.train);
  auto forest_cfg = cfg.forest;
  if (forest_cfg.features_per_split && *forest_cfg.features_per_split > xs.front().size()) {
    forest_cfg.features_per_split = xs.front().size();
  }
  for (std::size_t j = 0; j < data.train.features; ++j) {
    std::vector<double> ys;
    for (const auto& t : data.train.targets) ys.push_back(t[j]);
    auto fc = forest_cfg;
    fc.task = ForestTask::regression;
    fc.rng_seed = cfg.forest.rng_seed + 1000 * j;
    out.regressors.push_back(fit_forest(xs, ys, fc));
  }
  const auto envelope = cfg.envelope();
  auto labels = make_downtime_labels(data.frames, data.train, envelope, cfg.label_horizon);
  auto cc = forest_cfg;
  cc.task = ForestTask::classification;
  out.classifier = fit_forest(xs, labels, cc);
  if (progress) progress("forest: " + std::to_string(out.regressors.size()) + " regressors + 1 classifier");

  out.meta.machine_id = machine;
  out.meta.zones = cfg.sim.zones;
  out.meta.period = cfg.period();
  out.meta.window = cfg.window;
  out.meta.train_fraction = cfg.train_fraction;
  out.meta.cleaning = cfg.cleaning;
  out.meta.stats = data.stats;
  out.meta.envelope = envelope;
  out.meta.label_horizon = cfg.label_horizon;
  out.meta.regression_forests = out.regressors.size();
  out.meta.has_classifier = true;
  return out;
}

inline std::string report_csv(const TrainReport& r) {
  std::string text = "epoch,train_mse,validation_mse\n";
  for (std::size_t e = 0; e < r.train_mse.size(); ++e) {
    text += std::to_string(e + 1) + "," + format_double(r.train_mse[e]) + "," + format_double(r.validation_mse[e]) + "\n";
  }
  return text;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) fail(ErrorCode::storage, "cannot write " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::not_found, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Model file plus .meta and .forest sidecars.
inline void save_artifacts(const TrainArtifacts& a, const std::filesystem::path& model_path) {
  save_model(a.report.params, model_path);
  write_text_file(meta_path(model_path), encode_meta(a.meta));
  ByteWriter w;
  for (const auto& f : a.regressors) encode_forest(f, w);
  if (a.classifier) encode_forest(*a.classifier, w);
  write_binary_file(forest_path(model_path), w.bytes());
}

struct LoadedModel {
  LstmParams params;
  ModelMeta meta;
  std::vector<Forest> regressors;
  std::optional<Forest> classifier;

  ForecastModel forecast_model() const {
    return ForecastModel{params, meta.stats, meta.window.window_len, meta.period, classifier};
  }
};

inline LoadedModel load_artifacts(const std::filesystem::path& model_path) {
  LoadedModel m;
  m.params = load_model(model_path);
  m.meta = decode_meta(read_text_file(meta_path(model_path)));
  if (m.meta.stats.size() != m.params.input_size) fail(ErrorCode::corruption, "metadata does not match model");
  if (std::filesystem::exists(forest_path(model_path))) {
    const auto bytes = read_binary_file(forest_path(model_path));
    ByteReader r(bytes);
    for (std::size_t j = 0; j < m.meta.regression_forests; ++j) m.regressors.push_back(decode_forest(r));
    if (m.meta.has_classifier) m.classifier = decode_forest(r);
    if (r.remaining() != 0) fail(ErrorCode::corruption, "trailing bytes in forest file");
  }
  return m;
}

struct Evaluation {
  std::size_t validation_samples = 0;
  double lstm_mse = 0.0;
  std::optional<double> forest_mse;
  double persistence_mse = 0.0;
};

/// Rebuilds the training-time validation split from the metadata and scores
/// every model on it (normalized units).
inline Evaluation evaluate_models(const LoadedModel& model, const TelemetryStore& store,
                                  const std::vector<Millis>& boundaries) {
  const auto& m = model.meta;
  auto data = prepare_data(store, pick_machine(store, m.machine_id), m.period, m.window, m.train_fraction, m.cleaning,
                           boundaries, m.stats.mode, m.stats);
  if (data.validation.empty()) fail(ErrorCode::invalid_dataset, "validation split is empty");
  Evaluation e;
  e.validation_samples = data.validation.size();
  e.lstm_mse = dataset_mse(data.validation, model.params);
  if (!model.regressors.empty()) e.forest_mse = forest_mse(model.regressors, data.validation);
  e.persistence_mse = persistence_mse(data.validation);
  return e;
}

/// Data-directory helpers shared by the CLI and server.
inline std::vector<Millis> maintenance_boundaries(const std::filesystem::path& data_dir, const std::string& machine) {
  const auto path = data_dir / kMaintenanceFile;
  if (!std::filesystem::exists(path)) return {};
  return MaintenanceLog(path).boundaries(machine);
}

inline void open_store_readonly(TelemetryStore& store, const std::filesystem::path& data_dir) {
  const auto path = data_dir / kTelemetryFile;
  if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "no telemetry log in " + data_dir.string());
  store.load_log(path);
}

/// Header-only peek at a log's zone count.
inline std::uint32_t log_zones(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::not_found, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return parse_log_header(line);
}

}  // namespace pdm

#endif  // PDM_PIPELINE_HPP
