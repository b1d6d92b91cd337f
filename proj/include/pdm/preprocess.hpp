#ifndef PDM_PREPROCESS_HPP
#define PDM_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pdm/error.hpp"
#include "pdm/format.hpp"
#include "pdm/telemetry.hpp"

namespace pdm {

using Vector = std::vector<double>;
using Sequence = std::vector<Vector>;

// ---------------------------------------------------------------------------
// Cleaning

struct CleaningConfig {
  double outlier_z = 4.0;
  std::size_t max_gap = 5;

  void validate() const {
    if (!(outlier_z > 0.0)) fail(ErrorCode::invalid_argument, "outlier_z must be positive");
  }

  friend bool operator==(const CleaningConfig&, const CleaningConfig&) = default;
};

struct GapSpan {
  std::size_t start = 0;
  std::size_t length = 0;

  friend bool operator==(const GapSpan&, const GapSpan&) = default;
};

struct CleaningReport {
  std::size_t interpolated = 0;
  std::size_t clamped = 0;
  std::vector<GapSpan> unfilled;  // gaps left absent (too long or unbounded)
};

struct CleanedSeries {
  std::vector<std::optional<double>> values;
  CleaningReport report;
};

/// Clamps |z| > outlier_z to mean +- outlier_z*std (population statistics of
/// the present values), then linearly interpolates interior gaps of at most
/// max_gap points. Leading, trailing, and longer gaps stay absent.
inline CleanedSeries clean_series(std::span<const std::optional<double>> series,
                                  const CleaningConfig& cfg) {
  cfg.validate();
  CleanedSeries out{{series.begin(), series.end()}, {}};
  auto& values = out.values;

  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n > 0) {
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& v : values) {
      if (v) ss += (*v - mean) * (*v - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd > 0.0) {
      const double lo = mean - cfg.outlier_z * sd;
      const double hi = mean + cfg.outlier_z * sd;
      for (auto& v : values) {
        if (v && std::abs(*v - mean) / sd > cfg.outlier_z) {
          *v = std::clamp(*v, lo, hi);
          ++out.report.clamped;
        }
      }
    }
  }

  std::size_t i = 0;
  while (i < values.size()) {
    if (values[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < values.size() && !values[j]) ++j;
    const std::size_t len = j - i;
    const bool bounded = i > 0 && j < values.size();
    if (bounded && len <= cfg.max_gap) {
      const double a = *values[i - 1];
      const double b = *values[j];
      const double span = static_cast<double>(len + 1);
      for (std::size_t k = i; k < j; ++k) {
        values[k] = a + (b - a) * static_cast<double>(k - i + 1) / span;
      }
      out.report.interpolated += len;
    } else {
      out.report.unfilled.push_back({i, len});
    }
    i = j;
  }
  return out;
}

/// Column-wise clean_series over grid frames; one report per parameter.
inline std::pair<std::vector<SeriesFrame>, std::vector<CleaningReport>> clean_frames(
    std::span<const SeriesFrame> frames, const CleaningConfig& cfg) {
  std::vector<SeriesFrame> out(frames.begin(), frames.end());
  std::vector<CleaningReport> reports;
  if (frames.empty()) return {out, reports};
  const std::size_t features = frames.front().values.size();
  std::vector<std::optional<double>> column(frames.size());
  for (std::size_t p = 0; p < features; ++p) {
    for (std::size_t t = 0; t < frames.size(); ++t) column[t] = frames[t].values.at(p);
    auto cleaned = clean_series(column, cfg);
    for (std::size_t t = 0; t < frames.size(); ++t) out[t].values[p] = cleaned.values[t];
    reports.push_back(std::move(cleaned.report));
  }
  return {out, reports};
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormalizationMode { min_max, z_score };

/// Per-parameter scaling. `a`/`b` are min/max in min-max mode and mean/std
/// in z-score mode.
struct NormalizationStats {
  struct Entry {
    double a = 0.0;
    double b = 0.0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  NormalizationMode mode = NormalizationMode::min_max;
  std::vector<Entry> entries;

  std::size_t size() const { return entries.size(); }

  double normalize(std::size_t p, double x) const {
    const auto& e = entries.at(p);
    if (mode == NormalizationMode::min_max) {
      const double range = e.b - e.a;
      return range > 0.0 ? (x - e.a) / range : 0.5;
    }
    return e.b > 0.0 ? (x - e.a) / e.b : 0.0;
  }

  double denormalize(std::size_t p, double y) const {
    const auto& e = entries.at(p);
    if (mode == NormalizationMode::min_max) {
      const double range = e.b - e.a;
      return range > 0.0 ? y * range + e.a : e.a;
    }
    return e.b > 0.0 ? y * e.b + e.a : e.a;
  }

  Vector normalize(std::span<const double> x) const {
    check(x.size());
    Vector out(x.size());
    for (std::size_t p = 0; p < x.size(); ++p) out[p] = normalize(p, x[p]);
    return out;
  }

  Vector denormalize(std::span<const double> y) const {
    check(y.size());
    Vector out(y.size());
    for (std::size_t p = 0; p < y.size(); ++p) out[p] = denormalize(p, y[p]);
    return out;
  }

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;

 private:
  void check(std::size_t n) const {
    if (n != entries.size()) fail(ErrorCode::dimension, "vector length does not match normalization stats");
  }
};

inline NormalizationStats fit_normalizer(std::span<const SeriesFrame> frames, NormalizationMode mode) {
  NormalizationStats stats{mode, {}};
  if (frames.empty()) fail(ErrorCode::missing_stats, "no frames to fit normalization");
  const std::size_t features = frames.front().values.size();
  for (std::size_t p = 0; p < features; ++p) {
    std::vector<double> xs;
    for (const auto& f : frames) {
      if (f.values.at(p)) xs.push_back(*f.values[p]);
    }
    if (xs.empty()) fail(ErrorCode::missing_stats, "parameter " + std::to_string(p) + " has no samples");
    if (mode == NormalizationMode::min_max) {
      auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
      stats.entries.push_back({*lo, *hi});
    } else {
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      stats.entries.push_back({mean, std::sqrt(ss / static_cast<double>(xs.size()))});
    }
  }
  return stats;
}

inline std::vector<SeriesFrame> normalize_frames(std::span<const SeriesFrame> frames,
                                                 const NormalizationStats& stats) {
  std::vector<SeriesFrame> out(frames.begin(), frames.end());
  for (auto& f : out) {
    if (f.values.size() != stats.size()) fail(ErrorCode::dimension, "frame width does not match stats");
    for (std::size_t p = 0; p < f.values.size(); ++p) {
      if (f.values[p]) f.values[p] = stats.normalize(p, *f.values[p]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

struct WindowSpec {
  std::size_t window_len = 32;
  std::size_t horizon = 1;
  std::size_t stride = 1;

  void validate() const {
    if (window_len < 1 || horizon < 1 || stride < 1) {
      fail(ErrorCode::invalid_argument, "window length, horizon and stride must be >= 1");
    }
  }

  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

/// Sample i reads input rows [start, start+W) and targets row start+W+H-1,
/// where start = i*S before any window is dropped.
struct WindowedDataset {
  std::vector<Sequence> inputs;
  std::vector<Vector> targets;
  std::vector<Millis> timestamps;  // target row timestamp
  std::vector<std::size_t> start_rows;
  std::size_t window_len = 0;
  std::size_t horizon = 1;
  std::size_t stride = 1;
  std::size_t features = 0;
  std::size_t dropped_boundary = 0;
  std::size_t dropped_incomplete = 0;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }

  /// Same shape metadata, no samples.
  WindowedDataset empty_like() const {
    WindowedDataset d;
    d.window_len = window_len;
    d.horizon = horizon;
    d.stride = stride;
    d.features = features;
    return d;
  }

  void push(const WindowedDataset& src, std::size_t i) {
    inputs.push_back(src.inputs[i]);
    targets.push_back(src.targets[i]);
    timestamps.push_back(src.timestamps[i]);
    start_rows.push_back(src.start_rows[i]);
  }
};

/// floor((L - W - H)/S) + 1 when L >= W + H, else 0.
inline std::size_t window_count(std::size_t length, const WindowSpec& spec) {
  if (length < spec.window_len + spec.horizon) return 0;
  return (length - spec.window_len - spec.horizon) / spec.stride + 1;
}

/// True when the maintenance instant splits rows [first, last] of the window.
inline bool crosses_boundary(Millis first, Millis last, std::span<const Millis> boundaries) {
  return std::any_of(boundaries.begin(), boundaries.end(),
                     [&](Millis b) { return first < b && b <= last; });
}

/// Builds (window, target) samples from already-normalized frames. Windows
/// spanning a maintenance boundary, or touching an absent value, are dropped.
inline WindowedDataset make_windows(std::span<const SeriesFrame> frames, const WindowSpec& spec,
                                    std::span<const Millis> maintenance_boundaries = {}) {
  spec.validate();
  WindowedDataset ds;
  ds.window_len = spec.window_len;
  ds.horizon = spec.horizon;
  ds.stride = spec.stride;
  ds.features = frames.empty() ? 0 : frames.front().values.size();

  const std::size_t n = window_count(frames.size(), spec);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t start = i * spec.stride;
    const std::size_t target = start + spec.window_len + spec.horizon - 1;
    if (crosses_boundary(frames[start].timestamp, frames[target].timestamp, maintenance_boundaries)) {
      ++ds.dropped_boundary;
      continue;
    }
    bool complete = frames[target].complete();
    for (std::size_t r = start; complete && r < start + spec.window_len; ++r) {
      complete = frames[r].complete();
    }
    if (!complete) {
      ++ds.dropped_incomplete;
      continue;
    }
    Sequence window;
    window.reserve(spec.window_len);
    for (std::size_t r = start; r < start + spec.window_len; ++r) {
      Vector row(ds.features);
      for (std::size_t p = 0; p < ds.features; ++p) row[p] = *frames[r].values[p];
      window.push_back(std::move(row));
    }
    Vector y(ds.features);
    for (std::size_t p = 0; p < ds.features; ++p) y[p] = *frames[target].values[p];
    ds.inputs.push_back(std::move(window));
    ds.targets.push_back(std::move(y));
    ds.timestamps.push_back(frames[target].timestamp);
    ds.start_rows.push_back(start);
  }
  return ds;
}

/// First ceil(N*fraction) samples train, the rest validate; order kept.
inline std::pair<WindowedDataset, WindowedDataset> chrono_split(const WindowedDataset& ds,
                                                                double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    fail(ErrorCode::invalid_argument, "train fraction must lie in (0, 1]");
  }
  const double exact = static_cast<double>(ds.size()) * train_fraction;
  // 0.7 * 10 is 7.000000000000001 in binary64; snap near-integers first.
  const double snapped = std::abs(exact - std::round(exact)) < 1e-9 ? std::round(exact) : std::ceil(exact);
  const auto n_train = std::min(ds.size(), static_cast<std::size_t>(snapped));
  auto train = ds.empty_like();
  auto valid = ds.empty_like();
  for (std::size_t i = 0; i < ds.size(); ++i) (i < n_train ? train : valid).push(ds, i);
  return {std::move(train), std::move(valid)};
}

// ---------------------------------------------------------------------------
// Correlation

struct CorrelationMatrix {
  std::vector<std::string> labels;
  std::vector<Vector> values;
  std::vector<std::pair<std::size_t, std::size_t>> absent_pairs;  // fewer than 2 shared rows

  std::size_t size() const { return values.size(); }

  /// Header row of parameter tokens followed by one row per parameter.
  std::string to_csv() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < labels.size(); ++i) out << (i ? "," : "") << labels[i];
    out << '\n';
    for (const auto& row : values) {
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
      out << '\n';
    }
    return out.str();
  }
};

/// Pearson coefficients over pairwise-complete rows.
inline CorrelationMatrix pearson_matrix(std::span<const SeriesFrame> frames, const Schema& schema) {
  if (frames.size() < 2) fail(ErrorCode::invalid_argument, "correlation needs at least 2 frames");
  const std::size_t f = schema.feature_count();
  CorrelationMatrix m{schema.tokens(), std::vector<Vector>(f, Vector(f, 0.0)), {}};
  for (std::size_t a = 0; a < f; ++a) {
    m.values[a][a] = 1.0;
    for (std::size_t b = a + 1; b < f; ++b) {
      std::vector<std::pair<double, double>> rows;
      for (const auto& fr : frames) {
        if (fr.values.size() != f) fail(ErrorCode::dimension, "frame width does not match schema");
        if (fr.values[a] && fr.values[b]) rows.emplace_back(*fr.values[a], *fr.values[b]);
      }
      if (rows.size() < 2) {
        m.absent_pairs.emplace_back(a, b);
        continue;
      }
      double ma = 0.0, mb = 0.0;
      for (auto [x, y] : rows) {
        ma += x;
        mb += y;
      }
      ma /= static_cast<double>(rows.size());
      mb /= static_cast<double>(rows.size());
      double sab = 0.0, saa = 0.0, sbb = 0.0;
      for (auto [x, y] : rows) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
      }
      double r = (saa > 0.0 && sbb > 0.0) ? sab / std::sqrt(saa * sbb) : 0.0;
      r = std::clamp(r, -1.0, 1.0);
      m.values[a][b] = r;
      m.values[b][a] = r;
    }
  }
  return m;
}

}  // namespace pdm

#endif  // PDM_PREPROCESS_HPP
