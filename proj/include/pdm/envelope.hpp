#ifndef PDM_ENVELOPE_HPP
#define PDM_ENVELOPE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdm/error.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/telemetry.hpp"

namespace pdm {

struct Bounds {
  double lower = 0.0;
  double upper = 0.0;

  bool outside(double v) const { return v < lower || v > upper; }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

/// Safe operating region per parameter in raw units. A value strictly below
/// `lower` or strictly above `upper` is out of bounds; `sustain_steps`
/// consecutive out-of-bounds grid steps make a violation.
struct OperatingEnvelope {
  std::vector<Bounds> bounds;  // canonical parameter order
  std::size_t sustain_steps = 3;

  void validate() const {
    if (sustain_steps < 1) fail(ErrorCode::invalid_argument, "sustain_steps must be >= 1");
    for (std::size_t j = 0; j < bounds.size(); ++j) {
      const auto& b = bounds[j];
      if (!std::isfinite(b.lower) || !std::isfinite(b.upper) || !(b.lower < b.upper)) {
        fail(ErrorCode::invalid_argument, "envelope bound " + std::to_string(j) + " needs lower < upper");
      }
    }
  }

  friend bool operator==(const OperatingEnvelope&, const OperatingEnvelope&) = default;
};

struct Violation {
  std::size_t parameter = 0;  // feature index
  Millis onset = 0;           // first timestamp of the trailing run
  std::size_t steps = 0;      // length of the trailing run
  double latest_value = 0.0;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Active violations: parameters whose trailing run of out-of-bounds values,
/// ending at the last frame, is at least sustain_steps long. An absent value
/// ends a run.
inline std::vector<Violation> evaluate_envelope(std::span<const SeriesFrame> frames,
                                                const OperatingEnvelope& envelope) {
  envelope.validate();
  std::vector<Violation> out;
  if (frames.empty()) return out;
  const std::size_t f = std::min(envelope.bounds.size(), frames.back().values.size());
  for (std::size_t j = 0; j < f; ++j) {
    std::size_t run = 0;
    for (std::size_t k = frames.size(); k-- > 0;) {
      const auto& v = frames[k].values[j];
      if (!v || !envelope.bounds[j].outside(*v)) break;
      ++run;
    }
    if (run >= envelope.sustain_steps) {
      out.push_back({j, frames[frames.size() - run].timestamp, run, *frames.back().values[j]});
    }
  }
  return out;
}

struct SustainedExit {
  std::size_t onset_step = 0;  // first row of the earliest qualifying run
  /// (feature index, first row of that feature's first qualifying run),
  /// ordered by row then feature.
  std::vector<std::pair<std::size_t, std::size_t>> contributing;
};

/// Scans rows (one vector per grid step) for the first run of at least
/// sustain_steps consecutive out-of-bounds values in any single parameter.
inline std::optional<SustainedExit> first_sustained_exit(std::span<const Vector> rows,
                                                         const OperatingEnvelope& envelope) {
  envelope.validate();
  const std::size_t d = envelope.sustain_steps;
  std::vector<std::pair<std::size_t, std::size_t>> hits;
  for (std::size_t j = 0; j < envelope.bounds.size(); ++j) {
    std::size_t run = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].size() != envelope.bounds.size()) fail(ErrorCode::dimension, "row width does not match envelope");
      run = envelope.bounds[j].outside(rows[k][j]) ? run + 1 : 0;
      if (run == d) {
        hits.emplace_back(j, k + 1 - d);
        break;
      }
    }
  }
  if (hits.empty()) return std::nullopt;
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  return SustainedExit{hits.front().second, std::move(hits)};
}

}  // namespace pdm

#endif  // PDM_ENVELOPE_HPP
