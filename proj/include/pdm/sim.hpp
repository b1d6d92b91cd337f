#ifndef PDM_SIM_HPP
#define PDM_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pdm/envelope.hpp"
#include "pdm/error.hpp"
#include "pdm/random.hpp"
#include "pdm/telemetry.hpp"

namespace pdm {

enum class DriftMode { linear, exponential };

/// Drift added to one parameter from `start` on. Linear: rate*(t - start).
/// Exponential: rate*(exp((t - start)/tau) - 1). Rates are per millisecond.
struct Degradation {
  ParameterId parameter;
  DriftMode mode = DriftMode::linear;
  double rate = 0.0;
  Millis start = 0;
  double tau_ms = 60'000.0;
};

/// amplitude*sin(2*pi*t/period + phase), for cyclic load.
struct Modulation {
  ParameterId parameter;
  double amplitude = 0.0;
  Millis period = 60'000;
  double phase = 0.0;
};

/// Step change of `magnitude` from `time` until the next maintenance reset.
struct InjectedFailure {
  ParameterId parameter;
  Millis time = 0;
  double magnitude = 0.0;
};

struct SimConfig {
  std::uint64_t rng_seed = 42;
  Millis sample_period = 1000;
  std::uint32_t zones = 4;
  std::string machine_id = "MNL15";
  Vector baselines;  // empty = defaults for `zones`
  Vector noise;      // Gaussian sigma per parameter; empty = defaults
  std::vector<Degradation> degradations;
  std::vector<Modulation> modulations;
  std::optional<InjectedFailure> injected_failure;
  std::vector<Millis> maintenance_resets;

  Schema schema() const { return Schema(zones); }

  static Vector default_baselines(std::uint32_t zones) {
    Vector b{2.0, 150.0, 100.0, 50.0};
    b.resize(kBaseParameterCount + zones, 200.0);
    return b;
  }

  static Vector default_noise(std::uint32_t zones) {
    Vector s{0.05, 0.5, 0.3, 0.3};
    s.resize(kBaseParameterCount + zones, 0.5);
    return s;
  }

  /// Fills empty baseline/noise vectors and checks every invariant.
  SimConfig resolved() const {
    SimConfig c = *this;
    if (c.baselines.empty()) c.baselines = default_baselines(zones);
    if (c.noise.empty()) c.noise = default_noise(zones);
    c.validate();
    return c;
  }

  void validate() const {
    const auto s = schema();
    if (sample_period <= 0) fail(ErrorCode::invalid_argument, "sample_period must be > 0");
    if (!valid_machine_id(machine_id)) fail(ErrorCode::invalid_argument, "bad machine id '" + machine_id + "'");
    if (baselines.size() != s.feature_count() || noise.size() != s.feature_count()) {
      fail(ErrorCode::dimension, "baselines and noise need one entry per parameter");
    }
    for (std::size_t j = 0; j < baselines.size(); ++j) {
      if (!std::isfinite(baselines[j])) fail(ErrorCode::invalid_argument, "baseline must be finite");
      if (!std::isfinite(noise[j]) || noise[j] < 0.0) fail(ErrorCode::invalid_argument, "noise sigma must be >= 0");
    }
    for (const auto& d : degradations) {
      s.index(d.parameter);
      if (!std::isfinite(d.rate)) fail(ErrorCode::invalid_argument, "drift rate must be finite");
      if (d.mode == DriftMode::exponential && !(d.tau_ms > 0.0)) {
        fail(ErrorCode::invalid_argument, "exponential drift needs tau_ms > 0");
      }
    }
    for (const auto& m : modulations) {
      s.index(m.parameter);
      if (m.period <= 0 || !std::isfinite(m.amplitude)) fail(ErrorCode::invalid_argument, "bad modulation");
    }
    if (injected_failure) s.index(injected_failure->parameter);
  }
};

struct SimRun {
  std::vector<SensorReading> readings;  // time-major, canonical parameter order
  std::vector<SeriesFrame> frames;      // the same data as grid frames
  std::optional<Millis> ground_truth_down_at;
};

namespace detail {

/// Latest maintenance reset at or before t (or minimum when none).
inline Millis last_reset(const SimConfig& cfg, Millis t) {
  Millis r = std::numeric_limits<Millis>::min();
  for (Millis m : cfg.maintenance_resets) {
    if (m <= t) r = std::max(r, m);
  }
  return r;
}

}  // namespace detail

/// Trajectory of parameter `j` at time t without noise. `cfg` must be resolved.
inline double noise_free_value(const SimConfig& cfg, std::size_t j, Millis t) {
  const auto schema = cfg.schema();
  const Millis reset = detail::last_reset(cfg, t);
  double drift = 0.0;
  for (const auto& d : cfg.degradations) {
    if (schema.index(d.parameter) != j) continue;
    const Millis from = std::max(d.start, reset);
    if (t <= from) continue;
    const double dt = static_cast<double>(t - from);
    drift += d.mode == DriftMode::linear ? d.rate * dt : d.rate * std::expm1(dt / d.tau_ms);
  }
  double cyclic = 0.0;
  for (const auto& m : cfg.modulations) {
    if (schema.index(m.parameter) != j) continue;
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % m.period) / static_cast<double>(m.period);
    cyclic += m.amplitude * std::sin(phase + m.phase);
  }
  double step = 0.0;
  if (const auto& f = cfg.injected_failure; f && schema.index(f->parameter) == j && t >= f->time && reset <= f->time) {
    step = f->magnitude;
  }
  return cfg.baselines[j] + drift + cyclic + step;
}

inline std::size_t grid_steps(Millis duration, Millis period) {
  if (duration <= 0) return 0;
  return static_cast<std::size_t>((duration + period - 1) / period);
}

/// First grid timestamp in [0, until) that starts a run of sustain_steps
/// consecutive out-of-bounds noise-free values (the run must fit before
/// `until`). Exhaustive scan.
inline std::optional<Millis> ground_truth_down_at(const SimConfig& config, const OperatingEnvelope& envelope,
                                                  Millis until) {
  const SimConfig cfg = config.resolved();
  const std::size_t f = cfg.schema().feature_count();
  if (envelope.bounds.size() != f) fail(ErrorCode::dimension, "envelope does not match simulator schema");
  std::vector<Vector> rows;
  for (std::size_t k = 0; k < grid_steps(until, cfg.sample_period); ++k) {
    const Millis t = static_cast<Millis>(k) * cfg.sample_period;
    Vector row(f);
    for (std::size_t j = 0; j < f; ++j) row[j] = noise_free_value(cfg, j, t);
    rows.push_back(std::move(row));
  }
  auto exit = first_sustained_exit(rows, envelope);
  if (!exit) return std::nullopt;
  return static_cast<Millis>(exit->onset_step) * cfg.sample_period;
}

/// Closed form of ground_truth_down_at for configs whose only dynamics are
/// linear drifts (at most one per parameter) and whose baselines lie inside
/// the envelope. Unbounded in time.
inline std::optional<Millis> closed_form_down_at(const SimConfig& config, const OperatingEnvelope& envelope) {
  const SimConfig cfg = config.resolved();
  envelope.validate();
  const auto schema = cfg.schema();
  const std::size_t f = schema.feature_count();
  if (envelope.bounds.size() != f) fail(ErrorCode::dimension, "envelope does not match simulator schema");
  if (!cfg.modulations.empty() || cfg.injected_failure) {
    fail(ErrorCode::invalid_argument, "closed form covers linear drift only");
  }
  const Millis period = cfg.sample_period;
  const auto d_steps = static_cast<Millis>(envelope.sustain_steps);

  std::vector<Millis> segment_starts{0};
  for (Millis r : cfg.maintenance_resets) {
    if (r > 0) segment_starts.push_back(r);
  }
  std::sort(segment_starts.begin(), segment_starts.end());
  segment_starts.erase(std::unique(segment_starts.begin(), segment_starts.end()), segment_starts.end());

  std::optional<Millis> best;
  std::vector<bool> seen(f, false);
  for (const auto& d : cfg.degradations) {
    if (d.mode != DriftMode::linear) fail(ErrorCode::invalid_argument, "closed form covers linear drift only");
    const std::size_t j = schema.index(d.parameter);
    if (seen[j]) fail(ErrorCode::invalid_argument, "closed form allows one drift per parameter");
    seen[j] = true;
  }
  for (std::size_t j = 0; j < f; ++j) {
    if (envelope.bounds[j].outside(cfg.baselines[j])) {
      fail(ErrorCode::invalid_argument, "closed form needs baselines inside the envelope");
    }
  }

  auto out_at = [&](std::size_t j, Millis t) { return envelope.bounds[j].outside(noise_free_value(cfg, j, t)); };
  for (const auto& d : cfg.degradations) {
    if (d.rate == 0.0) continue;
    const std::size_t j = schema.index(d.parameter);
    const double bound = d.rate > 0.0 ? envelope.bounds[j].upper : envelope.bounds[j].lower;
    for (std::size_t s = 0; s < segment_starts.size(); ++s) {
      const Millis seg_begin = segment_starts[s];
      const Millis seg_end =
          s + 1 < segment_starts.size() ? segment_starts[s + 1] : std::numeric_limits<Millis>::max();
      const Millis from = std::max(d.start, seg_begin);
      // Crossing instant t* = from + (bound - baseline)/rate; first grid point strictly past it.
      const double crossing = static_cast<double>(from) + (bound - cfg.baselines[j]) / d.rate;
      if (crossing > 9.0e15) break;
      Millis k = static_cast<Millis>(std::floor(crossing / static_cast<double>(period))) + 1;
      k = std::max(k, (from + period - 1) / period);
      // Snap against exact evaluation to absorb rounding in the division.
      while ((k - 1) * period > from && out_at(j, (k - 1) * period)) --k;
      while (!out_at(j, k * period) && k * period < seg_end) ++k;
      const Millis exit = k * period;
      if (exit >= seg_end) continue;
      if (seg_end - exit <= (d_steps - 1) * period) continue;
      if (!best || exit < *best) best = exit;
      break;
    }
  }
  return best;
}

/// Simulated stream over the grid [0, duration). One Gaussian draw per
/// (step, parameter) in time-major canonical order, even when sigma is 0.
inline SimRun generate(const SimConfig& config, Millis duration) {
  const SimConfig cfg = config.resolved();
  const auto schema = cfg.schema();
  const std::size_t f = schema.feature_count();
  Pcg32 rng(cfg.rng_seed);
  SimRun run;
  const std::size_t steps = grid_steps(duration, cfg.sample_period);
  run.readings.reserve(steps * f);
  run.frames.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const Millis t = static_cast<Millis>(k) * cfg.sample_period;
    SeriesFrame frame{t, std::vector<std::optional<double>>(f)};
    for (std::size_t j = 0; j < f; ++j) {
      const double z = rng.normal();
      const double v = noise_free_value(cfg, j, t) + cfg.noise[j] * z;
      frame.values[j] = v;
      run.readings.push_back({cfg.machine_id, t, schema.at(j), v});
    }
    run.frames.push_back(std::move(frame));
  }
  return run;
}

inline SimRun generate(const SimConfig& config, Millis duration, const OperatingEnvelope& envelope) {
  SimRun run = generate(config, duration);
  run.ground_truth_down_at = ground_truth_down_at(config, envelope, duration);
  return run;
}

/// Baseline +/- k*sigma per parameter; a zero sigma falls back to 1% of the
/// baseline magnitude (at least 1 unit) so bounds stay ordered.
inline OperatingEnvelope nominal_envelope(const SimConfig& config, double k = 3.0, std::size_t sustain_steps = 3) {
  const SimConfig cfg = config.resolved();
  OperatingEnvelope env;
  env.sustain_steps = sustain_steps;
  for (std::size_t j = 0; j < cfg.baselines.size(); ++j) {
    double half = k * cfg.noise[j];
    if (!(half > 0.0)) half = std::max(1.0, 0.01 * std::abs(cfg.baselines[j]));
    env.bounds.push_back({cfg.baselines[j] - half, cfg.baselines[j] + half});
  }
  return env;
}

}  // namespace pdm

#endif  // PDM_SIM_HPP
