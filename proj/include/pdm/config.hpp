#ifndef PDM_CONFIG_HPP
#define PDM_CONFIG_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pdm/error.hpp"
#include "pdm/envelope.hpp"
#include "pdm/forest.hpp"
#include "pdm/format.hpp"
#include "pdm/lstm.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/sim.hpp"

namespace pdm {

/// `key = value` lines; `#` starts a comment line; blank lines ignored.
/// A key may repeat (list-valued settings such as sim.drift).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
      ++line_no;
      const auto line = trim(raw);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ParseError(line_no, "empty key");
      cfg.entries_[std::string(key)].push_back({std::string(trim(line.substr(eq + 1))), line_no});
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::not_found, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, std::string value) { entries_[key] = {{std::move(value), 0}}; }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second.back().value;
  }

  std::vector<std::string> all(const std::string& key) const {
    std::vector<std::string> out;
    if (auto it = entries_.find(key); it != entries_.end()) {
      for (const auto& e : it->second) out.push_back(e.value);
    }
    return out;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto d = parse_double(*v);
    if (!d || !std::isfinite(*d)) bad(key, *v, "a finite number");
    return *d;
  }

  template <typename Int>
  Int get_int(const std::string& key, Int fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto i = parse_int<Int>(*v);
    if (!i) bad(key, *v, "an integer");
    return *i;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "0") return false;
    bad(key, *v, "true or false");
  }

  std::string get_string(const std::string& key, std::string fallback) const { return get(key).value_or(fallback); }

  std::size_t line_of(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.back().line;
  }

  [[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) const {
    std::string where = line_of(key) ? "line " + std::to_string(line_of(key)) + ": " : "";
    fail(ErrorCode::invalid_argument, where + key + " = '" + value + "' is not " + expected);
  }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::map<std::string, std::vector<Entry>> entries_;
};

struct ServerSettings {
  std::string listen = "127.0.0.1:8080";
  std::filesystem::path data_dir = "data";
  std::optional<std::filesystem::path> model_path;
  std::size_t threads = 8;
  Millis poll_interval_ms = 2000;

  std::pair<std::string, int> host_port() const {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) fail(ErrorCode::invalid_argument, "listen address needs host:port");
    auto port = parse_int<int>(std::string_view(listen).substr(colon + 1));
    if (!port || *port < 0 || *port > 65535) fail(ErrorCode::invalid_argument, "bad port in '" + listen + "'");
    return {listen.substr(0, colon), *port};
  }
};

/// Everything the CLI stages and the server read from one file.
struct PipelineConfig {
  SimConfig sim;
  Millis sim_duration = 2'000'000;

  std::optional<std::string> machine;  // default: first machine in the store
  WindowSpec window{32, 1, 1};
  double train_fraction = 0.8;
  NormalizationMode normalization = NormalizationMode::min_max;
  CleaningConfig cleaning;

  TrainConfig train;
  ForestConfig forest;
  std::size_t label_horizon = 30;  // look-ahead rows for the fault classifier

  double envelope_sigma_k = 3.0;
  std::size_t sustain_steps = 3;
  std::map<std::size_t, Bounds> envelope_overrides;  // feature index -> bounds

  std::size_t horizon_steps = 60;
  std::size_t warning_periods = 30;

  ServerSettings server;

  Schema schema() const { return sim.schema(); }
  Millis period() const { return sim.sample_period; }

  /// Nominal bands around the simulator baselines, then explicit overrides.
  OperatingEnvelope envelope() const {
    auto env = nominal_envelope(sim, envelope_sigma_k, sustain_steps);
    for (const auto& [j, b] : envelope_overrides) {
      if (j < env.bounds.size()) env.bounds[j] = b;
    }
    env.validate();
    return env;
  }
};

namespace detail {

inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline Vector number_list(const KeyValueConfig& kv, const std::string& key) {
  Vector out;
  const std::string text = *kv.get(key);
  for (auto part : split(text, ',')) {
    auto d = parse_double(trim(part));
    if (!d || !std::isfinite(*d)) kv.bad(key, text, "a comma-separated list of numbers");
    out.push_back(*d);
  }
  return out;
}

}  // namespace detail

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "sim.seed", "sim.sample_period_ms", "sim.zones", "sim.machine_id", "sim.duration_ms", "sim.baselines",
      "sim.noise", "sim.drift", "sim.modulation", "sim.failure", "sim.reset", "data.machine",
      "window.length", "window.horizon", "window.stride", "preprocess.train_fraction",
      "preprocess.normalization", "preprocess.outlier_z", "preprocess.max_gap", "train.epochs",
      "train.learning_rate", "train.optimizer", "train.beta1", "train.beta2", "train.epsilon",
      "train.clip_norm", "train.batch_size", "train.seed", "train.hidden_size", "forest.trees",
      "forest.max_depth", "forest.min_samples_leaf", "forest.features_per_split", "forest.bootstrap",
      "forest.seed", "forest.label_horizon", "envelope.sigma_k", "envelope.sustain_steps",
      "downtime.horizon_steps", "downtime.warning_periods", "server.listen", "server.data_dir",
      "server.model_path", "server.threads", "server.poll_interval_ms"};
  return keys;
}

inline PipelineConfig load_pipeline_config(const KeyValueConfig& kv) {
  PipelineConfig c;
  SimConfig& s = c.sim;
  s.rng_seed = kv.get_int<std::uint64_t>("sim.seed", s.rng_seed);
  s.sample_period = kv.get_int<Millis>("sim.sample_period_ms", s.sample_period);
  s.zones = kv.get_int<std::uint32_t>("sim.zones", s.zones);
  s.machine_id = kv.get_string("sim.machine_id", s.machine_id);
  c.sim_duration = kv.get_int<Millis>("sim.duration_ms", c.sim_duration);
  const Schema schema = c.schema();
  if (kv.has("sim.baselines")) s.baselines = detail::number_list(kv, "sim.baselines");
  if (kv.has("sim.noise")) s.noise = detail::number_list(kv, "sim.noise");
  for (const char* key : {"sim.baselines", "sim.noise"}) {
    const auto& list = std::string(key) == "sim.baselines" ? s.baselines : s.noise;
    if (kv.has(key) && list.size() != schema.feature_count()) {
      kv.bad(key, *kv.get(key), "a list of " + std::to_string(schema.feature_count()) + " numbers");
    }
  }

  auto param = [&](const std::string& key, const std::string& token) {
    auto p = parse_parameter(token);
    if (!p || !schema.contains(*p)) kv.bad(key, token, "a parameter of this schema");
    return *p;
  };
  auto num = [&](const std::string& key, const std::string& text) {
    auto d = parse_double(text);
    if (!d || !std::isfinite(*d)) kv.bad(key, text, "a finite number");
    return *d;
  };
  auto ms = [&](const std::string& key, const std::string& text) {
    auto v = parse_int<Millis>(text);
    if (!v) kv.bad(key, text, "an integer number of milliseconds");
    return *v;
  };

  for (const auto& v : kv.all("sim.drift")) {
    // <parameter> <linear|exponential> <rate_per_ms> <start_ms> [tau_ms]
    auto w = detail::words(v);
    if (w.size() < 4 || w.size() > 5 || (w[1] != "linear" && w[1] != "exponential")) {
      kv.bad("sim.drift", v, "'<parameter> <linear|exponential> <rate> <start_ms> [tau_ms]'");
    }
    Degradation d{param("sim.drift", w[0]), w[1] == "linear" ? DriftMode::linear : DriftMode::exponential,
                  num("sim.drift", w[2]), ms("sim.drift", w[3])};
    if (w.size() == 5) d.tau_ms = num("sim.drift", w[4]);
    s.degradations.push_back(d);
  }
  for (const auto& v : kv.all("sim.modulation")) {
    // <parameter> <amplitude> <period_ms> [phase_rad]
    auto w = detail::words(v);
    if (w.size() < 3 || w.size() > 4) kv.bad("sim.modulation", v, "'<parameter> <amplitude> <period_ms> [phase]'");
    Modulation m{param("sim.modulation", w[0]), num("sim.modulation", w[1]), ms("sim.modulation", w[2])};
    if (w.size() == 4) m.phase = num("sim.modulation", w[3]);
    s.modulations.push_back(m);
  }
  if (auto v = kv.get("sim.failure")) {
    auto w = detail::words(*v);
    if (w.size() != 3) kv.bad("sim.failure", *v, "'<parameter> <time_ms> <magnitude>'");
    s.injected_failure = InjectedFailure{param("sim.failure", w[0]), ms("sim.failure", w[1]), num("sim.failure", w[2])};
  }
  for (const auto& v : kv.all("sim.reset")) {
    for (auto part : split(v, ',')) s.maintenance_resets.push_back(ms("sim.reset", std::string(trim(part))));
  }

  if (kv.has("data.machine")) c.machine = kv.get_string("data.machine", "");
  c.window.window_len = kv.get_int<std::size_t>("window.length", c.window.window_len);
  c.window.horizon = kv.get_int<std::size_t>("window.horizon", c.window.horizon);
  c.window.stride = kv.get_int<std::size_t>("window.stride", c.window.stride);
  c.train_fraction = kv.get_double("preprocess.train_fraction", c.train_fraction);
  if (auto v = kv.get("preprocess.normalization")) {
    if (*v == "min_max") c.normalization = NormalizationMode::min_max;
    else if (*v == "z_score") c.normalization = NormalizationMode::z_score;
    else kv.bad("preprocess.normalization", *v, "min_max or z_score");
  }
  c.cleaning.outlier_z = kv.get_double("preprocess.outlier_z", c.cleaning.outlier_z);
  c.cleaning.max_gap = kv.get_int<std::size_t>("preprocess.max_gap", c.cleaning.max_gap);

  TrainConfig& t = c.train;
  t.epochs = kv.get_int<std::size_t>("train.epochs", t.epochs);
  t.learning_rate = kv.get_double("train.learning_rate", t.learning_rate);
  if (auto v = kv.get("train.optimizer")) {
    if (*v == "adam") t.optimizer = OptimizerKind::adam;
    else if (*v == "sgd") t.optimizer = OptimizerKind::sgd;
    else kv.bad("train.optimizer", *v, "adam or sgd");
  }
  t.adam_beta1 = kv.get_double("train.beta1", t.adam_beta1);
  t.adam_beta2 = kv.get_double("train.beta2", t.adam_beta2);
  t.adam_epsilon = kv.get_double("train.epsilon", t.adam_epsilon);
  if (auto v = kv.get("train.clip_norm"); v && *v != "none") t.gradient_clip_norm = kv.get_double("train.clip_norm", 0.0);
  t.batch_size = kv.get_int<std::size_t>("train.batch_size", t.batch_size);
  t.rng_seed = kv.get_int<std::uint64_t>("train.seed", t.rng_seed);
  t.hidden_size = kv.get_int<std::size_t>("train.hidden_size", t.hidden_size);

  ForestConfig& f = c.forest;
  f.n_trees = kv.get_int<std::size_t>("forest.trees", 20);
  f.max_depth = kv.get_int<std::size_t>("forest.max_depth", f.max_depth);
  f.min_samples_leaf = kv.get_int<std::size_t>("forest.min_samples_leaf", f.min_samples_leaf);
  if (auto v = kv.get("forest.features_per_split"); v && *v != "all" && *v != "sqrt") {
    f.features_per_split = kv.get_int<std::size_t>("forest.features_per_split", 1);
  } else if (!v || *v == "sqrt") {
    const auto flat = c.window.window_len * schema.feature_count();
    f.features_per_split = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(flat))));
  }
  f.bootstrap = kv.get_bool("forest.bootstrap", f.bootstrap);
  f.rng_seed = kv.get_int<std::uint64_t>("forest.seed", f.rng_seed);
  c.label_horizon = kv.get_int<std::size_t>("forest.label_horizon", c.label_horizon);

  c.envelope_sigma_k = kv.get_double("envelope.sigma_k", c.envelope_sigma_k);
  c.sustain_steps = kv.get_int<std::size_t>("envelope.sustain_steps", c.sustain_steps);
  for (const auto& key : kv.keys()) {
    if (!key.starts_with("envelope.") || known_config_keys().count(key)) continue;
    const auto token = key.substr(std::string("envelope.").size());
    const auto v = *kv.get(key);
    auto nums = split(v, ',');
    if (nums.size() != 2) kv.bad(key, v, "'<lower>, <upper>'");
    c.envelope_overrides[schema.index(param(key, token))] =
        Bounds{num(key, std::string(trim(nums[0]))), num(key, std::string(trim(nums[1])))};
  }

  c.horizon_steps = kv.get_int<std::size_t>("downtime.horizon_steps", c.horizon_steps);
  c.warning_periods = kv.get_int<std::size_t>("downtime.warning_periods", c.warning_periods);

  ServerSettings& srv = c.server;
  srv.listen = kv.get_string("server.listen", srv.listen);
  srv.data_dir = kv.get_string("server.data_dir", srv.data_dir.string());
  if (auto v = kv.get("server.model_path")) srv.model_path = *v;
  srv.threads = kv.get_int<std::size_t>("server.threads", srv.threads);
  srv.poll_interval_ms = kv.get_int<Millis>("server.poll_interval_ms", srv.poll_interval_ms);

  for (const auto& key : kv.keys()) {
    if (!known_config_keys().count(key) && !key.starts_with("envelope.")) {
      fail(ErrorCode::invalid_argument, "line " + std::to_string(kv.line_of(key)) + ": unknown key '" + key + "'");
    }
  }
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) {
    fail(ErrorCode::invalid_argument, "preprocess.train_fraction must lie in (0, 1]");
  }
  if (c.horizon_steps < 1) fail(ErrorCode::invalid_argument, "downtime.horizon_steps must be >= 1");
  c.sim = c.sim.resolved();
  c.window.validate();
  c.train.validate();
  c.envelope();
  return c;
}

/// PDM_LISTEN_ADDR, PDM_DATA_DIR and PDM_MODEL_PATH win over the file.
inline void apply_env_overrides(ServerSettings& s) {
  if (const char* v = std::getenv("PDM_LISTEN_ADDR"); v && *v) s.listen = v;
  if (const char* v = std::getenv("PDM_DATA_DIR"); v && *v) s.data_dir = v;
  if (const char* v = std::getenv("PDM_MODEL_PATH"); v && *v) s.model_path = v;
}

}  // namespace pdm

#endif  // PDM_CONFIG_HPP
