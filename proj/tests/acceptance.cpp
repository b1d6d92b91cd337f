// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "api_flow.hpp"
#include "pdm/pipeline.hpp"
#include "pdm/service.hpp"
#include "test_util.hpp"

namespace pdm {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

PipelineConfig config_from(const std::string& text) { return load_pipeline_config(KeyValueConfig::parse(text)); }

void ingest(TelemetryStore& store, const SimRun& run) {
  for (const auto& r : run.readings) store.append(r);
}

// --- LSTM gradients -----------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  Pcg32 rng(20240601);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    LstmParams p = LstmParams::zeros(3, 4, 3);
    p.for_each_tensor([&](Tensor& t) {
      for (double& v : t.values) v = rng.uniform(-0.5, 0.5);
    });
    std::vector<Sequence> windows;
    std::vector<Vector> targets;
    const std::size_t batch = 1 + rng.below(3);
    for (std::size_t b = 0; b < batch; ++b) {
      Sequence s(5, Vector(3));
      for (auto& x : s) {
        for (double& v : x) v = rng.uniform(-1, 1);
      }
      windows.push_back(std::move(s));
      targets.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    worst = std::max(worst, grad_check(p, windows, targets, 1e-5));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 5.0, "25 models, max relative error " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// --- LSTM training on the modulated drift dataset ----------------------------

const char* kModulatedConfig = R"(
sim.seed = 7
sim.zones = 1
sim.duration_ms = 2000000
sim.noise = 0, 0.3, 0.3, 0.2, 0.3
sim.drift = extruder_pressure linear 0.00001 0
sim.modulation = extruder_pressure 4 90000
sim.modulation = machine_speed 6 60000
sim.modulation = actual_values_input 3 45000 1
sim.modulation = heating_zone_1 5 120000 2
window.length = 10
train.epochs = 200
train.hidden_size = 8
train.learning_rate = 0.005
train.batch_size = 32
forest.trees = 10
)";

struct TrainedModulated {
  TrainReport report;
  std::string csv;
  Evaluation evaluation;
};

const TrainedModulated& trained_modulated() {
  static const TrainedModulated result = [] {
    test::TempDir dir;
    const auto cfg = config_from(kModulatedConfig);
    const auto run = generate(cfg.sim, cfg.sim_duration);
    write_sim_log(run, cfg.schema(), dir.path() / kTelemetryFile);
    TelemetryStore store(cfg.schema());
    store.load_log(dir.path() / kTelemetryFile);
    auto artifacts = train_models(store, {}, cfg);
    save_artifacts(artifacts, dir / "model.pdml");
    write_text_file(dir / "report.csv", report_csv(artifacts.report));
    TrainedModulated out;
    out.report = artifacts.report;
    out.csv = read_text_file(dir / "report.csv");
    out.evaluation = evaluate_models(load_artifacts(dir / "model.pdml"), store, {});
    return out;
  }();
  return result;
}

Outcome convergence() {
  const auto& t = trained_modulated();
  std::istringstream in(t.csv);
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_mse,validation_mse") return {false, "unexpected report header '" + line + "'"};
  long previous = 0;
  std::vector<double> train_mse;
  while (std::getline(in, line)) {
    const auto fields = split(line, ',');
    if (fields.size() != 3) return {false, "malformed report row '" + line + "'"};
    const long epoch = std::stol(std::string(fields[0]));
    const double tr = std::stod(std::string(fields[1]));
    const double va = std::stod(std::string(fields[2]));
    if (epoch != previous + 1) return {false, "epoch indices are not consecutive at " + std::to_string(epoch)};
    if (!std::isfinite(tr) || !std::isfinite(va)) return {false, "non-finite loss at epoch " + std::to_string(epoch)};
    previous = epoch;
    train_mse.push_back(tr);
  }
  if (train_mse.size() != 200) return {false, std::to_string(train_mse.size()) + " epochs reported"};
  const double ratio = train_mse.back() / train_mse.front();
  return {ratio < 0.1, "epoch 1 " + fmt(train_mse.front()) + ", epoch 200 " + fmt(train_mse.back()) + ", ratio " +
                           fmt(ratio)};
}

Outcome beats_persistence() {
  const auto& e = trained_modulated().evaluation;
  const bool matches_report = e.lstm_mse == trained_modulated().report.validation_mse.back();
  return {e.validation_samples > 0 && matches_report && e.lstm_mse <= e.persistence_mse,
          std::to_string(e.validation_samples) + " validation windows, lstm " + fmt(e.lstm_mse) + " vs persistence " +
              fmt(e.persistence_mse)};
}

// --- forest split search -----------------------------------------------------

double impurity(const std::vector<double>& ys, ForestTask task) {
  const double n = static_cast<double>(ys.size());
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= n;
  if (task == ForestTask::classification) return 1.0 - mean * mean - (1.0 - mean) * (1.0 - mean);
  double ss = 0.0;
  for (double y : ys) ss += (y - mean) * (y - mean);
  return ss / n;
}

std::optional<SplitCandidate> brute_force_split(const std::vector<Vector>& xs, const std::vector<double>& ys,
                                                std::size_t features, ForestTask task) {
  const double parent = impurity(ys, task);
  std::optional<SplitCandidate> best;
  for (std::size_t f = 0; f < features; ++f) {
    std::set<double> distinct;
    for (const auto& x : xs) distinct.insert(x[f]);
    const std::vector<double> values(distinct.begin(), distinct.end());
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
      const double threshold = 0.5 * (values[k] + values[k + 1]);
      std::vector<double> left, right;
      for (std::size_t i = 0; i < xs.size(); ++i) (xs[i][f] <= threshold ? left : right).push_back(ys[i]);
      const double n = static_cast<double>(ys.size());
      const double score = parent - static_cast<double>(left.size()) / n * impurity(left, task) -
                           static_cast<double>(right.size()) / n * impurity(right, task);
      const double tol = 1e-12 * parent;
      if (!(score > tol)) continue;
      if (best && !(score > best->score + tol)) continue;
      best = SplitCandidate{f, threshold, score};
    }
  }
  return best;
}

Outcome forest_oracle() {
  Pcg32 rng(424242);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto task = trial % 2 == 0 ? ForestTask::regression : ForestTask::classification;
    const std::size_t n = 2 + rng.below(24);
    const std::size_t f = 1 + rng.below(3);
    const bool coarse = rng.below(2) == 0;
    std::vector<Vector> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < n; ++i) {
      Vector x(f);
      for (double& v : x) v = coarse ? static_cast<double>(rng.below(5)) : rng.uniform(-3, 3);
      xs.push_back(std::move(x));
      ys.push_back(task == ForestTask::classification ? static_cast<double>(rng.below(2)) : rng.normal() * 5.0);
    }
    std::vector<std::size_t> features(f);
    for (std::size_t j = 0; j < f; ++j) features[j] = j;
    const auto got = find_best_split(xs, ys, features, task);
    const auto want = brute_force_split(xs, ys, f, task);
    const bool same = got.has_value() == want.has_value() &&
                      (!want || (got->feature == want->feature && got->threshold == want->threshold &&
                                 std::abs(got->score - want->score) <= 1e-9 * std::max(1.0, want->score)));
    if (!same) ++mismatches;
  }
  return {mismatches == 0, "100 datasets, " + std::to_string(mismatches) + " mismatches"};
}

// --- downtime prediction -----------------------------------------------------

const char* kSawtoothConfig = R"(
sim.seed = 11
sim.zones = 1
sim.duration_ms = 3000000
sim.noise = 0, 0.1, 0, 0, 0
sim.drift = extruder_pressure linear 0.0001 0
sim.reset = 300000, 600000, 900000, 1200000, 1500000, 1800000, 2100000, 2400000, 2700000
window.length = 16
preprocess.train_fraction = 0.9
train.epochs = 150
train.hidden_size = 8
train.learning_rate = 0.005
train.batch_size = 32
forest.trees = 5
)";

Outcome downtime_prediction() {
  const auto t0 = Clock::now();
  const auto cfg = config_from(kSawtoothConfig);
  TelemetryStore store(cfg.schema());
  ingest(store, generate(cfg.sim, cfg.sim_duration));
  const auto artifacts = train_models(store, cfg.sim.maintenance_resets, cfg);
  const LoadedModel loaded{artifacts.report.params, artifacts.meta, artifacts.regressors, artifacts.classifier};
  const auto model = loaded.forecast_model();
  const Millis period = cfg.period();
  const Millis lead = 40 * period;

  int hits = 0;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    SimConfig sim = cfg.sim;
    sim.rng_seed = 100 + static_cast<std::uint64_t>(i);
    sim.maintenance_resets.clear();
    sim.degradations.front().start = 20000 + 7000 * i;
    auto envelope = nominal_envelope(sim, 3.0, 3);
    envelope.bounds[1] = {140.0, 160.0};
    const Millis t_f = *closed_form_down_at(sim, envelope);
    const Millis now = t_f - lead;
    const auto run = generate(sim, now + period);
    const auto fc = forecast_downtime(sim.machine_id, run.frames, model, envelope, 80, sim.schema());
    if (!fc.predicted_down_at) continue;
    const double error = std::abs(static_cast<double>(*fc.predicted_down_at - t_f));
    worst = std::max(worst, error / static_cast<double>(t_f - now));
    if (*fc.lead_time >= 10 * period && error <= 0.15 * static_cast<double>(t_f - now)) ++hits;
  }
  const double secs = seconds_since(t0);
  return {hits >= 8 && secs < 60.0, std::to_string(hits) + "/10 runs within tolerance, worst relative error " +
                                        fmt(worst) + ", " + fmt(secs) + " s"};
}

// --- data layer --------------------------------------------------------------

Outcome data_layer() {
  std::vector<std::string> failures;
  test::TempDir dir;

  {
    const Schema schema(4);
    TelemetryStore store(schema);
    Pcg32 rng(31337);
    for (int i = 0; i < 10000; ++i) {
      auto r = test::random_reading(rng, schema, 3, 5000);
      r.value = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.below(200)) - 100);
      store.append(r);
    }
    store.save_log(dir / "a.log");
    TelemetryStore loaded(schema);
    loaded.load_log(dir / "a.log");
    bool exact = loaded.size() == store.size();
    for (const auto& m : store.machines()) {
      for (auto p : schema.parameters()) {
        const auto a = store.query_range(m, p, 0, 1 << 20);
        const auto b = loaded.query_range(m, p, 0, 1 << 20);
        exact = exact && a.size() == b.size();
        for (std::size_t i = 0; exact && i < a.size(); ++i) {
          exact = a[i].timestamp == b[i].timestamp &&
                  std::bit_cast<std::uint64_t>(a[i].value) == std::bit_cast<std::uint64_t>(b[i].value);
        }
      }
    }
    loaded.save_log(dir / "b.log");
    if (!exact || test::slurp(dir / "a.log") != test::slurp(dir / "b.log")) failures.push_back("log roundtrip");
  }

  const auto cfg = config_from(kModulatedConfig);
  const auto run = generate(cfg.sim, 300000);
  {
    const auto m = pearson_matrix(run.frames, cfg.schema());
    bool ok = true;
    for (std::size_t a = 0; a < m.values.size(); ++a) {
      ok = ok && m.values[a][a] == 1.0;
      for (std::size_t b = 0; b < m.values.size(); ++b) ok = ok && m.values[a][b] == m.values[b][a];
    }
    if (!ok) failures.push_back("correlation symmetry");
  }
  {
    double worst = 0.0;
    for (auto mode : {NormalizationMode::min_max, NormalizationMode::z_score}) {
      const auto stats = fit_normalizer(run.frames, mode);
      for (const auto& frame : run.frames) {
        Vector raw;
        for (const auto& v : frame.values) raw.push_back(*v);
        const auto back = stats.denormalize(stats.normalize(raw));
        for (std::size_t j = 0; j < raw.size(); ++j) worst = std::max(worst, std::abs(back[j] - raw[j]));
      }
    }
    if (!(worst <= 1e-12)) failures.push_back("normalization roundtrip " + fmt(worst));
  }
  {
    Pcg32 rng(77);
    int bad = 0;
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t length = rng.below(80);
      const WindowSpec spec{1 + rng.below(12), 1 + rng.below(5), 1 + rng.below(6)};
      std::size_t expected = 0;
      for (std::size_t start = 0; start < length; start += spec.stride) {
        if (start + spec.window_len + spec.horizon <= length) ++expected;
      }
      std::vector<SeriesFrame> frames;
      for (std::size_t k = 0; k < length; ++k) {
        frames.push_back({static_cast<Millis>(k) * 1000, {static_cast<double>(k)}});
      }
      if (window_count(length, spec) != expected || make_windows(frames, spec).size() != expected) ++bad;
    }
    if (bad) failures.push_back(std::to_string(bad) + " window count mismatches");
  }

  std::string detail = "10000-reading log roundtrip, correlation, normalization, 500 window specs";
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

// --- HTTP API ----------------------------------------------------------------

const char* kApiConfig = R"(
sim.seed = 11
sim.zones = 2
sim.duration_ms = 240000
sim.drift = extruder_pressure linear 0.00002 0
window.length = 6
train.epochs = 3
train.hidden_size = 4
forest.trees = 2
forest.max_depth = 3
forest.label_horizon = 10
downtime.horizon_steps = 20
)";

Outcome api_flow() {
  test::TempDir dir;
  auto cfg = config_from(kApiConfig);
  const auto run = generate(cfg.sim, cfg.sim_duration);
  TelemetryStore store(cfg.schema());
  ingest(store, run);
  save_artifacts(train_models(store, {}, cfg), dir / "model.pdml");
  cfg.server.model_path = dir / "model.pdml";
  auto options = [&](const char* name) {
    auto o = service_options(cfg);
    o.data_dir = dir / name;
    o.clock = [] { return Millis{1'700'000'000'000}; };
    return o;
  };

  Service local(options("local"));
  const auto expected = test::run_api_flow([&](const ApiRequest& r) { return local.handle(r); }, "MNL15",
                                           run.readings, 30);
  Service remote(options("remote"));
  HttpServer server(remote, 4);
  const int port = server.start("127.0.0.1", 0);
  test::HttpTransport http("127.0.0.1", port);
  const auto actual = test::run_api_flow(std::ref(http), "MNL15", run.readings, 30);

  std::size_t differing = 0;
  std::string differing_labels;
  for (std::size_t i = 0; i < std::min(actual.size(), expected.size()); ++i) {
    if (actual[i].label != expected[i].label || actual[i].response.status != expected[i].response.status ||
        actual[i].response.body != expected[i].response.body) {
      ++differing;
      differing_labels += " " + actual[i].label;
    }
  }
  bool complete = actual.size() == expected.size();
  std::map<std::string, int> status;
  for (const auto& step : actual) status[step.label] = step.response.status;
  complete = complete && status["forecast"] == 200 && status["ack"] == 200 && status["maintenance"] == 201;

  const std::vector<std::pair<std::string, std::string>> seeds{
      {"/api/v1/readings", R"([{"timestamp_ms":1,"machine_id":"MNL15","parameter":"ejection_pct","value":1.5}])"},
      {"/api/v1/machines/MNL15/envelope", R"({"sustain_steps":2,"bounds":{"extruder_pressure":{"lower":1,"upper":3}}})"},
      {"/api/v1/machines/MNL15/maintenance", R"({"note":"x","performed_by":"y","timestamp_ms":5})"},
      {"/api/v1/alerts/1/ack", ""},
  };
  Pcg32 rng(99);
  int fuzzed = 0, non_api = 0, internal = 0;
  for (int i = 0; i < 1500; ++i) {
    const auto& [path, body] = seeds[rng.below(static_cast<std::uint32_t>(seeds.size()))];
    ApiRequest req{path.ends_with("envelope") ? "PUT" : "POST", path, {}, test::mutate(body, rng)};
    if (rng.below(4) == 0) req.path = test::mutate(path, rng);
    // Request targets must stay well formed for the HTTP client itself.
    if (req.path.empty() || req.path.front() != '/' ||
        req.path.find_first_of(std::string(" \r\n\t#?\0", 7)) != std::string::npos) {
      continue;
    }
    bool printable = true;
    for (unsigned char c : req.path) printable = printable && c > 0x20 && c < 0x7f;
    if (!printable) continue;
    const auto res = http(req);
    ++fuzzed;
    if (res.status >= 400 || res.status < 0) {
      if (!test::is_api_error(res)) ++non_api;
      else if (test::error_code(res) == "internal") ++internal;
    }
  }
  server.stop();

  const bool pass = complete && differing == 0 && non_api == 0 && internal == 0 && fuzzed > 1000;
  return {pass, std::to_string(actual.size()) + " flow steps, " + std::to_string(differing) + " differ from in-process" +
                    (differing_labels.empty() ? "" : " (" + differing_labels.substr(1) + ")") + "; " +
                    std::to_string(fuzzed) + " fuzzed requests, " + std::to_string(non_api) + " non-ApiError, " +
                    std::to_string(internal) + " internal"};
}

// --- determinism -------------------------------------------------------------

Outcome determinism() {
  test::TempDir dir;
  const auto cfg = config_from(kApiConfig);
  std::vector<std::string> differs;

  write_sim_log(generate(cfg.sim, cfg.sim_duration), cfg.schema(), dir / "a.log");
  write_sim_log(generate(cfg.sim, cfg.sim_duration), cfg.schema(), dir / "b.log");
  if (test::slurp(dir / "a.log") != test::slurp(dir / "b.log")) differs.push_back("simulate");

  TelemetryStore store(cfg.schema());
  store.load_log(dir / "a.log");
  auto first = train_models(store, {}, cfg);
  auto second = train_models(store, {}, cfg);
  if (encode_model(first.report.params) != encode_model(second.report.params) ||
      first.report.train_mse != second.report.train_mse ||
      first.report.validation_mse != second.report.validation_mse) {
    differs.push_back("train");
  }

  Pcg32 rng(5);
  std::vector<Vector> xs;
  std::vector<double> ys;
  for (int i = 0; i < 300; ++i) {
    xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    ys.push_back(xs.back()[0] * 2.0 - xs.back()[2] + 0.1 * rng.normal());
  }
  ForestConfig fc;
  fc.n_trees = 15;
  fc.features_per_split = 2;
  if (encode_forest(fit_forest(xs, ys, fc)) != encode_forest(fit_forest(xs, ys, fc))) differs.push_back("fit_forest");

  std::string detail = "simulate, train and fit_forest rerun byte for byte";
  for (const auto& d : differs) detail += "; differs: " + d;
  return {differs.empty(), detail};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace pdm

int main() {
  using namespace pdm;
  const std::vector<Criterion> criteria{
      {"lstm-gradient-check", gradient_check},
      {"lstm-training-converges", convergence},
      {"lstm-beats-persistence", beats_persistence},
      {"forest-split-oracle", forest_oracle},
      {"downtime-lead-and-accuracy", downtime_prediction},
      {"data-layer-invariants", data_layer},
      {"api-live-flow-and-fuzz", api_flow},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
