// pdm: command-line front end for the predictive-maintenance pipeline.
//
// Exit codes: 0 success, 1 usage, 2 data or configuration error, 3 runtime
// failure. Results go to stdout; progress goes to stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "pdm/config.hpp"
#include "pdm/pipeline.hpp"
#include "pdm/service.hpp"

namespace fs = std::filesystem;
using namespace pdm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

void progress(const std::string& line) { std::cerr << "pdm: " << line << '\n'; }

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::storage:
    case ErrorCode::conflict: return kExitRuntime;
    default: return kExitData;
  }
}

PipelineConfig load_config(const std::string& path) {
  if (path.empty()) return load_pipeline_config(KeyValueConfig{});
  try {
    return load_pipeline_config(KeyValueConfig::load(path));
  } catch (const ParseError& e) {
    fail(ErrorCode::invalid_argument, path + ": line " + std::to_string(e.line()) + ": " + e.what());
  }
}

/// The data directory's schema comes from its telemetry log header.
Schema data_schema(const fs::path& data_dir) { return Schema(log_zones(data_dir / kTelemetryFile)); }

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<Millis> duration;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  const auto cfg = load_config(a.config);
  const Millis duration = a.duration.value_or(cfg.sim_duration);
  if (duration <= 0) fail(ErrorCode::invalid_argument, "duration must be positive");
  const fs::path out(a.out);
  fs::create_directories(out);
  const auto run = generate(cfg.sim, duration, cfg.envelope());
  write_sim_log(run, cfg.schema(), out / kTelemetryFile);
  const auto maint = out / kMaintenanceFile;
  fs::remove(maint);
  if (!cfg.sim.maintenance_resets.empty()) {
    MaintenanceLog log(maint);
    for (Millis t : cfg.sim.maintenance_resets) {
      if (t < duration) log.append({cfg.sim.machine_id, t, "simulated maintenance reset", "simulator"});
    }
  }
  std::cout << "machine " << cfg.sim.machine_id << '\n';
  std::cout << "readings " << run.readings.size() << '\n';
  std::cout << "frames " << run.frames.size() << '\n';
  std::cout << "ground_truth_down_at_ms "
            << (run.ground_truth_down_at ? std::to_string(*run.ground_truth_down_at) : std::string("none")) << '\n';
  progress("wrote " + (out / kTelemetryFile).string());
  return 0;
}

// ---------------------------------------------------------------------------

struct ReplayArgs {
  std::string file;
  std::string store_dir;
  std::string server_url;
  double rate = 0.0;
  std::size_t batch = 500;
};

int run_replay(const ReplayArgs& a) {
  const Schema schema(log_zones(a.file));
  const auto readings = read_log_file(a.file, schema);
  if (a.rate < 0.0) fail(ErrorCode::invalid_argument, "rate must be >= 0");
  if (a.batch < 1) fail(ErrorCode::invalid_argument, "batch must be >= 1");

  const auto started = std::chrono::steady_clock::now();
  const Millis t0 = readings.empty() ? 0 : readings.front().timestamp;
  auto pace = [&](Millis ts) {
    if (a.rate <= 0.0) return;
    const auto due = std::chrono::duration<double, std::milli>(static_cast<double>(ts - t0) / a.rate);
    std::this_thread::sleep_until(started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(due));
  };

  std::size_t accepted = 0, rejected = 0;
  if (!a.store_dir.empty()) {
    fs::create_directories(a.store_dir);
    TelemetryStore store(schema, fs::path(a.store_dir) / kTelemetryFile);
    for (const auto& r : readings) {
      pace(r.timestamp);
      store.append(r);
      ++accepted;
    }
  } else {
    httplib::Client client(a.server_url);
    client.set_keep_alive(true);
    client.set_read_timeout(60, 0);
    std::size_t i = 0;
    while (i < readings.size()) {
      // Batches never split one timestamp so every frame arrives whole.
      std::size_t j = std::min(readings.size(), i + a.batch);
      while (j < readings.size() && j > i + 1 && readings[j].timestamp == readings[j - 1].timestamp) --j;
      if (j == i + 1 && i + a.batch < readings.size()) j = std::min(readings.size(), i + a.batch);
      pace(readings[i].timestamp);
      const auto payload = readings_payload(std::span(readings).subspan(i, j - i));
      auto res = client.Post("/api/v1/readings", payload, "application/json");
      if (!res) fail(ErrorCode::storage, "cannot reach " + a.server_url + ": " + httplib::to_string(res.error()));
      if (res->status != 200) fail(ErrorCode::storage, "server rejected batch: HTTP " + std::to_string(res->status) + " " + res->body);
      const auto body = Json::parse(res->body, nullptr, false);
      if (body.is_discarded()) fail(ErrorCode::storage, "server returned non-JSON");
      accepted += body.value("accepted", std::size_t{0});
      rejected += body.value("rejected", std::size_t{0});
      i = j;
    }
  }
  std::cout << "accepted " << accepted << '\n' << "rejected " << rejected << '\n';
  return rejected == 0 ? 0 : kExitData;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data_dir;
  std::string model_out;
  std::string config;
  std::string report_out;
};

int run_train(const TrainArgs& a) {
  auto cfg = load_config(a.config);
  const fs::path dir(a.data_dir);
  const Schema schema = data_schema(dir);
  if (schema.zones() != cfg.sim.zones) {
    fail(ErrorCode::invalid_argument, "config has sim.zones = " + std::to_string(cfg.sim.zones) +
                                          " but the telemetry log has " + std::to_string(schema.zones()));
  }
  TelemetryStore store(schema);
  open_store_readonly(store, dir);
  const std::string machine = pick_machine(store, cfg.machine);
  cfg.machine = machine;
  const auto artifacts = train_models(store, maintenance_boundaries(dir, machine), cfg, progress);
  save_artifacts(artifacts, a.model_out);
  if (!a.report_out.empty()) write_text_file(a.report_out, report_csv(artifacts.report));
  const auto& r = artifacts.report;
  std::cout << "machine " << machine << '\n';
  std::cout << "epochs " << r.train_mse.size() << '\n';
  std::cout << "train_mse " << format_double(r.train_mse.back()) << '\n';
  std::cout << "validation_mse " << format_double(r.validation_mse.back()) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string data_dir;
  std::string report_out;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto model = load_artifacts(a.model);
  const fs::path dir(a.data_dir);
  const Schema schema = data_schema(dir);
  if (schema.feature_count() != model.meta.stats.size()) {
    fail(ErrorCode::dimension, "model and telemetry log disagree on the parameter set");
  }
  TelemetryStore store(schema);
  open_store_readonly(store, dir);
  const auto e = evaluate_models(model, store, maintenance_boundaries(dir, model.meta.machine_id));
  std::string text = "model,validation_mse\n";
  text += "lstm," + format_double(e.lstm_mse) + "\n";
  if (e.forest_mse) text += "forest," + format_double(*e.forest_mse) + "\n";
  text += "persistence," + format_double(e.persistence_mse) + "\n";
  std::cout << "validation_samples " << e.validation_samples << '\n';
  std::cout << "lstm_validation_mse " << format_double(e.lstm_mse) << '\n';
  if (e.forest_mse) std::cout << "forest_validation_mse " << format_double(*e.forest_mse) << '\n';
  std::cout << "persistence_validation_mse " << format_double(e.persistence_mse) << '\n';
  if (!a.report_out.empty()) write_text_file(a.report_out, text);
  return 0;
}

// ---------------------------------------------------------------------------

struct ForecastArgs {
  std::string model;
  std::string data_dir;
  std::size_t horizon = 60;
  std::string machine;
};

int run_forecast(const ForecastArgs& a) {
  const auto model = load_artifacts(a.model);
  const fs::path dir(a.data_dir);
  const Schema schema = data_schema(dir);
  if (schema.feature_count() != model.meta.stats.size()) {
    fail(ErrorCode::dimension, "model and telemetry log disagree on the parameter set");
  }
  TelemetryStore store(schema);
  open_store_readonly(store, dir);
  const std::string machine = pick_machine(store, a.machine.empty() ? model.meta.machine_id : a.machine);
  const auto history = forecast_history(store, machine, model.meta.period, model.meta.cleaning.max_gap);
  const auto fc = forecast_downtime(machine, history, model.forecast_model(), model.meta.envelope, a.horizon, schema);
  std::cout << to_json(fc, schema).dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

int run_serve(const std::string& config_path) {
  auto cfg = load_config(config_path);
  apply_env_overrides(cfg.server);
  const auto [host, port] = cfg.server.host_port();
  Service service(service_options(cfg));
  HttpServer server(service, cfg.server.threads);
  progress("serving on " + host + ":" + std::to_string(port) + " (data dir " + cfg.server.data_dir.string() +
           ", model " + (cfg.server.model_path ? cfg.server.model_path->string() : std::string("none")) + ")");
  server.run(host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive maintenance: simulate, ingest, train, evaluate, forecast and serve"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kServiceVersion));

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic telemetry stream into a data directory");
  simulate->add_option("--config", sim.config, "Configuration file (sim.* keys)")->check(CLI::ExistingFile);
  simulate->add_option("--duration", sim.duration, "Stream length in milliseconds (default sim.duration_ms)");
  simulate->add_option("--out", sim.out, "Output data directory")->required();

  ReplayArgs rep;
  auto* replay = app.add_subcommand("replay", "Feed a telemetry log into a store directory or a running server");
  replay->add_option("--file", rep.file, "Telemetry log to replay")->required()->check(CLI::ExistingFile);
  auto* store_opt = replay->add_option("--store-dir", rep.store_dir, "Target data directory");
  auto* url_opt = replay->add_option("--server-url", rep.server_url, "Target server, e.g. http://127.0.0.1:8080");
  store_opt->excludes(url_opt);
  replay->add_option("--rate", rep.rate, "Speed-up over real time; 0 replays as fast as possible")->capture_default_str();
  replay->add_option("--batch", rep.batch, "Readings per request when replaying to a server")->capture_default_str();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the LSTM and forest models on a data directory");
  train->add_option("--data-dir", tr.data_dir, "Data directory with telemetry.log")->required();
  train->add_option("--model-out", tr.model_out, "Model file to write (.meta and .forest sidecars too)")->required();
  train->add_option("--train-config,--config", tr.config, "Configuration file")->check(CLI::ExistingFile);
  train->add_option("--report-out", tr.report_out, "CSV of per-epoch train and validation MSE");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a trained model on its validation split");
  evaluate->add_option("--model", ev.model, "Model file")->required();
  evaluate->add_option("--data-dir", ev.data_dir, "Data directory with telemetry.log")->required();
  evaluate->add_option("--report-out", ev.report_out, "CSV of validation MSE per model");

  ForecastArgs fc;
  auto* forecast = app.add_subcommand("forecast", "Forecast downtime from the latest window of a data directory");
  forecast->add_option("--model", fc.model, "Model file")->required();
  forecast->add_option("--data-dir", fc.data_dir, "Data directory with telemetry.log")->required();
  forecast->add_option("--horizon", fc.horizon, "Forecast steps")->capture_default_str()->check(CLI::PositiveNumber);
  forecast->add_option("--machine", fc.machine, "Machine id (default: the model's machine)");

  std::string serve_config;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--config", serve_config, "Configuration file (server.* keys)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  if (replay->parsed() && rep.store_dir.empty() == rep.server_url.empty()) {
    std::cerr << "replay: exactly one of --store-dir or --server-url is required\n";
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (replay->parsed()) return run_replay(rep);
    if (train->parsed()) return run_train(tr);
    if (evaluate->parsed()) return run_evaluate(ev);
    if (forecast->parsed()) return run_forecast(fc);
    if (serve->parsed()) return run_serve(serve_config);
  } catch (const Error& e) {
    std::cerr << "pdm: error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "pdm: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
