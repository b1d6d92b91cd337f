#ifndef PDM_SERVICE_HPP
#define PDM_SERVICE_HPP

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "pdm/downtime.hpp"
#include "pdm/envelope.hpp"
#include "pdm/pipeline.hpp"
#include "pdm/telemetry.hpp"

namespace pdm {

using Json = nlohmann::json;

inline constexpr std::string_view kServiceVersion = "1.0.0";
inline constexpr std::string_view kApiPrefix = "/api/v1";

enum class ApiErrorCode { bad_request, not_found, conflict, internal };

inline std::string_view to_string(ApiErrorCode c) {
  switch (c) {
    case ApiErrorCode::bad_request: return "bad_request";
    case ApiErrorCode::not_found: return "not_found";
    case ApiErrorCode::conflict: return "conflict";
    case ApiErrorCode::internal: return "internal";
  }
  return "internal";
}

inline int http_status(ApiErrorCode c) {
  switch (c) {
    case ApiErrorCode::bad_request: return 400;
    case ApiErrorCode::not_found: return 404;
    case ApiErrorCode::conflict: return 409;
    case ApiErrorCode::internal: return 500;
  }
  return 500;
}

struct ApiError : std::runtime_error {
  ApiError(ApiErrorCode c, const std::string& message) : std::runtime_error(message), code(c) {}
  ApiErrorCode code;
};

/// Domain error -> wire error.
inline ApiErrorCode api_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return ApiErrorCode::not_found;
    case ErrorCode::conflict:
    case ErrorCode::invalid_dataset: return ApiErrorCode::conflict;
    case ErrorCode::rejected_reading:
    case ErrorCode::invalid_range:
    case ErrorCode::invalid_argument:
    case ErrorCode::parse: return ApiErrorCode::bad_request;
    default: return ApiErrorCode::internal;
  }
}

inline Json error_body(ApiErrorCode code, const std::string& message) {
  return Json{{"error", {{"code", to_string(code)}, {"message", message}}}};
}

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  Json body;
};

// ---------------------------------------------------------------------------
// Wire encoders

inline Json to_json(const SensorReading& r) {
  return Json{{"timestamp_ms", r.timestamp},
              {"machine_id", r.machine_id},
              {"parameter", to_token(r.parameter)},
              {"value", r.value}};
}

/// Wire payload for POST /readings.
inline std::string readings_payload(std::span<const SensorReading> readings) {
  Json arr = Json::array();
  for (const auto& r : readings) arr.push_back(to_json(r));
  return arr.dump();
}

inline Json frame_values(const SeriesFrame& f, const Schema& schema) {
  Json values = Json::object();
  for (std::size_t j = 0; j < f.values.size(); ++j) {
    values[to_token(schema.at(j))] = f.values[j] ? Json(*f.values[j]) : Json(nullptr);
  }
  return values;
}

inline Json vector_values(const Vector& v, const Schema& schema) {
  Json values = Json::object();
  for (std::size_t j = 0; j < v.size(); ++j) values[to_token(schema.at(j))] = v[j];
  return values;
}

inline Json optional_json(const std::optional<Millis>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const DowntimeForecast& fc, const Schema& schema) {
  Json contributing = Json::array();
  for (const auto& [p, step] : fc.contributing) contributing.push_back(to_token(p));
  Json steps = Json::array();
  for (std::size_t k = 0; k < fc.steps.size(); ++k) {
    steps.push_back({{"timestamp_ms", fc.step_timestamps[k]}, {"values", vector_values(fc.steps[k], schema)}});
  }
  return Json{{"machine_id", fc.machine_id},
              {"generated_at_ms", fc.generated_at},
              {"predicted_down_at_ms", optional_json(fc.predicted_down_at)},
              {"lead_time_ms", optional_json(fc.lead_time)},
              {"confidence", fc.confidence},
              {"contributing_parameters", contributing},
              {"steps", steps}};
}

inline Json to_json(const Alert& a) {
  return Json{{"id", a.id},
              {"machine_id", a.machine_id},
              {"severity", to_string(a.severity)},
              {"state", to_string(a.state)},
              {"created_at_ms", a.created_at},
              {"message", a.message},
              {"predicted_down_at_ms", optional_json(a.predicted_down_at)},
              {"lead_time_ms", optional_json(a.lead_time)},
              {"confidence", a.confidence}};
}

inline Json to_json(const MaintenanceEvent& e) {
  return Json{{"machine_id", e.machine_id},
              {"timestamp_ms", e.timestamp},
              {"note", e.note},
              {"performed_by", e.performed_by}};
}

inline Json to_json(const OperatingEnvelope& env, const Schema& schema) {
  Json bounds = Json::object();
  for (std::size_t j = 0; j < env.bounds.size(); ++j) {
    bounds[to_token(schema.at(j))] = {{"lower", env.bounds[j].lower}, {"upper", env.bounds[j].upper}};
  }
  return Json{{"sustain_steps", env.sustain_steps}, {"bounds", bounds}};
}

// ---------------------------------------------------------------------------
// Wire decoders (throw ApiError)

namespace detail {

[[noreturn]] inline void bad_request(const std::string& message) {
  throw ApiError(ApiErrorCode::bad_request, message);
}

inline Json parse_body(const std::string& body) {
  auto j = Json::parse(body, nullptr, false);
  if (j.is_discarded()) bad_request("request body is not valid JSON");
  return j;
}

inline std::optional<std::string> reject_reason(const Json& item, const Schema& schema, SensorReading& out) {
  if (!item.is_object()) return "reading must be an object";
  for (const char* key : {"timestamp_ms", "machine_id", "parameter", "value"}) {
    if (!item.contains(key)) return std::string("missing field '") + key + "'";
  }
  const auto& ts = item["timestamp_ms"];
  if (!ts.is_number_integer()) return "timestamp_ms must be an integer";
  if (!item["machine_id"].is_string()) return "machine_id must be a string";
  if (!item["parameter"].is_string()) return "parameter must be a string";
  const auto& v = item["value"];
  if (!v.is_number()) return "value must be a finite number";
  out.timestamp = ts.is_number_unsigned() ? static_cast<Millis>(std::min<std::uint64_t>(
                                                ts.get<std::uint64_t>(), std::numeric_limits<Millis>::max()))
                                          : ts.get<Millis>();
  out.machine_id = item["machine_id"].get<std::string>();
  auto p = parse_parameter(item["parameter"].get<std::string>());
  if (!p) return "unknown parameter '" + item["parameter"].get<std::string>() + "'";
  out.parameter = *p;
  out.value = v.get<double>();
  try {
    validate_reading(out, schema);
  } catch (const Error& e) {
    return std::string(e.what());
  }
  return std::nullopt;
}

inline Millis query_ms(const ApiRequest& req, const std::string& key, Millis fallback) {
  auto it = req.query.find(key);
  if (it == req.query.end()) return fallback;
  auto v = parse_int<Millis>(it->second);
  if (!v) bad_request(key + " must be an integer number of milliseconds");
  return *v;
}

inline std::vector<std::string> path_segments(std::string_view path) {
  std::vector<std::string> out;
  for (auto part : split(path, '/')) {
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct ServiceOptions {
  Schema schema;
  std::optional<std::filesystem::path> data_dir;  // absent: in-memory only
  std::optional<LoadedModel> model;
  OperatingEnvelope default_envelope;
  Millis period = 1000;
  std::size_t default_horizon = 60;
  std::size_t max_horizon = 10000;
  std::size_t warning_periods = 30;
  std::size_t max_gap = 5;
  Millis poll_interval_ms = 2000;
  std::function<Millis()> clock;  // defaults to wall-clock milliseconds
};

/// Builds service options from a pipeline config, loading the model when a
/// path is configured.
inline ServiceOptions service_options(const PipelineConfig& cfg) {
  ServiceOptions o;
  o.schema = cfg.schema();
  o.data_dir = cfg.server.data_dir;
  o.default_envelope = cfg.envelope();
  o.period = cfg.period();
  o.default_horizon = cfg.horizon_steps;
  o.warning_periods = cfg.warning_periods;
  o.max_gap = cfg.cleaning.max_gap;
  o.poll_interval_ms = cfg.server.poll_interval_ms;
  if (cfg.server.model_path) {
    o.model = load_artifacts(*cfg.server.model_path);
    if (o.model->meta.stats.size() != o.schema.feature_count()) {
      fail(ErrorCode::dimension, "model feature count does not match the configured schema");
    }
    o.period = o.model->meta.period;
  }
  return o;
}

/// Request router over the domain modules. Transport-free: the HTTP layer
/// only converts to and from ApiRequest/ApiResponse.
class Service {
 public:
  explicit Service(ServiceOptions options) : opt_(std::move(options)) {
    if (!opt_.clock) {
      opt_.clock = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
      };
    }
    if (opt_.default_envelope.bounds.empty()) {
      opt_.default_envelope.bounds.assign(opt_.schema.feature_count(),
                                          Bounds{-std::numeric_limits<double>::max(), std::numeric_limits<double>::max()});
    }
    if (opt_.default_envelope.bounds.size() != opt_.schema.feature_count()) {
      fail(ErrorCode::dimension, "envelope does not match schema");
    }
    if (opt_.data_dir) {
      std::filesystem::create_directories(*opt_.data_dir);
      store_ = std::make_unique<TelemetryStore>(opt_.schema, *opt_.data_dir / kTelemetryFile);
      alerts_ = std::make_unique<AlertManager>(*opt_.data_dir / kAlertsFile);
      maintenance_ = std::make_unique<MaintenanceLog>(*opt_.data_dir / kMaintenanceFile);
    } else {
      store_ = std::make_unique<TelemetryStore>(opt_.schema);
      alerts_ = std::make_unique<AlertManager>();
      maintenance_ = std::make_unique<MaintenanceLog>();
    }
  }

  const TelemetryStore& store() const { return *store_; }
  const AlertManager& alerts() const { return *alerts_; }
  const MaintenanceLog& maintenance() const { return *maintenance_; }
  const ServiceOptions& options() const { return opt_; }

  OperatingEnvelope envelope(const std::string& machine) const {
    std::shared_lock lock(envelope_mutex_);
    auto it = envelopes_.find(machine);
    return it == envelopes_.end() ? opt_.default_envelope : it->second;
  }

  /// Same computation as GET .../forecast, without the alert side effect.
  DowntimeForecast compute_forecast(const std::string& machine, std::size_t horizon) const {
    if (!opt_.model) fail(ErrorCode::conflict, "no trained model");
    require_machine(machine);
    const auto history = forecast_history(*store_, machine, opt_.period, opt_.max_gap);
    return forecast_downtime(machine, history, opt_.model->forecast_model(), envelope(machine), horizon, opt_.schema);
  }

  ApiResponse handle(const ApiRequest& req) {
    try {
      return route(req);
    } catch (const ApiError& e) {
      return error(e.code, e.what());
    } catch (const Error& e) {
      return error(api_code(e.code()), e.what());
    } catch (const Json::exception& e) {
      return error(ApiErrorCode::bad_request, std::string("malformed JSON payload: ") + e.what());
    } catch (const std::exception& e) {
      return error(ApiErrorCode::internal, e.what());
    }
  }

  static ApiResponse error(ApiErrorCode code, const std::string& message) {
    return ApiResponse{http_status(code), error_body(code, message)};
  }

 private:
  ApiResponse route(const ApiRequest& req) {
    const auto seg = detail::path_segments(req.path);
    if (seg.size() < 2 || seg[0] != "api" || seg[1] != "v1") {
      throw ApiError(ApiErrorCode::not_found, "no such endpoint: " + req.path);
    }
    const auto& m = req.method;
    const std::size_t n = seg.size();
    if (n == 3 && seg[2] == "health") return only(m, "GET", [&] { return health(); });
    if (n == 3 && seg[2] == "readings") return only(m, "POST", [&] { return ingest(req); });
    if (n == 5 && seg[2] == "alerts" && seg[4] == "ack") return only(m, "POST", [&] { return ack(seg[3]); });
    if (n == 5 && seg[2] == "machines") {
      const std::string machine = checked_machine(seg[3]);
      const auto& leaf = seg[4];
      if (leaf == "latest") return only(m, "GET", [&] { return latest(machine); });
      if (leaf == "series") return only(m, "GET", [&] { return series(machine, req); });
      if (leaf == "forecast") return only(m, "GET", [&] { return forecast(machine, req); });
      if (leaf == "alerts") return only(m, "GET", [&] { return list_alerts(machine, req); });
      if (leaf == "envelope") {
        if (m == "GET") return get_envelope(machine);
        if (m == "PUT") return put_envelope(machine, req);
        throw ApiError(ApiErrorCode::bad_request, "method " + m + " not allowed here");
      }
      if (leaf == "maintenance") {
        if (m == "GET") return list_maintenance(machine);
        if (m == "POST") return post_maintenance(machine, req);
        throw ApiError(ApiErrorCode::bad_request, "method " + m + " not allowed here");
      }
    }
    throw ApiError(ApiErrorCode::not_found, "no such endpoint: " + req.path);
  }

  template <typename Fn>
  ApiResponse only(const std::string& method, const char* allowed, Fn&& fn) {
    if (method != allowed) throw ApiError(ApiErrorCode::bad_request, "method " + method + " not allowed here");
    return fn();
  }

  static std::string checked_machine(const std::string& id) {
    if (!valid_machine_id(id)) detail::bad_request("invalid machine id '" + id + "'");
    return id;
  }

  void require_machine(const std::string& machine) const {
    if (!store_->has_machine(machine)) fail(ErrorCode::not_found, "unknown machine '" + machine + "'");
  }

  ApiResponse health() const {
    Json model = {{"loaded", opt_.model.has_value()}};
    if (opt_.model) {
      model["machine_id"] = opt_.model->meta.machine_id;
      model["window_length"] = opt_.model->meta.window.window_len;
      model["hidden_size"] = opt_.model->params.hidden_size;
      model["period_ms"] = opt_.model->meta.period;
    }
    return {200, Json{{"status", "ok"},
                      {"version", kServiceVersion},
                      {"model", model},
                      {"poll_interval_ms", opt_.poll_interval_ms}}};
  }

  ApiResponse ingest(const ApiRequest& req) {
    const auto body = detail::parse_body(req.body);
    const Json* items = &body;
    if (body.is_object() && body.contains("readings")) items = &body["readings"];
    if (!items->is_array()) detail::bad_request("expected a JSON array of readings");

    std::size_t accepted = 0;
    Json rejections = Json::array();
    std::set<std::string> touched;
    for (std::size_t i = 0; i < items->size(); ++i) {
      SensorReading r;
      auto reason = detail::reject_reason((*items)[i], opt_.schema, r);
      if (reason) {
        rejections.push_back({{"index", i}, {"reason", *reason}});
        continue;
      }
      store_->append(r);
      touched.insert(r.machine_id);
      ++accepted;
    }
    for (const auto& machine : touched) check_violations(machine);
    return {200, Json{{"accepted", accepted}, {"rejected", rejections.size()}, {"rejections", rejections}}};
  }

  void check_violations(const std::string& machine) {
    const auto env = envelope(machine);
    const auto [lo, hi] = store_->time_span(machine);
    const Millis span = static_cast<Millis>(env.sustain_steps + 1) * opt_.period;
    const Millis from = std::max(lo, hi - span);
    // Align to the same grid the forecasts use.
    const Millis start = lo + (from - lo) / opt_.period * opt_.period;
    auto frames = store_->frames(machine, start, hi + 1, opt_.period, Aggregation::mean);
    while (!frames.empty() && !frames.back().complete()) frames.pop_back();
    const auto violations = evaluate_envelope(frames, env);
    alerts_->on_violations(machine, violations, opt_.schema, opt_.clock());
  }

  ApiResponse latest(const std::string& machine) const {
    const auto frame = store_->latest_frame(machine);
    return {200, Json{{"machine_id", machine},
                      {"timestamp_ms", frame.timestamp},
                      {"status", to_string(maintenance_->status(machine))},
                      {"values", frame_values(frame, opt_.schema)}}};
  }

  ApiResponse series(const std::string& machine, const ApiRequest& req) const {
    auto it = req.query.find("parameter");
    if (it == req.query.end()) detail::bad_request("query parameter 'parameter' is required");
    auto p = parse_parameter(it->second);
    if (!p || !opt_.schema.contains(*p)) detail::bad_request("unknown parameter '" + it->second + "'");
    const Millis from = detail::query_ms(req, "from_ms", 0);
    const Millis to = detail::query_ms(req, "to_ms", std::numeric_limits<Millis>::max());
    if (from > to) detail::bad_request("from_ms is after to_ms");
    require_machine(machine);
    Json out = Json::array();
    for (const auto& r : store_->query_range(machine, *p, from, to)) out.push_back(to_json(r));
    return {200, out};
  }

  ApiResponse forecast(const std::string& machine, const ApiRequest& req) {
    std::size_t horizon = opt_.default_horizon;
    if (auto it = req.query.find("horizon_steps"); it != req.query.end()) {
      auto h = parse_int<std::size_t>(it->second);
      if (!h || *h < 1 || *h > opt_.max_horizon) {
        detail::bad_request("horizon_steps must be an integer in [1, " + std::to_string(opt_.max_horizon) + "]");
      }
      horizon = *h;
    }
    const auto fc = compute_forecast(machine, horizon);
    alerts_->on_forecast(fc, static_cast<Millis>(opt_.warning_periods) * opt_.period, opt_.clock());
    return {200, to_json(fc, opt_.schema)};
  }

  ApiResponse get_envelope(const std::string& machine) const {
    return {200, to_json(envelope(machine), opt_.schema)};
  }

  ApiResponse put_envelope(const std::string& machine, const ApiRequest& req) {
    const auto body = detail::parse_body(req.body);
    if (!body.is_object()) detail::bad_request("expected a JSON object");
    std::unique_lock lock(envelope_mutex_);
    auto it = envelopes_.find(machine);
    OperatingEnvelope env = it == envelopes_.end() ? opt_.default_envelope : it->second;
    if (body.contains("sustain_steps")) {
      const auto& s = body["sustain_steps"];
      if (!s.is_number_unsigned() || s.get<std::uint64_t>() < 1) detail::bad_request("sustain_steps must be >= 1");
      env.sustain_steps = s.get<std::size_t>();
    }
    if (body.contains("bounds")) {
      const auto& bounds = body["bounds"];
      if (!bounds.is_object()) detail::bad_request("bounds must be an object keyed by parameter");
      for (const auto& [token, b] : bounds.items()) {
        auto p = parse_parameter(token);
        if (!p || !opt_.schema.contains(*p)) detail::bad_request("unknown parameter '" + token + "'");
        if (!b.is_object() || !b.contains("lower") || !b.contains("upper") || !b["lower"].is_number() ||
            !b["upper"].is_number()) {
          detail::bad_request("bounds for " + token + " need numeric lower and upper");
        }
        const double lo = b["lower"].get<double>(), hi = b["upper"].get<double>();
        if (!(lo < hi)) detail::bad_request("lower must be below upper for " + token);
        env.bounds[opt_.schema.index(*p)] = Bounds{lo, hi};
      }
    }
    env.validate();
    envelopes_[machine] = env;
    return {200, to_json(env, opt_.schema)};
  }

  ApiResponse list_alerts(const std::string& machine, const ApiRequest& req) const {
    std::optional<AlertState> state;
    if (auto it = req.query.find("state"); it != req.query.end()) {
      state = parse_alert_state(it->second);
      if (!state) detail::bad_request("state must be open, acknowledged or resolved");
    }
    Json out = Json::array();
    for (const auto& a : alerts_->list(machine, state)) out.push_back(to_json(a));
    return {200, out};
  }

  ApiResponse ack(const std::string& id_text) {
    auto id = parse_int<std::uint64_t>(id_text);
    if (!id) detail::bad_request("alert id must be a non-negative integer");
    return {200, to_json(alerts_->acknowledge(*id))};
  }

  ApiResponse list_maintenance(const std::string& machine) const {
    Json out = Json::array();
    for (const auto& e : maintenance_->events(machine)) out.push_back(to_json(e));
    return {200, out};
  }

  ApiResponse post_maintenance(const std::string& machine, const ApiRequest& req) {
    const auto body = detail::parse_body(req.body);
    if (!body.is_object()) detail::bad_request("expected a JSON object");
    const Millis now = opt_.clock();
    MaintenanceEvent e;
    e.machine_id = machine;
    e.timestamp = now;
    if (body.contains("timestamp_ms")) {
      if (!body["timestamp_ms"].is_number_integer()) detail::bad_request("timestamp_ms must be an integer");
      e.timestamp = body["timestamp_ms"].get<Millis>();
    }
    if (!body.contains("note") || !body["note"].is_string()) detail::bad_request("note is required");
    e.note = body["note"].get<std::string>();
    if (body.contains("performed_by")) {
      if (!body["performed_by"].is_string()) detail::bad_request("performed_by must be a string");
      e.performed_by = body["performed_by"].get<std::string>();
    }
    const auto outcome = record_maintenance(
        e, now, [&](const std::string& id) { return store_->has_machine(id); }, *maintenance_, *alerts_);
    Json trail = Json::array();
    for (auto s : outcome.status_trail) trail.push_back(to_string(s));
    return {201, Json{{"event", to_json(e)}, {"resolved_alerts", outcome.resolved_alerts}, {"status_trail", trail}}};
  }

  ServiceOptions opt_;
  std::unique_ptr<TelemetryStore> store_;
  std::unique_ptr<AlertManager> alerts_;
  std::unique_ptr<MaintenanceLog> maintenance_;
  mutable std::shared_mutex envelope_mutex_;
  std::map<std::string, OperatingEnvelope> envelopes_;
};

// ---------------------------------------------------------------------------
// HTTP binding

/// Serves a Service over HTTP/1.1. Every response body, including
/// transport-level failures, is JSON.
class HttpServer {
 public:
  HttpServer(Service& service, std::size_t threads = 8) : service_(service) {
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(std::max<std::size_t>(1, threads)); };
    server_.set_payload_max_length(16u << 20);
    server_.set_tcp_nodelay(true);
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      ApiRequest api{req.method, req.path, {}, req.body};
      for (const auto& [k, v] : req.params) api.query[k] = v;
      write(res, service_.handle(api));
    };
    server_.Get(".*", forward);
    server_.Post(".*", forward);
    server_.Put(".*", forward);
    server_.Delete(".*", forward);
    server_.Patch(".*", forward);
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      write(res, Service::error(ApiErrorCode::internal, "unhandled server error"));
    });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const auto code = res.status == 404   ? ApiErrorCode::not_found
                        : res.status >= 500 ? ApiErrorCode::internal
                                            : ApiErrorCode::bad_request;
      const int status = res.status;
      write(res, Service::error(code, "HTTP " + std::to_string(status)));
      res.status = status;
    });
  }

  ~HttpServer() { stop(); }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds `host:port` (port 0 picks a free one) and serves on a background
  /// thread. Returns the bound port.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(ErrorCode::storage, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) fail(ErrorCode::storage, "cannot bind " + host + ":" + std::to_string(port));
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void write(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(-1, ' ', false, Json::error_handler_t::replace), "application/json");
  }

  Service& service_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace pdm

#endif  // PDM_SERVICE_HPP
