#ifndef PDM_LSTM_HPP
#define PDM_LSTM_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "pdm/error.hpp"
#include "pdm/format.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/random.hpp"

namespace pdm {

/// Row-major dense block. Biases are stored as single-column tensors.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Weights of a single-layer LSTM with a linear read-out. Each gate block
/// multiplies the concatenation [x; h_prev] (width input + hidden).
struct LstmParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::size_t output_size = 0;

  Tensor w_input, w_forget, w_output, w_candidate;  // hidden x (input + hidden)
  Tensor b_input, b_forget, b_output, b_candidate;  // hidden
  Tensor w_readout;                                  // output x hidden
  Tensor b_readout;                                  // output

  static LstmParams zeros(std::size_t input, std::size_t hidden, std::size_t output) {
    if (input == 0 || hidden == 0 || output == 0) {
      fail(ErrorCode::invalid_argument, "LSTM sizes must be positive");
    }
    LstmParams p;
    p.input_size = input;
    p.hidden_size = hidden;
    p.output_size = output;
    const std::size_t z = input + hidden;
    p.w_input = p.w_forget = p.w_output = p.w_candidate = Tensor(hidden, z);
    p.b_input = p.b_forget = p.b_output = p.b_candidate = Tensor(hidden, 1);
    p.w_readout = Tensor(output, hidden);
    p.b_readout = Tensor(output, 1);
    return p;
  }

  /// Same shapes, all zero (used for gradients and optimizer moments).
  LstmParams zeros_like() const { return zeros(input_size, hidden_size, output_size); }

  static std::size_t expected_count(std::size_t d, std::size_t h, std::size_t f) {
    return 4 * h * (d + h) + 4 * h + f * h + f;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor& t) { n += t.size(); });
    return n;
  }

  /// Tensors in file order: gate weights, gate biases, read-out.
  std::array<Tensor*, 10> tensors() {
    return {&w_input, &w_forget, &w_output, &w_candidate, &b_input,
            &b_forget, &b_output, &b_candidate, &w_readout, &b_readout};
  }
  std::array<const Tensor*, 10> tensors() const {
    return {&w_input, &w_forget, &w_output, &w_candidate, &b_input,
            &b_forget, &b_output, &b_candidate, &w_readout, &b_readout};
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (Tensor* t : tensors()) fn(*t);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (const Tensor* t : tensors()) fn(*t);
  }

  /// Flat view by index across all tensors in file order.
  double& at(std::size_t flat) {
    double* out = nullptr;
    for_each_tensor([&](Tensor& t) {
      if (out) return;
      if (flat < t.size()) out = &t.values[flat];
      else flat -= t.size();
    });
    if (!out) fail(ErrorCode::invalid_argument, "parameter index out of range");
    return *out;
  }
  double at(std::size_t flat) const { return const_cast<LstmParams&>(*this).at(flat); }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const Tensor& t) {
      for (double v : t.values) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

struct LstmState {
  Vector hidden;
  Vector cell;

  static LstmState zeros(std::size_t h) { return {Vector(h, 0.0), Vector(h, 0.0)}; }

  friend bool operator==(const LstmState&, const LstmState&) = default;
};

inline double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Activations of one step, kept for backpropagation.
struct StepCache {
  Vector z;  // [x; h_prev]
  Vector input_gate, forget_gate, output_gate, candidate;
  Vector cell_prev, cell, cell_tanh, hidden;
};

namespace detail {

inline void check_step_shapes(std::span<const double> x, const LstmState& s, const LstmParams& p) {
  if (x.size() != p.input_size) fail(ErrorCode::dimension, "input vector does not match LSTM input size");
  if (s.hidden.size() != p.hidden_size || s.cell.size() != p.hidden_size) {
    fail(ErrorCode::dimension, "state does not match LSTM hidden size");
  }
}

inline void step_into(std::span<const double> x, const LstmState& state, const LstmParams& p,
                      StepCache& c) {
  const std::size_t d = p.input_size;
  const std::size_t h = p.hidden_size;
  const std::size_t zw = d + h;
  c.z.resize(zw);
  std::copy(x.begin(), x.end(), c.z.begin());
  std::copy(state.hidden.begin(), state.hidden.end(), c.z.begin() + static_cast<std::ptrdiff_t>(d));
  c.input_gate.resize(h);
  c.forget_gate.resize(h);
  c.output_gate.resize(h);
  c.candidate.resize(h);
  c.cell.resize(h);
  c.cell_tanh.resize(h);
  c.hidden.resize(h);
  c.cell_prev = state.cell;

  const double* z = c.z.data();
  for (std::size_t u = 0; u < h; ++u) {
    const double* wi = &p.w_input.values[u * zw];
    const double* wf = &p.w_forget.values[u * zw];
    const double* wo = &p.w_output.values[u * zw];
    const double* wg = &p.w_candidate.values[u * zw];
    double ai = p.b_input[u], af = p.b_forget[u], ao = p.b_output[u], ag = p.b_candidate[u];
    for (std::size_t j = 0; j < zw; ++j) {
      ai += wi[j] * z[j];
      af += wf[j] * z[j];
      ao += wo[j] * z[j];
      ag += wg[j] * z[j];
    }
    const double i = sigmoid(ai);
    const double f = sigmoid(af);
    const double o = sigmoid(ao);
    const double g = std::tanh(ag);
    const double cell = f * state.cell[u] + i * g;
    const double ct = std::tanh(cell);
    c.input_gate[u] = i;
    c.forget_gate[u] = f;
    c.output_gate[u] = o;
    c.candidate[u] = g;
    c.cell[u] = cell;
    c.cell_tanh[u] = ct;
    c.hidden[u] = o * ct;
  }
}

inline void readout_into(std::span<const double> hidden, const LstmParams& p, Vector& y) {
  y.assign(p.b_readout.values.begin(), p.b_readout.values.end());
  for (std::size_t k = 0; k < p.output_size; ++k) {
    const double* w = &p.w_readout.values[k * p.hidden_size];
    double acc = y[k];
    for (std::size_t u = 0; u < p.hidden_size; ++u) acc += w[u] * hidden[u];
    y[k] = acc;
  }
}

}  // namespace detail

/// One gated update: i, f, o = sigmoid(W z + b), g = tanh(W_g z + b_g),
/// c = f*c_prev + i*g, h = o*tanh(c), with z = [x; h_prev].
inline LstmState cell_step(std::span<const double> x, const LstmState& state, const LstmParams& params) {
  detail::check_step_shapes(x, state, params);
  StepCache c;
  detail::step_into(x, state, params, c);
  return {std::move(c.hidden), std::move(c.cell)};
}

struct SequenceResult {
  LstmState final_state;
  std::vector<Vector> hidden_trace;
};

/// Folds cell_step over `xs` starting from `initial` (zero state when
/// omitted).
inline SequenceResult forward_sequence(std::span<const Vector> xs, const LstmParams& params,
                                       std::optional<LstmState> initial = std::nullopt) {
  SequenceResult r{initial ? *initial : LstmState::zeros(params.hidden_size), {}};
  r.hidden_trace.reserve(xs.size());
  for (const auto& x : xs) {
    r.final_state = cell_step(x, r.final_state, params);
    r.hidden_trace.push_back(r.final_state.hidden);
  }
  return r;
}

inline Vector readout(std::span<const double> hidden, const LstmParams& params) {
  if (hidden.size() != params.hidden_size) fail(ErrorCode::dimension, "hidden size mismatch");
  Vector y;
  detail::readout_into(hidden, params, y);
  return y;
}

/// Forecasts `steps` rows after `window`. The first row reads out the final
/// hidden state; later rows feed the previous forecast back as input.
inline std::vector<Vector> predict_horizon(std::span<const Vector> window, const LstmParams& params,
                                           std::size_t steps) {
  if (steps == 0) fail(ErrorCode::invalid_argument, "forecast horizon must be >= 1");
  if (steps > 1 && params.input_size != params.output_size) {
    fail(ErrorCode::dimension, "autoregressive forecasting needs input size == output size");
  }
  auto state = forward_sequence(window, params).final_state;
  std::vector<Vector> out;
  out.reserve(steps);
  out.push_back(readout(state.hidden, params));
  for (std::size_t k = 1; k < steps; ++k) {
    state = cell_step(out.back(), state, params);
    out.push_back(readout(state.hidden, params));
  }
  return out;
}

inline double mse_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) fail(ErrorCode::dimension, "mse operands differ in length");
  if (predicted.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double e = predicted[k] - target[k];
    acc += e * e;
  }
  return acc / static_cast<double>(predicted.size());
}

/// Scratch buffers reused across samples during training.
struct BpttWorkspace {
  std::vector<StepCache> steps;
  Vector y, dy, dh, dc, dz, da_i, da_f, da_o, da_g;
};

namespace detail {

/// Adds `scale` * d(mse)/d(params) for one sample into `grads`; returns the
/// sample loss.
inline double accumulate_sample(std::span<const Vector> window, std::span<const double> target,
                                const LstmParams& p, double scale, LstmParams& grads,
                                BpttWorkspace& ws) {
  const std::size_t d = p.input_size;
  const std::size_t h = p.hidden_size;
  const std::size_t out = p.output_size;
  const std::size_t zw = d + h;
  if (target.size() != out) fail(ErrorCode::dimension, "target does not match LSTM output size");
  if (window.empty()) fail(ErrorCode::invalid_argument, "empty input window");

  const std::size_t steps = window.size();
  if (ws.steps.size() < steps) ws.steps.resize(steps);
  LstmState state = LstmState::zeros(h);
  for (std::size_t t = 0; t < steps; ++t) {
    if (window[t].size() != d) fail(ErrorCode::dimension, "input vector does not match LSTM input size");
    step_into(window[t], state, p, ws.steps[t]);
    state.hidden = ws.steps[t].hidden;
    state.cell = ws.steps[t].cell;
  }
  readout_into(state.hidden, p, ws.y);
  const double loss = mse_loss(ws.y, target);

  ws.dy.resize(out);
  for (std::size_t k = 0; k < out; ++k) {
    ws.dy[k] = scale * 2.0 * (ws.y[k] - target[k]) / static_cast<double>(out);
  }
  ws.dh.assign(h, 0.0);
  for (std::size_t k = 0; k < out; ++k) {
    const double g = ws.dy[k];
    grads.b_readout[k] += g;
    double* gw = &grads.w_readout.values[k * h];
    const double* w = &p.w_readout.values[k * h];
    for (std::size_t u = 0; u < h; ++u) {
      gw[u] += g * state.hidden[u];
      ws.dh[u] += w[u] * g;
    }
  }

  ws.dc.assign(h, 0.0);
  ws.da_i.resize(h);
  ws.da_f.resize(h);
  ws.da_o.resize(h);
  ws.da_g.resize(h);
  ws.dz.resize(zw);
  for (std::size_t t = steps; t-- > 0;) {
    const StepCache& c = ws.steps[t];
    for (std::size_t u = 0; u < h; ++u) {
      const double i = c.input_gate[u], f = c.forget_gate[u], o = c.output_gate[u], g = c.candidate[u];
      const double ct = c.cell_tanh[u];
      const double d_o = ws.dh[u] * ct;
      const double d_c = ws.dc[u] + ws.dh[u] * o * (1.0 - ct * ct);
      ws.da_i[u] = d_c * g * i * (1.0 - i);
      ws.da_f[u] = d_c * c.cell_prev[u] * f * (1.0 - f);
      ws.da_o[u] = d_o * o * (1.0 - o);
      ws.da_g[u] = d_c * i * (1.0 - g * g);
      ws.dc[u] = d_c * f;
    }
    std::fill(ws.dz.begin(), ws.dz.end(), 0.0);
    const double* z = c.z.data();
    for (std::size_t u = 0; u < h; ++u) {
      const double ai = ws.da_i[u], af = ws.da_f[u], ao = ws.da_o[u], ag = ws.da_g[u];
      grads.b_input[u] += ai;
      grads.b_forget[u] += af;
      grads.b_output[u] += ao;
      grads.b_candidate[u] += ag;
      double* gwi = &grads.w_input.values[u * zw];
      double* gwf = &grads.w_forget.values[u * zw];
      double* gwo = &grads.w_output.values[u * zw];
      double* gwg = &grads.w_candidate.values[u * zw];
      const double* wi = &p.w_input.values[u * zw];
      const double* wf = &p.w_forget.values[u * zw];
      const double* wo = &p.w_output.values[u * zw];
      const double* wg = &p.w_candidate.values[u * zw];
      for (std::size_t j = 0; j < zw; ++j) {
        gwi[j] += ai * z[j];
        gwf[j] += af * z[j];
        gwo[j] += ao * z[j];
        gwg[j] += ag * z[j];
        ws.dz[j] += wi[j] * ai + wf[j] * af + wo[j] * ao + wg[j] * ag;
      }
    }
    for (std::size_t u = 0; u < h; ++u) ws.dh[u] = ws.dz[d + u];
  }
  return loss;
}

}  // namespace detail

/// Exact gradient of the batch-mean one-step MSE by backpropagation
/// through time.
inline LstmParams bptt_gradients(std::span<const Sequence> windows, std::span<const Vector> targets,
                                 const LstmParams& params) {
  if (windows.empty()) fail(ErrorCode::invalid_argument, "gradient batch is empty");
  if (windows.size() != targets.size()) fail(ErrorCode::dimension, "windows and targets differ in count");
  LstmParams grads = params.zeros_like();
  BpttWorkspace ws;
  const double scale = 1.0 / static_cast<double>(windows.size());
  for (std::size_t b = 0; b < windows.size(); ++b) {
    detail::accumulate_sample(windows[b], targets[b], params, scale, grads, ws);
  }
  return grads;
}

/// Batch-mean one-step MSE (fixed summation order).
inline double batch_loss(std::span<const Sequence> windows, std::span<const Vector> targets,
                         const LstmParams& params) {
  if (windows.size() != targets.size()) fail(ErrorCode::dimension, "windows and targets differ in count");
  if (windows.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    acc += mse_loss(predict_horizon(windows[b], params, 1).front(), targets[b]);
  }
  return acc / static_cast<double>(windows.size());
}

namespace detail {

/// batch_loss evaluated in long double with flat parameter `k` shifted by
/// `delta`. The finite-difference oracle uses this so that rounding in the
/// loss stays well below the truncation error of the difference quotient.
inline long double shifted_batch_loss(std::span<const Sequence> windows, std::span<const Vector> targets,
                                      const LstmParams& params, std::size_t k, long double delta) {
  using real = long double;
  const std::size_t d = params.input_size, h = params.hidden_size, out = params.output_size, zw = d + h;
  std::vector<std::vector<real>> t;
  std::size_t offset = 0;
  params.for_each_tensor([&](const Tensor& tensor) {
    std::vector<real> v(tensor.values.begin(), tensor.values.end());
    if (k >= offset && k < offset + v.size()) v[k - offset] += delta;
    offset += v.size();
    t.push_back(std::move(v));
  });
  const auto& [wi, wf, wo, wg, bi, bf, bo, bg, wr, br] =
      std::tie(t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8], t[9]);
  auto sig = [](real x) { return 1.0L / (1.0L + std::exp(-x)); };
  real acc = 0.0L;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    std::vector<real> hidden(h, 0.0L), cell(h, 0.0L), z(zw);
    for (const auto& x : windows[b]) {
      for (std::size_t j = 0; j < d; ++j) z[j] = x[j];
      for (std::size_t u = 0; u < h; ++u) z[d + u] = hidden[u];
      for (std::size_t u = 0; u < h; ++u) {
        real ai = bi[u], af = bf[u], ao = bo[u], ag = bg[u];
        for (std::size_t j = 0; j < zw; ++j) {
          ai += wi[u * zw + j] * z[j];
          af += wf[u * zw + j] * z[j];
          ao += wo[u * zw + j] * z[j];
          ag += wg[u * zw + j] * z[j];
        }
        cell[u] = sig(af) * cell[u] + sig(ai) * std::tanh(ag);
        hidden[u] = sig(ao) * std::tanh(cell[u]);
      }
    }
    real loss = 0.0L;
    for (std::size_t o = 0; o < out; ++o) {
      real y = br[o];
      for (std::size_t u = 0; u < h; ++u) y += wr[o * h + u] * hidden[u];
      const real e = y - static_cast<real>(targets[b][o]);
      loss += e * e;
    }
    acc += loss / static_cast<real>(out);
  }
  return acc / static_cast<real>(windows.size());
}

}  // namespace detail

/// Central finite differences of batch_loss for every parameter.
inline LstmParams numeric_gradients(std::span<const Sequence> windows, std::span<const Vector> targets,
                                    const LstmParams& params, double step) {
  if (!(step > 0.0)) fail(ErrorCode::invalid_argument, "finite-difference step must be positive");
  if (windows.size() != targets.size()) fail(ErrorCode::dimension, "windows and targets differ in count");
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (targets[b].size() != params.output_size) fail(ErrorCode::dimension, "target does not match LSTM output size");
    for (const auto& x : windows[b]) {
      if (x.size() != params.input_size) fail(ErrorCode::dimension, "input vector does not match LSTM input size");
    }
  }
  LstmParams grads = params.zeros_like();
  if (windows.empty()) return grads;
  for (std::size_t k = 0; k < params.parameter_count(); ++k) {
    const long double up = detail::shifted_batch_loss(windows, targets, params, k, step);
    const long double down = detail::shifted_batch_loss(windows, targets, params, k, -static_cast<long double>(step));
    grads.at(k) = static_cast<double>((up - down) / (2.0L * step));
  }
  return grads;
}

/// max over parameters of |a - n| / max(|a|, |n|, 1e-12).
inline double max_relative_error(const LstmParams& analytic, const LstmParams& numeric) {
  if (analytic.parameter_count() != numeric.parameter_count()) {
    fail(ErrorCode::dimension, "gradient structures differ");
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.parameter_count(); ++k) {
    const double a = analytic.at(k);
    const double n = numeric.at(k);
    const double denom = std::max({std::abs(a), std::abs(n), 1e-12});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

inline double grad_check(const LstmParams& params, std::span<const Sequence> windows,
                         std::span<const Vector> targets, double fd_step) {
  return max_relative_error(bptt_gradients(windows, targets, params),
                            numeric_gradients(windows, targets, params, fd_step));
}

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::optional<double> gradient_clip_norm;
  std::size_t batch_size = 32;
  std::uint64_t rng_seed = 42;
  std::size_t hidden_size = 32;

  void validate() const {
    if (!(learning_rate >= 0.0)) fail(ErrorCode::invalid_argument, "learning rate must be >= 0");
    if (batch_size < 1) fail(ErrorCode::invalid_argument, "batch size must be >= 1");
    if (hidden_size < 1) fail(ErrorCode::invalid_argument, "hidden size must be >= 1");
    if (gradient_clip_norm && !(*gradient_clip_norm > 0.0)) {
      fail(ErrorCode::invalid_argument, "gradient clip norm must be positive");
    }
  }
};

struct TrainReport {
  std::vector<double> train_mse;       // mean per-sample loss seen during the epoch
  std::vector<double> validation_mse;  // after the epoch; 0 when there is no validation data
  double wall_seconds = 0.0;
  LstmParams params;
};

/// Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases except the forget
/// gate at +1.
inline LstmParams init_params(std::size_t input, std::size_t hidden, std::size_t output,
                              std::uint64_t seed) {
  LstmParams p = LstmParams::zeros(input, hidden, output);
  Pcg32 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Tensor* t : {&p.w_input, &p.w_forget, &p.w_output, &p.w_candidate, &p.w_readout}) {
    for (double& v : t->values) v = rng.uniform(-bound, bound);
  }
  std::fill(p.b_forget.values.begin(), p.b_forget.values.end(), 1.0);
  return p;
}

inline double global_norm(const LstmParams& g) {
  double ss = 0.0;
  g.for_each_tensor([&](const Tensor& t) {
    for (double v : t.values) ss += v * v;
  });
  return std::sqrt(ss);
}

/// Rescales to norm `clip` when larger; direction is unchanged.
inline void clip_gradients(LstmParams& g, double clip) {
  const double norm = global_norm(g);
  if (norm <= clip || norm == 0.0) return;
  const double s = clip / norm;
  g.for_each_tensor([&](Tensor& t) {
    for (double& v : t.values) v *= s;
  });
}

/// Mean one-step MSE of `params` over a dataset, summed in sample order.
inline double dataset_mse(const WindowedDataset& ds, const LstmParams& params) {
  return batch_loss(ds.inputs, ds.targets, params);
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const LstmParams& shape)
      : cfg_(cfg), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

  void apply(LstmParams& params, const LstmParams& grads) {
    ++step_;
    const double lr = cfg_.learning_rate;
    auto ps = params.tensors();
    auto gs = grads.tensors();
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t t = 0; t < ps.size(); ++t) {
        auto& p = ps[t]->values;
        const auto& g = gs[t]->values;
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
      }
      return;
    }
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    for (std::size_t t = 0; t < ps.size(); ++t) {
      auto& p = ps[t]->values;
      const auto& g = gs[t]->values;
      auto& m = ms[t]->values;
      auto& v = vs[t]->values;
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_epsilon);
      }
    }
  }

 private:
  TrainConfig cfg_;
  LstmParams m_, v_;
  std::size_t step_ = 0;
};

/// Minibatch training; sample order is reshuffled each epoch from the seeded
/// generator, so the whole run is a deterministic function of its inputs.
inline TrainReport train(const WindowedDataset& train_set, const WindowedDataset& validation_set,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorCode::invalid_dataset, "training set is empty");
  const auto started = std::chrono::steady_clock::now();

  const std::size_t features = train_set.features;
  TrainReport report;
  report.params = init_params(features, cfg.hidden_size, features, cfg.rng_seed);
  Pcg32 order_rng(cfg.rng_seed, 0x5851f42d4c957f2dULL);
  Optimizer opt(cfg, report.params);
  BpttWorkspace ws;

  std::vector<std::size_t> order(train_set.size());
  std::vector<double> sample_loss(train_set.size());
  LstmParams grads = report.params.zeros_like();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      grads.for_each_tensor([](Tensor& t) { std::fill(t.values.begin(), t.values.end(), 0.0); });
      const double scale = 1.0 / static_cast<double>(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t s = order[k];
        sample_loss[s] = detail::accumulate_sample(train_set.inputs[s], train_set.targets[s],
                                                   report.params, scale, grads, ws);
      }
      if (cfg.gradient_clip_norm) clip_gradients(grads, *cfg.gradient_clip_norm);
      opt.apply(report.params, grads);
    }
    double total = 0.0;
    for (double l : sample_loss) total += l;
    report.train_mse.push_back(total / static_cast<double>(sample_loss.size()));
    report.validation_mse.push_back(validation_set.empty() ? 0.0 : dataset_mse(validation_set, report.params));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Model file: "PDML", u16 version, u32 d/h/F, tensors (binary64, row-major,
// file order), u64 FNV-1a of everything before it. All little-endian.

inline constexpr std::string_view kModelMagic = "PDML";
inline constexpr std::uint16_t kModelVersion = 1;

inline std::vector<std::uint8_t> encode_model(const LstmParams& params) {
  ByteWriter w;
  w.raw(kModelMagic);
  w.u16(kModelVersion);
  w.u32(static_cast<std::uint32_t>(params.input_size));
  w.u32(static_cast<std::uint32_t>(params.hidden_size));
  w.u32(static_cast<std::uint32_t>(params.output_size));
  params.for_each_tensor([&](const Tensor& t) {
    for (double v : t.values) w.f64(v);
  });
  auto bytes = w.bytes();
  ByteWriter tail;
  tail.u64(fnv1a64(bytes));
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  return bytes;
}

inline LstmParams decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kModelMagic.size()) fail(ErrorCode::corruption, "model file truncated");
  if (r.raw(kModelMagic.size()) != kModelMagic) fail(ErrorCode::format, "not a model file (bad magic)");
  const auto version = r.u16();
  if (version != kModelVersion) {
    fail(ErrorCode::version, "unsupported model version " + std::to_string(version));
  }
  const std::size_t d = r.u32(), h = r.u32(), f = r.u32();
  if (d == 0 || h == 0 || f == 0 || d > 4096 || h > 4096 || f > 4096) {
    fail(ErrorCode::corruption, "model dimensions out of range");
  }
  const std::size_t payload = LstmParams::expected_count(d, h, f) * 8;
  if (r.remaining() != payload + 8) fail(ErrorCode::corruption, "model file size does not match header");
  LstmParams p = LstmParams::zeros(d, h, f);
  p.for_each_tensor([&](Tensor& t) {
    for (double& v : t.values) v = r.f64();
  });
  const std::size_t body = r.position();
  if (r.u64() != fnv1a64(bytes.first(body))) fail(ErrorCode::corruption, "model checksum mismatch");
  return p;
}

inline std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::not_found, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::storage, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::storage, "write failed " + path.string());
}

inline void save_model(const LstmParams& params, const std::filesystem::path& path) {
  write_binary_file(path, encode_model(params));
}

inline LstmParams load_model(const std::filesystem::path& path) {
  return decode_model(read_binary_file(path));
}

}  // namespace pdm

#endif  // PDM_LSTM_HPP
