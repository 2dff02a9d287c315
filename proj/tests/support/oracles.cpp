#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fundus/kernels.hpp"

namespace fundus::oracle {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale) {
  Tensor t(shape);
  for (auto& v : t.values()) v = (rng.uniform() * 2.0 - 1.0) * scale;
  return t;
}

Tensor distinct_tensor(const Shape& shape, Rng& rng, double gap) {
  Tensor t(shape);
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  const double centre = static_cast<double>(order.size()) / 2.0;
  for (std::size_t i = 0; i < order.size(); ++i)
    t[i] = (static_cast<double>(order[i]) - centre) * gap + rng.uniform() * gap * 0.25;
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

Tensor naive_conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
                    bool same_padding) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t F = weights.dim(0), KH = weights.dim(2), KW = weights.dim(3);
  std::size_t OH, OW, pad_top = 0, pad_left = 0;
  if (same_padding) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    const long th = static_cast<long>((OH - 1) * stride + KH) - static_cast<long>(H);
    const long tw = static_cast<long>((OW - 1) * stride + KW) - static_cast<long>(W);
    pad_top = static_cast<std::size_t>(std::max(th, 0L)) / 2;
    pad_left = static_cast<std::size_t>(std::max(tw, 0L)) / 2;
  } else {
    OH = (H - KH) / stride + 1;
    OW = (W - KW) / stride + 1;
  }
  Tensor out({N, F, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double acc = bias[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < KH; ++i)
              for (std::size_t j = 0; j < KW; ++j) {
                const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad_top);
                const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad_left);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                acc += input.at(n, c, ih, iw) * weights.at(f, c, i, j);
              }
          out.at(n, f, oh, ow) = acc;
        }
  return out;
}

Tensor naive_maxpool2d(const Tensor& input, std::size_t pool, std::size_t stride) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = (H - pool) / stride + 1, OW = (W - pool) / stride + 1;
  Tensor out({N, C, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < pool; ++i)
            for (std::size_t j = 0; j < pool; ++j) best = std::max(best, input.at(n, c, oh * stride + i, ow * stride + j));
          out.at(n, c, oh, ow) = best;
        }
  return out;
}

Tensor naive_global_avg_pool(const Tensor& input) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Tensor out({N, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) sum += input.at(n, c, h, w);
      out[n * C + c] = sum / static_cast<double>(H * W);
    }
  return out;
}

Tensor naive_dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const std::size_t N = input.dim(0), D = input.dim(1), M = weights.dim(1);
  Tensor out({N, M});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < M; ++m) {
      double acc = bias[m];
      for (std::size_t d = 0; d < D; ++d) acc += input[n * D + d] * weights[d * M + m];
      out[n * M + m] = acc;
    }
  return out;
}

train::MetricsReport brute_force_metrics(const std::vector<int>& labels, const std::vector<int>& predictions) {
  train::MetricsReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1 && predictions[i] == 1) ++r.confusion.tp;
    if (labels[i] == 0 && predictions[i] == 0) ++r.confusion.tn;
    if (labels[i] == 0 && predictions[i] == 1) ++r.confusion.fp;
    if (labels[i] == 1 && predictions[i] == 0) ++r.confusion.fn;
  }
  auto score = [](double tp, double fp, double fn) {
    train::ClassScores s;
    s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    s.sensitivity = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    s.f1 = s.precision + s.sensitivity > 0 ? 2 * s.precision * s.sensitivity / (s.precision + s.sensitivity) : 0.0;
    return s;
  };
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += labels[i] == predictions[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  const auto& c = r.confusion;
  r.macular_degeneration = score(double(c.tp), double(c.fp), double(c.fn));
  r.healthy = score(double(c.tn), double(c.fn), double(c.fp));
  return r;
}

nn::ParamStore random_params(const nn::LayerSpec& spec, const Shape& per_sample_input, Rng& rng) {
  nn::ParamStore store;
  for (const auto& slot : nn::param_slots(spec, per_sample_input)) {
    Tensor t = random_tensor(slot.shape, rng);
    if (slot.role == nn::ParamRole::running_var)
      for (auto& v : t.values()) v = 0.5 + std::abs(v);
    if (slot.role == nn::ParamRole::gamma)
      for (auto& v : t.values()) v = 0.5 + 0.5 * std::abs(v);
    store.add(slot.name, std::move(t), slot.trainable());
  }
  return store;
}

namespace {

void scan_kinks(const nn::TapeEntry& tape, double& margin) {
  if (tape.kind == nn::LayerKind::relu)
    for (double v : tape.input.values()) margin = std::min(margin, std::abs(v));
  if (tape.kind == nn::LayerKind::residual_block_v1)
    for (double v : tape.saved.values()) margin = std::min(margin, std::abs(v));
  for (const auto& sub : {&tape.pre, &tape.main, &tape.shortcut})
    for (const auto& e : *sub) scan_kinks(e, margin);
}

void scan_gains(const nn::TapeEntry& tape, double& gain) {
  if (tape.kind == nn::LayerKind::batchnorm)
    for (double g : tape.inv_std) gain = std::max(gain, g);
  for (const auto& sub : {&tape.pre, &tape.main, &tape.shortcut})
    for (const auto& e : *sub) scan_gains(e, gain);
}

}  // namespace

double kink_margin(const nn::TapeEntry& tape) {
  double margin = std::numeric_limits<double>::infinity();
  scan_kinks(tape, margin);
  return margin;
}

double batchnorm_gain(const nn::TapeEntry& tape) {
  double gain = 0.0;
  scan_gains(tape, gain);
  return gain;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double projected(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

void record(GradCheckResult& res, double analytic, double numeric, const std::string& what) {
  ++res.checked;
  if (std::abs(analytic) < 1e-12) {
    ++res.exact_zeros;
    res.max_zero_residual = std::max(res.max_zero_residual, std::abs(numeric));
    return;
  }
  const double e = relative_error(analytic, numeric);
  if (res.worst.empty() || e > res.max_rel_error) {
    res.max_rel_error = e;
    res.worst = what + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
  }
}

}  // namespace

GradCheckResult check_layer_gradients(const nn::LayerSpec& spec, const nn::ParamStore& params, const Tensor& input,
                                      nn::Mode mode, const Tensor& projection, double h) {
  nn::TapeEntry tape;
  nn::layer_forward(spec, params, input, mode, &tape, nullptr);
  const auto vjp = nn::layer_vjp(spec, params, tape, projection);

  auto f = [&](const nn::ParamStore& p, const Tensor& x) {
    return projected(nn::layer_forward(spec, p, x, mode, nullptr, nullptr), projection);
  };

  GradCheckResult res;
  Tensor x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(params, x);
    x[i] = keep - h;
    const double down = f(params, x);
    x[i] = keep;
    record(res, vjp.grad_input[i], (up - down) / (2 * h), "input[" + std::to_string(i) + "]");
  }

  nn::ParamStore p = params;
  for (auto& entry : p.entries()) {
    if (!entry.trainable) continue;
    const auto it = vjp.grad_params.find(entry.name);
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double keep = entry.value[i];
      entry.value[i] = keep + h;
      const double up = f(p, input);
      entry.value[i] = keep - h;
      const double down = f(p, input);
      entry.value[i] = keep;
      const double analytic = it == vjp.grad_params.end() ? 0.0 : it->second[i];
      record(res, analytic, (up - down) / (2 * h), entry.name + "[" + std::to_string(i) + "]");
    }
  }
  return res;
}

GradCheckResult check_softmax_ce_gradients(const Tensor& logits, const std::vector<std::size_t>& labels, double h) {
  const auto analytic = nn::softmax_cross_entropy(logits, labels);
  GradCheckResult res;
  Tensor z = logits;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z[i];
    z[i] = keep + h;
    const double up = nn::softmax_cross_entropy(z, labels).loss;
    z[i] = keep - h;
    const double down = nn::softmax_cross_entropy(z, labels).loss;
    z[i] = keep;
    record(res, analytic.grad_logits[i], (up - down) / (2 * h), "logits[" + std::to_string(i) + "]");
  }
  return res;
}

}  // namespace fundus::oracle
