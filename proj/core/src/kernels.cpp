#include "fundus/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fundus/error.hpp"

namespace fundus::nn {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                     shape_string(t.shape()));
}

using index_t = std::ptrdiff_t;

// Range of output positions o for which o * stride + k - pad lands inside [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t pad,
                                                std::size_t stride) {
  const index_t offset = static_cast<index_t>(k) - static_cast<index_t>(pad);
  const index_t s = static_cast<index_t>(stride);
  index_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  // o * s + offset <= in - 1
  const index_t top = static_cast<index_t>(in) - 1 - offset;
  index_t hi = top < 0 ? 0 : top / s + 1;
  hi = std::min<index_t>(hi, static_cast<index_t>(out));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (kernel == 0) throw std::invalid_argument("kernel must be >= 1");
  if (padding == Padding::valid) {
    if (kernel > in)
      throw ShapeError("kernel " + std::to_string(kernel) + " exceeds input extent " + std::to_string(in));
    return {(in - kernel) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
                      Padding padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t filters = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != channels)
    throw ShapeError("conv2d input " + shape_string(input.shape()) + " does not match weights " +
                     shape_string(weights.shape()));
  if (bias.rank() != 1 || bias.dim(0) != filters)
    throw ShapeError("conv2d bias " + shape_string(bias.shape()) + " does not match weights " +
                     shape_string(weights.shape()));
  const auto gh = conv_axis(height, kh, stride, padding);
  const auto gw = conv_axis(width, kw, stride, padding);

  Tensor out({n_batch, filters, gh.out, gw.out});
  const double* in = input.data().data();
  const double* w = weights.data().data();
  double* o = out.data().data();
  const std::size_t in_plane = height * width, out_plane = gh.out * gw.out;

  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t f = 0; f < filters; ++f) {
      double* dst = o + (n * filters + f) * out_plane;
      std::fill(dst, dst + out_plane, bias[f]);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* src = in + (n * channels + c) * in_plane;
        for (std::size_t i = 0; i < kh; ++i) {
          const auto [oh_lo, oh_hi] = valid_range(gh.out, height, i, gh.pad_before, stride);
          for (std::size_t j = 0; j < kw; ++j) {
            const double wv = w[((f * channels + c) * kh + i) * kw + j];
            const auto [ow_lo, ow_hi] = valid_range(gw.out, width, j, gw.pad_before, stride);
            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::size_t ih = oh * stride + i - gh.pad_before;
              const double* row = src + ih * width;
              double* orow = dst + oh * gw.out;
              if (stride == 1) {
                const double* r = row + (ow_lo + j - gw.pad_before);
                double* o_ = orow + ow_lo;
                for (std::size_t t = 0; t < ow_hi - ow_lo; ++t) o_[t] += wv * r[t];
              } else {
                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
                  orow[ow] += wv * row[ow * stride + j - gw.pad_before];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, std::size_t stride, Padding padding,
                            const Tensor& upstream) {
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t filters = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  const auto gh = conv_axis(height, kh, stride, padding);
  const auto gw = conv_axis(width, kw, stride, padding);
  if (upstream.shape() != Shape{n_batch, filters, gh.out, gw.out})
    throw ShapeError("conv2d upstream " + shape_string(upstream.shape()) + " does not match forward output " +
                     shape_string({n_batch, filters, gh.out, gw.out}));

  Conv2dGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({filters})};
  const double* in = input.data().data();
  const double* w = weights.data().data();
  const double* up = upstream.data().data();
  double* gin = g.input.data().data();
  double* gw_ = g.weights.data().data();
  const std::size_t in_plane = height * width, out_plane = gh.out * gw.out;

  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t f = 0; f < filters; ++f) {
      const double* u = up + (n * filters + f) * out_plane;
      double bsum = 0.0;
      for (std::size_t p = 0; p < out_plane; ++p) bsum += u[p];
      g.bias[f] += bsum;
      for (std::size_t c = 0; c < channels; ++c) {
        const double* src = in + (n * channels + c) * in_plane;
        double* gsrc = gin + (n * channels + c) * in_plane;
        for (std::size_t i = 0; i < kh; ++i) {
          const auto [oh_lo, oh_hi] = valid_range(gh.out, height, i, gh.pad_before, stride);
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t widx = ((f * channels + c) * kh + i) * kw + j;
            const double wv = w[widx];
            const auto [ow_lo, ow_hi] = valid_range(gw.out, width, j, gw.pad_before, stride);
            double acc = 0.0;
            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::size_t ih = oh * stride + i - gh.pad_before;
              const double* urow = u + oh * gw.out;
              if (stride == 1) {
                const std::size_t first = ih * width + ow_lo + j - gw.pad_before;
                const double* r = src + first;
                double* gr = gsrc + first;
                const double* ur = urow + ow_lo;
                for (std::size_t t = 0; t < ow_hi - ow_lo; ++t) {
                  acc += ur[t] * r[t];
                  gr[t] += wv * ur[t];
                }
              } else {
                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                  const std::size_t iw = ow * stride + j - gw.pad_before;
                  acc += urow[ow] * src[ih * width + iw];
                  gsrc[ih * width + iw] += wv * urow[ow];
                }
              }
            }
            gw_[widx] += acc;
          }
        }
      }
    }
  }
  return g;
}

MaxPoolResult maxpool2d_forward(const Tensor& input, std::size_t pool, std::size_t stride) {
  require_rank(input, 4, "maxpool2d input");
  if (pool == 0 || stride == 0) throw std::invalid_argument("maxpool2d pool and stride must be >= 1");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  if (pool > height || pool > width)
    throw ShapeError("maxpool2d pool " + std::to_string(pool) + " larger than input " + shape_string(input.shape()));
  const std::size_t oh_n = (height - pool) / stride + 1, ow_n = (width - pool) / stride + 1;

  MaxPoolResult r{Tensor({n_batch, channels, oh_n, ow_n}), {}};
  r.argmax.resize(r.output.size());
  const auto in = input.data();
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n_batch * channels; ++plane) {
    const std::size_t base = plane * height * width;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow, ++k) {
        std::size_t best = base + oh * stride * width + ow * stride;
        for (std::size_t i = 0; i < pool; ++i) {
          for (std::size_t j = 0; j < pool; ++j) {
            const std::size_t idx = base + (oh * stride + i) * width + ow * stride + j;
            if (in[idx] > in[best]) best = idx;
          }
        }
        r.output[k] = in[best];
        r.argmax[k] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax, const Tensor& upstream) {
  if (upstream.size() != argmax.size())
    throw ShapeError("maxpool2d upstream " + shape_string(upstream.shape()) + " does not match " +
                     std::to_string(argmax.size()) + " recorded windows");
  Tensor g(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) g[argmax[k]] += upstream[k];
  return g;
}

Tensor global_avg_pool_forward(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor out({n_batch, channels});
  const auto in = input.data();
  for (std::size_t nc = 0; nc < n_batch * channels; ++nc) {
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) sum += in[nc * plane + p];
    out[nc] = sum / static_cast<double>(plane);
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& upstream) {
  if (input_shape.size() != 4 || upstream.shape() != Shape{input_shape[0], input_shape[1]})
    throw ShapeError("global_avg_pool upstream " + shape_string(upstream.shape()) + " does not match input " +
                     shape_string(input_shape));
  const std::size_t plane = input_shape[2] * input_shape[3];
  Tensor g(input_shape);
  for (std::size_t nc = 0; nc < upstream.size(); ++nc) {
    const double v = upstream[nc] / static_cast<double>(plane);
    for (std::size_t p = 0; p < plane; ++p) g[nc * plane + p] = v;
  }
  return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t n_batch = input.dim(0), in_dim = input.dim(1), out_dim = weights.dim(1);
  if (weights.dim(0) != in_dim)
    throw ShapeError("dense input " + shape_string(input.shape()) + " does not match weights " +
                     shape_string(weights.shape()));
  if (bias.rank() != 1 || bias.dim(0) != out_dim)
    throw ShapeError("dense bias " + shape_string(bias.shape()) + " does not match weights " +
                     shape_string(weights.shape()));
  Tensor out({n_batch, out_dim});
  for (std::size_t n = 0; n < n_batch; ++n) {
    double* o = &out[n * out_dim];
    for (std::size_t m = 0; m < out_dim; ++m) o[m] = bias[m];
    for (std::size_t d = 0; d < in_dim; ++d) {
      const double x = input[n * in_dim + d];
      const double* w = weights.data().data() + d * out_dim;
      for (std::size_t m = 0; m < out_dim; ++m) o[m] += x * w[m];
    }
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream) {
  const std::size_t n_batch = input.dim(0), in_dim = input.dim(1), out_dim = weights.dim(1);
  if (upstream.shape() != Shape{n_batch, out_dim})
    throw ShapeError("dense upstream " + shape_string(upstream.shape()) + " does not match forward output " +
                     shape_string({n_batch, out_dim}));
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({out_dim})};
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* u = upstream.data().data() + n * out_dim;
    for (std::size_t m = 0; m < out_dim; ++m) g.bias[m] += u[m];
    for (std::size_t d = 0; d < in_dim; ++d) {
      const double x = input[n * in_dim + d];
      const double* w = weights.data().data() + d * out_dim;
      double* gw = &g.weights[d * out_dim];
      double acc = 0.0;
      for (std::size_t m = 0; m < out_dim; ++m) {
        acc += u[m] * w[m];
        gw[m] += x * u[m];
      }
      g.input[n * in_dim + d] = acc;
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  if (input.shape() != upstream.shape())
    throw ShapeError("relu upstream " + shape_string(upstream.shape()) + " does not match input " +
                     shape_string(input.shape()));
  Tensor g(input.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

BatchNormResult batchnorm_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                                  const Tensor& running_mean, const Tensor& running_var, Mode mode, double eps,
                                  double momentum) {
  require_rank(input, 4, "batchnorm input");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  for (const Tensor* p : {&gamma, &beta, &running_mean, &running_var}) {
    if (p->rank() != 1 || p->dim(0) != channels)
      throw ShapeError("batchnorm parameter " + shape_string(p->shape()) + " does not match input " +
                       shape_string(input.shape()));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("batchnorm eps must be > 0");
  for (double v : running_var.values())
    if (!(v > 0.0)) throw std::invalid_argument("batchnorm running variance must be > 0");

  BatchNormResult r{Tensor(input.shape()), Tensor(input.shape()), std::vector<double>(channels), running_mean,
                    running_var};
  const double count = static_cast<double>(n_batch * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = running_mean[c], var = running_var[c];
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t p = 0; p < plane; ++p) sum += input[(n * channels + c) * plane + p];
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = input[(n * channels + c) * plane + p] - mean;
          sq += d * d;
        }
      var = sq / count;
      r.running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * mean;
      r.running_var[c] = momentum * running_var[c] + (1.0 - momentum) * var;
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    r.inv_std[c] = inv_std;
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * channels + c) * plane + p;
        const double xhat = (input[idx] - mean) * inv_std;
        r.normalized[idx] = xhat;
        r.output[idx] = gamma[c] * xhat + beta[c];
      }
  }
  return r;
}

BatchNormGrads batchnorm_backward(const Tensor& normalized, std::span<const double> inv_std, const Tensor& gamma,
                                  Mode mode, const Tensor& upstream) {
  if (normalized.shape() != upstream.shape())
    throw ShapeError("batchnorm upstream " + shape_string(upstream.shape()) + " does not match forward output " +
                     shape_string(normalized.shape()));
  const std::size_t n_batch = normalized.dim(0), channels = normalized.dim(1),
                    plane = normalized.dim(2) * normalized.dim(3);
  const double count = static_cast<double>(n_batch * plane);
  BatchNormGrads g{Tensor(normalized.shape()), Tensor({channels}), Tensor({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_up = 0.0, sum_up_xhat = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * channels + c) * plane + p;
        sum_up += upstream[idx];
        sum_up_xhat += upstream[idx] * normalized[idx];
      }
    g.beta[c] = sum_up;
    g.gamma[c] = sum_up_xhat;
    const double scale = gamma[c] * inv_std[c];
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * channels + c) * plane + p;
        if (mode == Mode::train) {
          g.input[idx] = scale * (upstream[idx] - sum_up / count - normalized[idx] * sum_up_xhat / count);
        } else {
          g.input[idx] = scale * upstream[idx];
        }
      }
  }
  return g;
}

std::vector<double> softmax_row(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - peak);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t n_batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n_batch)
    throw ShapeError("softmax_cross_entropy got " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(logits.shape()));
  LossResult r{0.0, Tensor(logits.shape())};
  for (std::size_t n = 0; n < n_batch; ++n) {
    if (labels[n] >= classes)
      throw std::invalid_argument("label " + std::to_string(labels[n]) + " out of range for " +
                                  std::to_string(classes) + " classes");
    const std::span<const double> row = logits.data().subspan(n * classes, classes);
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - peak);
    const double log_sum = std::log(sum);
    r.loss += -(row[labels[n]] - peak - log_sum);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(row[k] - peak - log_sum);
      r.grad_logits[n * classes + k] = (p - (k == labels[n] ? 1.0 : 0.0)) / static_cast<double>(n_batch);
    }
  }
  r.loss /= static_cast<double>(n_batch);
  return r;
}

Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = stddev * rng.normal();
  return t;
}

}  // namespace fundus::nn
