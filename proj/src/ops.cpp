#include "mirn/ops.hpp"

#include <cmath>
#include <cstddef>

namespace mirn {

void Conv1dSpec::validate() const {
  if (num_filters < 1 || kernel_size < 1 || stride < 1) {
    throw ShapeError("conv1d spec fields must be >= 1");
  }
}

void Conv2dSpec::validate() const {
  if (num_filters < 1) throw ShapeError("conv2d needs at least one filter");
  if (dilation_rows < 1 || dilation_cols < 1) {
    throw ShapeError("conv2d dilation components must be >= 1");
  }
  if (kernel_rows < 1 || kernel_cols < 1 || kernel_rows % 2 == 0 ||
      kernel_cols % 2 == 0) {
    throw ShapeError("conv2d kernel must be odd-sized in both axes");
  }
}

// ---- conv1d ----

namespace {

void check_conv1d_args(const Tensor& signal, const Tensor& weights,
                       const Conv1dSpec& spec) {
  spec.validate();
  if (signal.rank() != 1) {
    throw ShapeError("conv1d signal must be rank 1, got " + signal.shape_str());
  }
  const std::size_t f = static_cast<std::size_t>(spec.num_filters);
  const std::size_t k = static_cast<std::size_t>(spec.kernel_size);
  check_shape(weights, {f, k}, "conv1d weights");
  if (signal.size() < k) {
    throw ShapeError("conv1d input too short: " +
                     std::to_string(signal.size()) + " samples < kernel " +
                     std::to_string(k));
  }
}

}  // namespace

Tensor conv1d_forward(const Tensor& signal, const Tensor& weights,
                      const Conv1dSpec& spec) {
  check_conv1d_args(signal, weights, spec);
  const std::size_t t_in = signal.size();
  const std::size_t k = static_cast<std::size_t>(spec.kernel_size);
  const std::size_t s = static_cast<std::size_t>(spec.stride);
  const std::size_t f_n = static_cast<std::size_t>(spec.num_filters);
  const std::size_t frames = (t_in - k) / s + 1;

  Tensor out({frames, f_n});
  const double* x = signal.data();
  const double* w = weights.data();
  for (std::size_t t = 0; t < frames; ++t) {
    const double* xt = x + t * s;
    for (std::size_t f = 0; f < f_n; ++f) {
      const double* wf = w + f * k;
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += wf[i] * xt[i];
      out(t, f) = acc;
    }
  }
  return out;
}

Conv1dGrads conv1d_backward(const Tensor& signal, const Tensor& weights,
                            const Conv1dSpec& spec, const Tensor& upstream) {
  check_conv1d_args(signal, weights, spec);
  const std::size_t t_in = signal.size();
  const std::size_t k = static_cast<std::size_t>(spec.kernel_size);
  const std::size_t s = static_cast<std::size_t>(spec.stride);
  const std::size_t f_n = static_cast<std::size_t>(spec.num_filters);
  const std::size_t frames = (t_in - k) / s + 1;
  check_shape(upstream, {frames, f_n}, "conv1d upstream");

  Conv1dGrads g{Tensor(signal.shape()), Tensor(weights.shape())};
  const double* x = signal.data();
  const double* w = weights.data();
  double* dx = g.signal.data();
  double* dw = g.weights.data();
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t base = t * s;
    for (std::size_t f = 0; f < f_n; ++f) {
      const double u = upstream(t, f);
      if (u == 0.0) continue;
      const double* wf = w + f * k;
      double* dwf = dw + f * k;
      for (std::size_t i = 0; i < k; ++i) {
        dx[base + i] += u * wf[i];
        dwf[i] += u * x[base + i];
      }
    }
  }
  return g;
}

namespace {

struct FrontendDims {
  std::size_t batch, samples, leads, frames, filters;
};

FrontendDims frontend_dims(const Tensor& batch, const Tensor& weights,
                           const Conv1dSpec& spec) {
  spec.validate();
  if (batch.rank() != 3) {
    throw ShapeError("frontend batch must be [B,T,L], got " + batch.shape_str());
  }
  FrontendDims d{};
  d.batch = batch.extent(0);
  d.samples = batch.extent(1);
  d.leads = batch.extent(2);
  d.filters = static_cast<std::size_t>(spec.num_filters);
  check_shape(weights, {d.filters, static_cast<std::size_t>(spec.kernel_size)},
              "frontend weights");
  if (d.samples < static_cast<std::size_t>(spec.kernel_size)) {
    throw ShapeError("frontend input too short: " + std::to_string(d.samples) +
                     " samples < kernel " + std::to_string(spec.kernel_size));
  }
  d.frames = (d.samples - static_cast<std::size_t>(spec.kernel_size)) /
                 static_cast<std::size_t>(spec.stride) +
             1;
  return d;
}

Tensor lead_slice(const Tensor& batch, std::size_t b, std::size_t lead) {
  const std::size_t samples = batch.extent(1);
  const std::size_t leads = batch.extent(2);
  Tensor s({samples});
  const double* src = batch.data() + b * samples * leads + lead;
  for (std::size_t i = 0; i < samples; ++i) s[i] = src[i * leads];
  return s;
}

}  // namespace

Tensor frontend_conv_batch(const Tensor& batch, const Tensor& weights,
                           const Conv1dSpec& spec) {
  const FrontendDims d = frontend_dims(batch, weights, spec);
  Tensor out({d.batch, d.frames, d.filters, d.leads});
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t lead = 0; lead < d.leads; ++lead) {
      const Tensor tf = conv1d_forward(lead_slice(batch, b, lead), weights, spec);
      for (std::size_t fr = 0; fr < d.frames; ++fr) {
        for (std::size_t f = 0; f < d.filters; ++f) {
          out(b, fr, f, lead) = tf(fr, f);
        }
      }
    }
  }
  return out;
}

FrontendGrads frontend_conv_batch_backward(const Tensor& batch,
                                           const Tensor& weights,
                                           const Conv1dSpec& spec,
                                           const Tensor& upstream) {
  const FrontendDims d = frontend_dims(batch, weights, spec);
  check_shape(upstream, {d.batch, d.frames, d.filters, d.leads},
              "frontend upstream");
  FrontendGrads g{Tensor(batch.shape()), Tensor(weights.shape())};
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t lead = 0; lead < d.leads; ++lead) {
      Tensor up_lead({d.frames, d.filters});
      for (std::size_t fr = 0; fr < d.frames; ++fr) {
        for (std::size_t f = 0; f < d.filters; ++f) {
          up_lead(fr, f) = upstream(b, fr, f, lead);
        }
      }
      Conv1dGrads lg =
          conv1d_backward(lead_slice(batch, b, lead), weights, spec, up_lead);
      g.weights += lg.weights;
      double* dst = g.batch.data() + b * d.samples * d.leads + lead;
      for (std::size_t i = 0; i < d.samples; ++i) {
        dst[i * d.leads] = lg.signal[i];
      }
    }
  }
  return g;
}

// ---- conv2d, dilated, zero-padded "same" ----

namespace {

struct Conv2dDims {
  std::size_t batch, h, w, c, f, kh, kw;
  bool batched;
};

Conv2dDims check_conv2d_args(const Tensor& input, const Tensor& weights,
                             const Conv2dSpec& spec) {
  spec.validate();
  if (input.rank() != 3 && input.rank() != 4) {
    throw ShapeError("conv2d input must be [H,W,C] or [B,H,W,C], got " +
                     input.shape_str());
  }
  Conv2dDims d{};
  d.batched = input.rank() == 4;
  d.batch = d.batched ? input.extent(0) : 1;
  d.h = input.extent(d.batched ? 1 : 0);
  d.w = input.extent(d.batched ? 2 : 1);
  d.c = input.extent(d.batched ? 3 : 2);
  d.f = static_cast<std::size_t>(spec.num_filters);
  d.kh = static_cast<std::size_t>(spec.kernel_rows);
  d.kw = static_cast<std::size_t>(spec.kernel_cols);
  check_shape(weights, {d.f, d.kh, d.kw, d.c}, "conv2d weights");
  return d;
}

std::vector<std::size_t> conv2d_out_shape(const Conv2dDims& d) {
  if (d.batched) return {d.batch, d.h, d.w, d.f};
  return {d.h, d.w, d.f};
}

// in-bounds kernel taps per output coordinate, ascending tap order
struct TapTable {
  std::vector<std::uint16_t> entries;  // (tap index, source coordinate) pairs
  std::vector<std::uint32_t> offsets;  // per coordinate, into entries
};

TapTable make_tap_table(std::size_t extent, std::size_t kernel, long dilation) {
  const long center = static_cast<long>(kernel) / 2;
  TapTable t;
  t.offsets.reserve(extent + 1);
  t.offsets.push_back(0);
  for (std::size_t i = 0; i < extent; ++i) {
    for (std::size_t a = 0; a < kernel; ++a) {
      const long src = static_cast<long>(i) + (static_cast<long>(a) - center) * dilation;
      if (src < 0 || src >= static_cast<long>(extent)) continue;
      t.entries.push_back(static_cast<std::uint16_t>(a));
      t.entries.push_back(static_cast<std::uint16_t>(src));
    }
    t.offsets.push_back(static_cast<std::uint32_t>(t.entries.size()));
  }
  return t;
}

}  // namespace

Tensor conv2d_dilated_forward(const Tensor& input, const Tensor& weights,
                              const Conv2dSpec& spec) {
  const Conv2dDims d = check_conv2d_args(input, weights, spec);
  Tensor out(conv2d_out_shape(d));

  const TapTable rows = make_tap_table(d.h, d.kh, spec.dilation_rows);
  const TapTable cols = make_tap_table(d.w, d.kw, spec.dilation_cols);
  const double* w = weights.data();

  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* in_b = input.data() + b * d.h * d.w * d.c;
    double* out_b = out.data() + b * d.h * d.w * d.f;
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        double* out_px = out_b + (i * d.w + j) * d.f;
        for (std::size_t f = 0; f < d.f; ++f) {
          const double* wf = w + f * d.kh * d.kw * d.c;
          double acc = 0.0;
          for (std::uint32_t r = rows.offsets[i]; r < rows.offsets[i + 1]; r += 2) {
            const std::size_t a = rows.entries[r];
            const std::size_t row = rows.entries[r + 1];
            const double* in_row = in_b + row * d.w * d.c;
            const double* w_row = wf + a * d.kw * d.c;
            for (std::uint32_t q = cols.offsets[j]; q < cols.offsets[j + 1];
                 q += 2) {
              const double* in_px = in_row + cols.entries[q + 1] * d.c;
              const double* w_tap = w_row + cols.entries[q] * d.c;
              for (std::size_t ch = 0; ch < d.c; ++ch) {
                acc += w_tap[ch] * in_px[ch];
              }
            }
          }
          out_px[f] = acc;
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_dilated_backward(const Tensor& input, const Tensor& weights,
                                    const Conv2dSpec& spec,
                                    const Tensor& upstream) {
  const Conv2dDims d = check_conv2d_args(input, weights, spec);
  if (upstream.shape() != conv2d_out_shape(d)) {
    throw ShapeError("conv2d upstream shape " + upstream.shape_str() +
                     " does not match output " +
                     shape_to_string(conv2d_out_shape(d)));
  }
  Conv2dGrads g{Tensor(input.shape()), Tensor(weights.shape())};

  const TapTable rows = make_tap_table(d.h, d.kh, spec.dilation_rows);
  const TapTable cols = make_tap_table(d.w, d.kw, spec.dilation_cols);
  const double* w = weights.data();
  double* dw = g.weights.data();

  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* in_b = input.data() + b * d.h * d.w * d.c;
    const double* up_b = upstream.data() + b * d.h * d.w * d.f;
    double* din_b = g.input.data() + b * d.h * d.w * d.c;
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        const double* up_px = up_b + (i * d.w + j) * d.f;
        for (std::size_t f = 0; f < d.f; ++f) {
          const double u = up_px[f];
          if (u == 0.0) continue;
          const double* wf = w + f * d.kh * d.kw * d.c;
          double* dwf = dw + f * d.kh * d.kw * d.c;
          for (std::uint32_t r = rows.offsets[i]; r < rows.offsets[i + 1]; r += 2) {
            const std::size_t a = rows.entries[r];
            const std::size_t row = rows.entries[r + 1];
            for (std::uint32_t q = cols.offsets[j]; q < cols.offsets[j + 1];
                 q += 2) {
              const std::size_t px =
                  (row * d.w + cols.entries[q + 1]) * d.c;
              const std::size_t tap = (a * d.kw + cols.entries[q]) * d.c;
              for (std::size_t ch = 0; ch < d.c; ++ch) {
                din_b[px + ch] += u * wf[tap + ch];
                dwf[tap + ch] += u * in_b[px + ch];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

// ---- relu ----

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  if (!x.same_shape(upstream)) {
    throw ShapeError("relu upstream shape " + upstream.shape_str() +
                     " does not match input " + x.shape_str());
  }
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  }
  return dx;
}

// ---- batch normalization ----

BatchNormState BatchNormState::init(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor::full({channels}, 1.0);
  s.beta = Tensor({channels});
  s.running_mean = Tensor({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  return s;
}

namespace {

void check_batchnorm_args(const Tensor& x, const BatchNormState& state) {
  if (x.rank() < 2) {
    throw ShapeError("batchnorm input must have rank >= 2, got " +
                     x.shape_str());
  }
  const std::size_t c = x.extent(x.rank() - 1);
  if (state.channels() != c) {
    throw ShapeError("batchnorm state has " + std::to_string(state.channels()) +
                     " channels but input has " + std::to_string(c));
  }
  if (state.epsilon <= 0.0) throw ShapeError("batchnorm epsilon must be > 0");
}

}  // namespace

BatchNormResult batchnorm_forward(const Tensor& x, const BatchNormState& state,
                                  Mode mode, BatchNormCache* cache) {
  check_batchnorm_args(x, state);
  const std::size_t c_n = state.channels();
  const std::size_t n = x.size() / c_n;  // elements per channel

  Tensor mean({c_n});
  Tensor var({c_n});
  if (mode == Mode::kTrain) {
    for (std::size_t i = 0; i < x.size(); ++i) mean[i % c_n] += x[i];
    for (std::size_t c = 0; c < c_n; ++c) mean[c] /= static_cast<double>(n);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i % c_n];
      var[i % c_n] += d * d;
    }
    for (std::size_t c = 0; c < c_n; ++c) var[c] /= static_cast<double>(n);
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor inv_std({c_n});
  for (std::size_t c = 0; c < c_n; ++c) {
    inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);
  }

  BatchNormResult r;
  r.y = Tensor(x.shape());
  Tensor x_hat(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % c_n;
    x_hat[i] = (x[i] - mean[c]) * inv_std[c];
    r.y[i] = state.gamma[c] * x_hat[i] + state.beta[c];
  }

  r.state = state;
  if (mode == Mode::kTrain) {
    const double m = state.momentum;
    for (std::size_t c = 0; c < c_n; ++c) {
      r.state.running_mean[c] = m * state.running_mean[c] + (1.0 - m) * mean[c];
      r.state.running_var[c] = m * state.running_var[c] + (1.0 - m) * var[c];
    }
  }

  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->gamma = state.gamma;
    cache->mode = mode;
  }
  return r;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache,
                                  const Tensor& upstream) {
  if (!cache.x_hat.same_shape(upstream)) {
    throw ShapeError("batchnorm upstream shape " + upstream.shape_str() +
                     " does not match forward input " + cache.x_hat.shape_str());
  }
  const std::size_t c_n = cache.gamma.size();
  const std::size_t n = upstream.size() / c_n;

  BatchNormGrads g{Tensor(upstream.shape()), Tensor({c_n}), Tensor({c_n})};
  Tensor sum_u({c_n});
  Tensor sum_ux({c_n});
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const std::size_t c = i % c_n;
    sum_u[c] += upstream[i];
    sum_ux[c] += upstream[i] * cache.x_hat[i];
  }
  g.beta = sum_u;
  g.gamma = sum_ux;

  if (cache.mode == Mode::kTrain) {
    // batch moments depend on x, so their derivative flows back too
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      const std::size_t c = i % c_n;
      g.x[i] = cache.gamma[c] * cache.inv_std[c] *
               (upstream[i] - sum_u[c] / static_cast<double>(n) -
                cache.x_hat[i] * sum_ux[c] / static_cast<double>(n));
    }
  } else {
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      const std::size_t c = i % c_n;
      g.x[i] = cache.gamma[c] * cache.inv_std[c] * upstream[i];
    }
  }
  return g;
}

// ---- global average pooling ----

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("global_avg_pool input must be [H,W,C] or [B,H,W,C], got " +
                     x.shape_str());
  }
  const bool batched = x.rank() == 4;
  const std::size_t b_n = batched ? x.extent(0) : 1;
  const std::size_t spatial = x.extent(batched ? 1 : 0) * x.extent(batched ? 2 : 1);
  const std::size_t c_n = x.extent(batched ? 3 : 2);

  Tensor out(batched ? std::vector<std::size_t>{b_n, c_n}
                     : std::vector<std::size_t>{c_n});
  for (std::size_t b = 0; b < b_n; ++b) {
    const double* xb = x.data() + b * spatial * c_n;
    double* ob = out.data() + b * c_n;
    for (std::size_t i = 0; i < spatial; ++i) {
      for (std::size_t c = 0; c < c_n; ++c) ob[c] += xb[i * c_n + c];
    }
    for (std::size_t c = 0; c < c_n; ++c) ob[c] /= static_cast<double>(spatial);
  }
  return out;
}

Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape,
                                const Tensor& upstream) {
  const bool batched = input_shape.size() == 4;
  if (!batched && input_shape.size() != 3) {
    throw ShapeError("global_avg_pool input shape must have rank 3 or 4");
  }
  const std::size_t b_n = batched ? input_shape[0] : 1;
  const std::size_t spatial = input_shape[batched ? 1 : 0] * input_shape[batched ? 2 : 1];
  const std::size_t c_n = input_shape[batched ? 3 : 2];
  if (upstream.size() != b_n * c_n) {
    throw ShapeError("global_avg_pool upstream shape " + upstream.shape_str() +
                     " does not match pooled output");
  }

  Tensor dx(input_shape);
  for (std::size_t b = 0; b < b_n; ++b) {
    const double* ub = upstream.data() + b * c_n;
    double* db = dx.data() + b * spatial * c_n;
    for (std::size_t i = 0; i < spatial; ++i) {
      for (std::size_t c = 0; c < c_n; ++c) {
        db[i * c_n + c] = ub[c] / static_cast<double>(spatial);
      }
    }
  }
  return dx;
}

// ---- dense + softmax ----

Tensor dense_forward(const Tensor& features, const Tensor& weights,
                     const Tensor& bias) {
  if (features.rank() != 1 || weights.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("dense expects features [C], weights [O,C], bias [O]");
  }
  const std::size_t o_n = weights.extent(0);
  const std::size_t c_n = weights.extent(1);
  if (features.size() != c_n || bias.size() != o_n) {
    throw ShapeError("dense operand extents disagree: features " +
                     features.shape_str() + ", weights " + weights.shape_str() +
                     ", bias " + bias.shape_str());
  }
  Tensor logits({o_n});
  for (std::size_t o = 0; o < o_n; ++o) {
    double acc = bias[o];
    for (std::size_t c = 0; c < c_n; ++c) acc += weights(o, c) * features[c];
    logits[o] = acc;
  }
  return logits;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1 && logits.rank() != 2) {
    throw ShapeError("softmax input must be rank 1 or 2, got " +
                     logits.shape_str());
  }
  const std::size_t rows = logits.rank() == 2 ? logits.extent(0) : 1;
  const std::size_t cols = logits.extent(logits.rank() - 1);

  Tensor probs(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.data() + r * cols;
    double* out = probs.data() + r * cols;
    double mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      denom += out[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[c] /= denom;
  }
  return probs;
}

DenseSoftmaxResult dense_softmax_xent(const Tensor& features,
                                      const Tensor& weights, const Tensor& bias,
                                      int label) {
  const Tensor logits = dense_forward(features, weights, bias);
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ShapeError("class label " + std::to_string(label) + " out of range");
  }
  DenseSoftmaxResult r;
  r.probs = softmax(logits);

  // -log p[label] via logsumexp of the shifted logits
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    denom += std::exp(logits[i] - mx);
  }
  r.loss = std::log(denom) - (logits[static_cast<std::size_t>(label)] - mx);
  return r;
}

DenseSoftmaxGrads dense_softmax_xent_backward(const Tensor& features,
                                              const Tensor& weights,
                                              const Tensor& probs, int label,
                                              double upstream) {
  const std::size_t o_n = weights.extent(0);
  const std::size_t c_n = weights.extent(1);
  if (probs.size() != o_n || features.size() != c_n) {
    throw ShapeError("dense_softmax backward operand extents disagree");
  }
  DenseSoftmaxGrads g{Tensor(features.shape()), Tensor(weights.shape()),
                      Tensor({o_n})};
  for (std::size_t o = 0; o < o_n; ++o) {
    const double dlogit =
        (probs[o] - (static_cast<std::size_t>(label) == o ? 1.0 : 0.0)) *
        upstream;
    g.bias[o] = dlogit;
    for (std::size_t c = 0; c < c_n; ++c) {
      g.weights(o, c) = dlogit * features[c];
      g.features[c] += dlogit * weights(o, c);
    }
  }
  return g;
}

}  // namespace mirn
