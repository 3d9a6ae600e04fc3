#include "mirn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace mirn {

GradTape::ValueId GradTape::leaf(Tensor value) {
  if (value.empty()) throw ShapeError("cannot push an empty tensor on the tape");
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

GradTape::ValueId GradTape::record(std::vector<ValueId> inputs, Tensor output,
                                   BackwardFn backward) {
  for (ValueId id : inputs) {
    if (id >= values_.size()) throw ShapeError("tape input id out of range");
  }
  const ValueId out = leaf(std::move(output));
  ops_.push_back(Op{std::move(inputs), out, std::move(backward)});
  return out;
}

std::vector<Tensor> GradTape::backward(ValueId root, Tensor seed) const {
  if (root >= values_.size()) throw ShapeError("tape root id out of range");
  if (!seed.same_shape(values_[root])) {
    throw ShapeError("backward seed shape " + seed.shape_str() +
                     " does not match root value " + values_[root].shape_str());
  }
  std::vector<Tensor> grads(values_.size());
  grads[root] = std::move(seed);

  std::vector<const Tensor*> inputs;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const Tensor& upstream = grads[it->output];
    if (upstream.empty()) continue;  // no gradient reached this op
    inputs.clear();
    for (ValueId id : it->inputs) inputs.push_back(&values_[id]);
    std::vector<Tensor> in_grads = it->fn(upstream, inputs);
    if (in_grads.size() != it->inputs.size()) {
      throw ShapeError("tape op produced " + std::to_string(in_grads.size()) +
                       " gradients for " + std::to_string(it->inputs.size()) +
                       " inputs");
    }
    for (std::size_t k = 0; k < it->inputs.size(); ++k) {
      Tensor& slot = grads[it->inputs[k]];
      if (slot.empty()) {
        slot = std::move(in_grads[k]);
      } else {
        slot += in_grads[k];
      }
    }
  }
  return grads;
}

// ---- taped ops ----

GradTape::ValueId tape_conv1d(GradTape& t, GradTape::ValueId signal,
                              GradTape::ValueId weights, const Conv1dSpec& spec) {
  Tensor y = conv1d_forward(t.value(signal), t.value(weights), spec);
  return t.record(
      {signal, weights}, std::move(y),
      [spec](const Tensor& up, const std::vector<const Tensor*>& in) {
        Conv1dGrads g = conv1d_backward(*in[0], *in[1], spec, up);
        return std::vector<Tensor>{std::move(g.signal), std::move(g.weights)};
      });
}

GradTape::ValueId tape_frontend_conv(GradTape& t, GradTape::ValueId batch,
                                     GradTape::ValueId weights,
                                     const Conv1dSpec& spec) {
  Tensor y = frontend_conv_batch(t.value(batch), t.value(weights), spec);
  return t.record(
      {batch, weights}, std::move(y),
      [spec](const Tensor& up, const std::vector<const Tensor*>& in) {
        FrontendGrads g = frontend_conv_batch_backward(*in[0], *in[1], spec, up);
        return std::vector<Tensor>{std::move(g.batch), std::move(g.weights)};
      });
}

GradTape::ValueId tape_conv2d(GradTape& t, GradTape::ValueId input,
                              GradTape::ValueId weights, const Conv2dSpec& spec) {
  Tensor y = conv2d_dilated_forward(t.value(input), t.value(weights), spec);
  return t.record(
      {input, weights}, std::move(y),
      [spec](const Tensor& up, const std::vector<const Tensor*>& in) {
        Conv2dGrads g = conv2d_dilated_backward(*in[0], *in[1], spec, up);
        return std::vector<Tensor>{std::move(g.input), std::move(g.weights)};
      });
}

GradTape::ValueId tape_relu(GradTape& t, GradTape::ValueId x) {
  Tensor y = relu(t.value(x));
  return t.record({x}, std::move(y),
                  [](const Tensor& up, const std::vector<const Tensor*>& in) {
                    return std::vector<Tensor>{relu_backward(*in[0], up)};
                  });
}

GradTape::ValueId tape_add(GradTape& t, GradTape::ValueId a, GradTape::ValueId b) {
  const Tensor& ta = t.value(a);
  const Tensor& tb = t.value(b);
  if (!ta.same_shape(tb)) {
    throw ShapeError("add operands differ: " + ta.shape_str() + " vs " +
                     tb.shape_str());
  }
  Tensor y = ta;
  y += tb;
  return t.record({a, b}, std::move(y),
                  [](const Tensor& up, const std::vector<const Tensor*>&) {
                    return std::vector<Tensor>{up, up};
                  });
}

GradTape::ValueId tape_batchnorm(GradTape& t, GradTape::ValueId x,
                                 GradTape::ValueId gamma, GradTape::ValueId beta,
                                 const BatchNormState& stats, Mode mode,
                                 BatchNormState* updated) {
  BatchNormState state = stats;
  state.gamma = t.value(gamma);
  state.beta = t.value(beta);

  auto cache = std::make_shared<BatchNormCache>();
  BatchNormResult r = batchnorm_forward(t.value(x), state, mode, cache.get());
  if (updated) *updated = std::move(r.state);

  return t.record({x, gamma, beta}, std::move(r.y),
                  [cache = std::move(cache)](
                      const Tensor& up, const std::vector<const Tensor*>&) {
                    BatchNormGrads g = batchnorm_backward(*cache, up);
                    return std::vector<Tensor>{std::move(g.x), std::move(g.gamma),
                                               std::move(g.beta)};
                  });
}

GradTape::ValueId tape_global_avg_pool(GradTape& t, GradTape::ValueId x) {
  Tensor y = global_avg_pool(t.value(x));
  return t.record({x}, std::move(y),
                  [](const Tensor& up, const std::vector<const Tensor*>& in) {
                    return std::vector<Tensor>{
                        global_avg_pool_backward(in[0]->shape(), up)};
                  });
}

namespace {

Tensor row_of(const Tensor& m, std::size_t r) {
  const std::size_t cols = m.extent(1);
  Tensor out({cols});
  for (std::size_t c = 0; c < cols; ++c) out[c] = m(r, c);
  return out;
}

}  // namespace

GradTape::ValueId tape_dense(GradTape& t, GradTape::ValueId features,
                             GradTape::ValueId weights, GradTape::ValueId bias) {
  const Tensor& x = t.value(features);
  const Tensor& w = t.value(weights);
  const Tensor& b = t.value(bias);
  if (x.rank() != 2) {
    throw ShapeError("taped dense expects features [B,C], got " + x.shape_str());
  }
  const std::size_t b_n = x.extent(0);
  const std::size_t o_n = w.extent(0);
  Tensor logits({b_n, o_n});
  for (std::size_t r = 0; r < b_n; ++r) {
    const Tensor row_logits = dense_forward(row_of(x, r), w, b);
    for (std::size_t o = 0; o < o_n; ++o) logits(r, o) = row_logits[o];
  }
  return t.record(
      {features, weights, bias}, std::move(logits),
      [](const Tensor& up, const std::vector<const Tensor*>& in) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        const std::size_t b_n = x.extent(0);
        const std::size_t c_n = x.extent(1);
        const std::size_t o_n = w.extent(0);
        Tensor dx(x.shape());
        Tensor dw(w.shape());
        Tensor db({o_n});
        for (std::size_t r = 0; r < b_n; ++r) {
          for (std::size_t o = 0; o < o_n; ++o) {
            const double u = up(r, o);
            db[o] += u;
            for (std::size_t c = 0; c < c_n; ++c) {
              dw(o, c) += u * x(r, c);
              dx(r, c) += u * w(o, c);
            }
          }
        }
        return std::vector<Tensor>{std::move(dx), std::move(dw), std::move(db)};
      });
}

GradTape::ValueId tape_softmax_xent_mean(GradTape& t, GradTape::ValueId logits,
                                         std::vector<int> labels,
                                         Tensor* probs_out) {
  const Tensor& z = t.value(logits);
  if (z.rank() != 2) {
    throw ShapeError("softmax_xent expects logits [B,O], got " + z.shape_str());
  }
  const std::size_t b_n = z.extent(0);
  const std::size_t o_n = z.extent(1);
  if (labels.size() != b_n) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b_n) + " examples");
  }

  Tensor probs = softmax(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < b_n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= o_n) {
      throw ShapeError("class label " + std::to_string(label) + " out of range");
    }
    double mx = z(r, 0);
    for (std::size_t o = 1; o < o_n; ++o) mx = std::max(mx, z(r, o));
    double denom = 0.0;
    for (std::size_t o = 0; o < o_n; ++o) denom += std::exp(z(r, o) - mx);
    loss += std::log(denom) - (z(r, static_cast<std::size_t>(label)) - mx);
  }
  loss /= static_cast<double>(b_n);
  if (probs_out) *probs_out = probs;

  return t.record(
      {logits}, Tensor::scalar(loss),
      [probs = std::move(probs), labels = std::move(labels)](
          const Tensor& up, const std::vector<const Tensor*>&) {
        const std::size_t b_n = probs.extent(0);
        const std::size_t o_n = probs.extent(1);
        const double scale = up[0] / static_cast<double>(b_n);
        Tensor dz(probs.shape());
        for (std::size_t r = 0; r < b_n; ++r) {
          for (std::size_t o = 0; o < o_n; ++o) {
            const double onehot =
                static_cast<std::size_t>(labels[r]) == o ? 1.0 : 0.0;
            dz(r, o) = (probs(r, o) - onehot) * scale;
          }
        }
        return std::vector<Tensor>{std::move(dz)};
      });
}

GradTape::ValueId tape_stack_depth(GradTape& t,
                                   const std::vector<GradTape::ValueId>& mats) {
  if (mats.empty()) throw ShapeError("stack_depth needs at least one input");
  const Tensor& first = t.value(mats[0]);
  if (first.rank() != 2) {
    throw ShapeError("stack_depth inputs must be rank 2, got " +
                     first.shape_str());
  }
  const std::size_t h = first.extent(0);
  const std::size_t w = first.extent(1);
  const std::size_t l_n = mats.size();

  Tensor out({1, h, w, l_n});
  for (std::size_t l = 0; l < l_n; ++l) {
    const Tensor& m = t.value(mats[l]);
    if (!m.same_shape(first)) {
      throw ShapeError("stack_depth inputs must share one shape");
    }
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) out(0, i, j, l) = m(i, j);
    }
  }
  return t.record(
      mats, std::move(out),
      [h, w, l_n](const Tensor& up, const std::vector<const Tensor*>&) {
        std::vector<Tensor> grads;
        grads.reserve(l_n);
        for (std::size_t l = 0; l < l_n; ++l) {
          Tensor g({h, w});
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) g(i, j) = up(0, i, j, l);
          }
          grads.push_back(std::move(g));
        }
        return grads;
      });
}

}  // namespace mirn
