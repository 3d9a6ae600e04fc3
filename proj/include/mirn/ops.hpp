#pragma once

#include <cstddef>
#include <vector>

#include "mirn/tensor.hpp"

namespace mirn {

enum class Mode { kTrain, kInfer };

struct Conv1dSpec {
  int num_filters = 20;
  int kernel_size = 100;  // samples
  int stride = 50;        // samples; valid (unpadded) convolution
  void validate() const;
};

// 2D convolution, zero-padded "same": output spatial extents always equal the
// input's, even when a dilation span exceeds the input (out-of-bounds taps
// read zero).
struct Conv2dSpec {
  int num_filters = 7;
  int kernel_rows = 3;  // odd
  int kernel_cols = 3;  // odd
  int dilation_rows = 1;
  int dilation_cols = 1;
  void validate() const;
};

// ---- 1-D convolution over a single lead ----
// signal [T], weights [F,K] -> [frames,F], frames = (T-K)/stride + 1, no bias
Tensor conv1d_forward(const Tensor& signal, const Tensor& weights,
                      const Conv1dSpec& spec);

struct Conv1dGrads {
  Tensor signal;
  Tensor weights;
};
Conv1dGrads conv1d_backward(const Tensor& signal, const Tensor& weights,
                            const Conv1dSpec& spec, const Tensor& upstream);

// batch [B,T,L] with one weight array shared by every lead -> [B,frames,F,L];
// the weight gradient sums the contributions of all (example, lead) uses
Tensor frontend_conv_batch(const Tensor& batch, const Tensor& weights,
                           const Conv1dSpec& spec);
struct FrontendGrads {
  Tensor batch;
  Tensor weights;
};
FrontendGrads frontend_conv_batch_backward(const Tensor& batch,
                                           const Tensor& weights,
                                           const Conv1dSpec& spec,
                                           const Tensor& upstream);

// ---- dilated 2-D convolution ----
// input [H,W,C] or [B,H,W,C]; weights [F,kh,kw,C] -> [(B,)H,W,F]
Tensor conv2d_dilated_forward(const Tensor& input, const Tensor& weights,
                              const Conv2dSpec& spec);

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
};
Conv2dGrads conv2d_dilated_backward(const Tensor& input, const Tensor& weights,
                                    const Conv2dSpec& spec,
                                    const Tensor& upstream);

// ---- ReLU ----
Tensor relu(const Tensor& x);
// subgradient at 0 is 0
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

// ---- batch normalization over the trailing (channel) axis ----
struct BatchNormState {
  Tensor gamma;         // [C] scale
  Tensor beta;          // [C] shift
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.99;
  double epsilon = 1e-3;

  static BatchNormState init(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

// Saved forward values sufficient for the backward pass.
struct BatchNormCache {
  Tensor x_hat;    // normalized input, same shape as x
  Tensor inv_std;  // [C]
  Tensor gamma;    // [C]
  Mode mode = Mode::kTrain;
};

// Statistics are taken over every axis but the last. Train mode normalizes
// with batch moments (biased variance) and returns a state with updated
// running moments; infer mode normalizes with the running moments and returns
// the state unchanged.
struct BatchNormResult {
  Tensor y;
  BatchNormState state;
};
BatchNormResult batchnorm_forward(const Tensor& x, const BatchNormState& state,
                                  Mode mode, BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor x;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const BatchNormCache& cache,
                                  const Tensor& upstream);

// ---- global average pooling ----
// [H,W,C] -> [C] or [B,H,W,C] -> [B,C]
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape,
                                const Tensor& upstream);

// ---- dense layer + softmax (+ cross-entropy) ----
// features [C], weights [O,C], bias [O] -> logits [O]
Tensor dense_forward(const Tensor& features, const Tensor& weights,
                     const Tensor& bias);

// Max-shifted exponentiation; rank-1 input or rank-2 row-wise.
Tensor softmax(const Tensor& logits);

struct DenseSoftmaxResult {
  Tensor probs;
  double loss = 0.0;  // -log probs[label]
};
DenseSoftmaxResult dense_softmax_xent(const Tensor& features,
                                      const Tensor& weights, const Tensor& bias,
                                      int label);

struct DenseSoftmaxGrads {
  Tensor features;
  Tensor weights;
  Tensor bias;
};
DenseSoftmaxGrads dense_softmax_xent_backward(const Tensor& features,
                                              const Tensor& weights,
                                              const Tensor& probs, int label,
                                              double upstream);

}  // namespace mirn
