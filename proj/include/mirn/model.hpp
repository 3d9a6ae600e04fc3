#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mirn/ops.hpp"
#include "mirn/tape.hpp"

namespace mirn {

inline constexpr std::size_t kNumLeads = 12;
inline constexpr std::size_t kSegmentSamples = 500;  // 5 s at 100 Hz
inline constexpr std::size_t kNumClasses = 7;
inline constexpr std::size_t kNumChannels = 7;  // filters of every 2-D conv
inline constexpr std::size_t kNumResidualConvs = 6;
inline constexpr std::size_t kNumBatchNorms = 7;

enum class ClassLabel : std::uint8_t {
  kHealthy = 0,
  kAnterior = 1,
  kAnteroLateral = 2,
  kAnteroSeptal = 3,
  kInferior = 4,
  kInferoLateral = 5,
  kInferoPosteroLateral = 6,
};

const std::array<std::string, kNumClasses>& class_names();
std::string_view class_name(ClassLabel label);
std::optional<ClassLabel> class_from_name(std::string_view name);

// Dilation rates of the six residual convolutions followed by the closing
// convolution. The opening convolution is undilated.
struct DilationSchedule {
  std::array<std::pair<int, int>, 7> rates{
      {{1, 1}, {1, 1}, {2, 2}, {2, 2}, {4, 4}, {8, 8}, {16, 16}}};
};

struct ModelParams {
  Tensor frontend_w;                 // [20,100], one copy shared by all leads
  Tensor conv_in_w;                  // [7,3,3,12]
  std::array<Tensor, 6> res_conv_w;  // [7,3,3,7] each
  Tensor final_conv_w;               // [7,3,3,7]
  std::array<BatchNormState, 7> bn;  // two per block, one after the final conv
  Tensor dense_w;                    // [7,7]
  Tensor dense_b;                    // [7]
  Conv1dSpec frontend_spec;          // 20 filters, kernel 100, stride 50
  DilationSchedule dilations;
};

/// Glorot-uniform weights, unit-gamma batch norms, zero dense bias.
/// Deterministic in the seed.
ModelParams init_model(std::uint64_t seed);

/// Trainable scalars: shared frontend counted once, conv kernels, gamma+beta
/// per batch norm, dense weights and bias. Running moments excluded.
std::size_t count_parameters(const ModelParams& p);

// Canonical trainable order: frontend_w, conv_in_w, res1..res6, final_conv_w,
// bn1_gamma, bn1_beta, ..., bn7_gamma, bn7_beta, dense_w, dense_b.
std::vector<Tensor*> trainable_params(ModelParams& p);
std::vector<const Tensor*> trainable_params(const ModelParams& p);
const std::vector<std::string>& trainable_names();

/// Per-lead shared 1-D convolution + ReLU: [B,500,12] -> [B,9,20,12].
Tensor frontend(const Tensor& batch, const ModelParams& p);

struct ResidualBlockResult {
  Tensor y;
  BatchNormState bn1;  // states with post-batch running moments (train mode)
  BatchNormState bn2;
};
/// y = bn2(relu(conv(bn1(relu(conv(x, w1, d1))), w2, d2))) + x
ResidualBlockResult residual_block(const Tensor& x, const Tensor& w1,
                                   const Tensor& w2, const BatchNormState& bn1,
                                   const BatchNormState& bn2,
                                   const Conv2dSpec& d1, const Conv2dSpec& d2,
                                   Mode mode);

/// Full inference pass: probabilities [B,7], rows summing to 1.
Tensor forward(const Tensor& batch, const ModelParams& p, Mode mode);

struct ForwardTrace {
  Tensor after_frontend;  // [B,9,20,12]
  Tensor after_conv_in;   // [B,9,20,7]
  std::array<Tensor, 3> after_block;
  Tensor after_final_conv;
  Tensor after_final_bn;
  Tensor pooled;  // [B,7]
  Tensor probs;   // [B,7]
};
ForwardTrace forward_trace(const Tensor& batch, const ModelParams& p, Mode mode);

struct BatchGradients {
  double loss = 0.0;
  Tensor probs;               // [B,7]
  std::vector<Tensor> grads;  // canonical trainable order
  std::array<BatchNormState, 7> bn_updated;
};
/// Mean cross-entropy over the batch plus gradients for every trainable,
/// with batch norm in train mode.
BatchGradients loss_and_gradients(const Tensor& batch,
                                  const std::vector<int>& labels,
                                  const ModelParams& p);

// ---- tape wiring, exposed so tests can assemble variant front-ends ----

struct TapedParams {
  GradTape::ValueId frontend_w = 0, conv_in_w = 0, final_conv_w = 0,
                    dense_w = 0, dense_b = 0;
  std::array<GradTape::ValueId, 6> res_conv_w{};
  std::array<GradTape::ValueId, 7> bn_gamma{}, bn_beta{};
};
TapedParams push_params(GradTape& tape, const ModelParams& p);

struct TailStages {
  GradTape::ValueId conv_in = 0;
  std::array<GradTape::ValueId, 3> blocks{};
  GradTape::ValueId final_conv = 0;
  GradTape::ValueId final_bn = 0;
  GradTape::ValueId pooled = 0;
};

/// Everything between the stacked feature volume [B,9,20,12] and the pooled
/// features [B,7]: opening conv, three residual blocks, closing conv, batch
/// norm, global average pooling. Returns the pooled value id; intermediate
/// stage ids are written to *stages if given.
GradTape::ValueId tape_network_tail(GradTape& tape, GradTape::ValueId volume,
                                    const TapedParams& ids,
                                    const ModelParams& p, Mode mode,
                                    std::array<BatchNormState, 7>* bn_updated,
                                    TailStages* stages = nullptr);

// ---- weight file ----
// Magic "MIRN", version 0x01, then each array in canonical order:
// name length (u8), ASCII name, rank (u8), extents (u32 LE each),
// data (f64 LE, row-major).
void save_weights(const ModelParams& p, const std::string& path);
ModelParams load_weights(const std::string& path);

}  // namespace mirn
