#pragma once

#include <functional>
#include <vector>

#include "mirn/ops.hpp"
#include "mirn/tensor.hpp"

namespace mirn {

/// Reverse-mode tape. Forward ops are recorded in execution order; the
/// backward pass replays each recorded op exactly once, newest first,
/// accumulating gradients per value. Values are immutable once pushed.
class GradTape {
 public:
  using ValueId = std::size_t;
  // maps the gradient of the op output to the gradients of the op inputs;
  // the saved forward values of the inputs are handed back by the tape, so
  // ops only capture state they derive themselves
  using BackwardFn = std::function<std::vector<Tensor>(
      const Tensor& upstream, const std::vector<const Tensor*>& inputs)>;

  ValueId leaf(Tensor value);
  ValueId record(std::vector<ValueId> inputs, Tensor output, BackwardFn backward);

  const Tensor& value(ValueId id) const { return values_.at(id); }
  std::size_t num_values() const { return values_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

  /// Gradient of `root` (seeded with `seed`, which must match its shape)
  /// w.r.t. every value on the tape. Entries where no gradient flowed are
  /// left empty.
  std::vector<Tensor> backward(ValueId root, Tensor seed) const;

 private:
  struct Op {
    std::vector<ValueId> inputs;
    ValueId output;
    BackwardFn fn;
  };
  std::vector<Tensor> values_;
  std::vector<Op> ops_;
};

// ---- taped layer applications ----
// Forward values needed by the backward pass are captured when recording.

// signal [T] -> [frames,F]
GradTape::ValueId tape_conv1d(GradTape& t, GradTape::ValueId signal,
                              GradTape::ValueId weights, const Conv1dSpec& spec);

// batch [B,T,L] with one weight array shared by all leads -> [B,frames,F,L];
// the weight gradient sums the contributions of every (example, lead) use
GradTape::ValueId tape_frontend_conv(GradTape& t, GradTape::ValueId batch,
                                     GradTape::ValueId weights,
                                     const Conv1dSpec& spec);

// input [B,H,W,C] -> [B,H,W,F]
GradTape::ValueId tape_conv2d(GradTape& t, GradTape::ValueId input,
                              GradTape::ValueId weights, const Conv2dSpec& spec);

GradTape::ValueId tape_relu(GradTape& t, GradTape::ValueId x);

GradTape::ValueId tape_add(GradTape& t, GradTape::ValueId a, GradTape::ValueId b);

// `stats` supplies running moments / momentum / epsilon; gamma and beta flow
// through the tape. In train mode the post-batch running moments are written
// to *updated (gamma/beta copied from the tape values).
GradTape::ValueId tape_batchnorm(GradTape& t, GradTape::ValueId x,
                                 GradTape::ValueId gamma, GradTape::ValueId beta,
                                 const BatchNormState& stats, Mode mode,
                                 BatchNormState* updated);

// [B,H,W,C] -> [B,C]
GradTape::ValueId tape_global_avg_pool(GradTape& t, GradTape::ValueId x);

// features [B,C], weights [O,C], bias [O] -> logits [B,O]
GradTape::ValueId tape_dense(GradTape& t, GradTape::ValueId features,
                             GradTape::ValueId weights, GradTape::ValueId bias);

// logits [B,O] + labels -> scalar mean cross-entropy; softmax probabilities
// [B,O] are written to *probs_out if given
GradTape::ValueId tape_softmax_xent_mean(GradTape& t, GradTape::ValueId logits,
                                         std::vector<int> labels,
                                         Tensor* probs_out);

// L matrices [H,W] stacked across depth -> [1,H,W,L]
GradTape::ValueId tape_stack_depth(GradTape& t,
                                   const std::vector<GradTape::ValueId>& mats);

}  // namespace mirn
