#pragma once

#include <cstdint>
#include <vector>

#include "mirn/tensor.hpp"

namespace mirn {

struct AdamState {
  std::vector<Tensor> m;  // first moments, shapes mirror the trainables
  std::vector<Tensor> v;  // second moments
  std::uint64_t t = 0;    // completed steps
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double lr_decay = 0.0;

  static AdamState init(const std::vector<const Tensor*>& params);
};

/// One Adam update: t += 1, moment updates, bias-corrected step
/// theta -= lr * m_hat / (sqrt(v_hat) + epsilon). Parameters are updated
/// in place; the caller owns exclusive write access between steps.
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<Tensor>& grads, AdamState& state);

}  // namespace mirn
