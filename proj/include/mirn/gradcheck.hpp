#pragma once

#include <functional>
#include <vector>

#include "mirn/tensor.hpp"

namespace mirn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_arg = 0;    // which tensor in the argument list
  std::size_t worst_index = 0;  // flat index within it
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

/// Central-difference check of `analytic` against the scalar function `f`
/// evaluated around `point`, coordinate by coordinate. The relative error
/// denominator is floored at `scale_floor`, so coordinates whose true
/// magnitude sits below the floor are effectively compared absolutely
/// (tolerance tol * scale_floor).
GradCheckReport grad_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& point, const std::vector<Tensor>& analytic,
    double h, double tol, double scale_floor = 1e-3);

}  // namespace mirn
