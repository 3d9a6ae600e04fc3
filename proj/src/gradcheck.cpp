#include "mirn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mirn {

GradCheckReport grad_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& point, const std::vector<Tensor>& analytic,
    double h, double tol, double scale_floor) {
  if (analytic.size() != point.size()) {
    throw ShapeError("grad_check: got " + std::to_string(analytic.size()) +
                     " gradient tensors for " + std::to_string(point.size()) +
                     " arguments");
  }
  GradCheckReport report;
  std::vector<Tensor> probe = point;
  for (std::size_t arg = 0; arg < point.size(); ++arg) {
    if (!analytic[arg].same_shape(point[arg])) {
      throw ShapeError("grad_check: gradient " + std::to_string(arg) +
                       " shape " + analytic[arg].shape_str() +
                       " does not match argument " + point[arg].shape_str());
    }
    for (std::size_t i = 0; i < point[arg].size(); ++i) {
      const double saved = probe[arg][i];
      probe[arg][i] = saved + h;
      const double fp = f(probe);
      probe[arg][i] = saved - h;
      const double fm = f(probe);
      probe[arg][i] = saved;

      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = analytic[arg][i];
      const double denom =
          std::max({std::fabs(numeric), std::fabs(ana), scale_floor});
      const double rel = std::fabs(numeric - ana) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_arg = arg;
        report.worst_index = i;
        report.analytic_at_worst = ana;
        report.numeric_at_worst = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace mirn
