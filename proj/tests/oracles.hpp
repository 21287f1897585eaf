#pragma once

// Test-only oracles. These stay independent of the implementation paths
// they check: finite differences for gradients, exhaustive enumeration for
// selections, direct summation for losses.

#include <cmath>
#include <functional>
#include <vector>

#include "mmt/param_tree.hpp"
#include "mmt/tensor.hpp"

namespace mmt::testing {

// Scalar-valued forward pass over a parameter tree. Must not depend on any
// tape the caller holds; a fresh evaluation per call.
using ScalarFn = std::function<double(const ParamTree<double>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_path;
  std::int64_t worst_index = -1;
};

// Relative error with a floor that sits above central-difference
// cancellation noise (~1e-9 at h=1e-6) but far below any real gradient-rule
// bug; exactly-zero gradients (e.g. softmax-invariant shift directions)
// would otherwise compare noise against noise.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central finite differences over every coordinate of every parameter.
inline GradCheckResult finite_difference_check(const ScalarFn& f,
                                               ParamTree<double>& params,
                                               const ParamTree<double>& grads,
                                               double h = 1e-5) {
  GradCheckResult res;
  for (auto& [path, p] : params) {
    if (!p.requires_grad) continue;
    const auto& g = grads.at(path);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double x0 = p[i];
      const double step = h * std::max(1.0, std::abs(x0));
      p[i] = x0 + step;
      const double fp = f(params);
      p[i] = x0 - step;
      const double fm = f(params);
      p[i] = x0;
      const double fd = (fp - fm) / (2.0 * step);
      const double err = rel_err(g[i], fd);
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_path = path;
        res.worst_index = i;
      }
    }
  }
  return res;
}

// Finite differences for a single tensor input (non-tree convenience).
inline double fd_check_tensor(const std::function<double(Tensor<double>&)>& f,
                              Tensor<double>& x, const Tensor<double>& grad,
                              double h = 1e-5) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    const double step = h * std::max(1.0, std::abs(x0));
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    x[i] = x0;
    worst = std::max(worst, rel_err(grad[i], (fp - fm) / (2.0 * step)));
  }
  return worst;
}

}  // namespace mmt::testing
