#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mmt/param_tree.hpp"

namespace mmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam, no weight decay. `t` is the 1-based update count.
template <typename Real>
void adam_update(ParamTree<Real>& params, const ParamTree<Real>& grads,
                 ParamTree<Real>& m, ParamTree<Real>& v, std::int64_t t,
                 double lr, const AdamConfig& cfg = {}) {
  if (t < 1) throw std::runtime_error("adam update count must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto& [path, p] : params) {
    if (!p.requires_grad) continue;
    const auto& g = grads.at(path);
    auto& mt = m.at(path);
    auto& vt = v.at(path);
    if (g.size() != p.size())
      throw shape_error("adam: gradient shape mismatch at " + path);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]);
      const double mi = cfg.beta1 * double(mt[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(vt[i]) + (1.0 - cfg.beta2) * gi * gi;
      mt[i] = static_cast<Real>(mi);
      vt[i] = static_cast<Real>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p[i] = static_cast<Real>(double(p[i]) -
                               lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

struct LrSchedule {
  double peak = 1e-3;
  std::int64_t total_steps = 1000;
  std::int64_t warmup_steps = 50;  // 5% of total by convention
  double floor = 0.0;
};

inline LrSchedule make_schedule(double peak, std::int64_t total,
                                double warmup_frac = 0.05,
                                double floor = 0.0) {
  LrSchedule s;
  s.peak = peak;
  s.total_steps = total;
  s.warmup_steps =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(warmup_frac * total));
  s.floor = floor;
  return s;
}

// Linear warmup to the peak, then a cosine decay to the floor. Steps past
// the end clamp to the floor.
inline double cosine_lr(std::int64_t t, const LrSchedule& s) {
  if (t < 0) throw std::runtime_error("negative step");
  if (t >= s.total_steps) return s.floor;
  if (t < s.warmup_steps)
    return s.peak * double(t + 1) / double(s.warmup_steps);
  const double progress =
      double(t - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
  return s.floor +
         0.5 * (s.peak - s.floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mmt
