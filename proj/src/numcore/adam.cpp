#include "mpolar/numcore/adam.hpp"

#include <cmath>

namespace mpolar::num {

AdamStepInfo Adam::step(ParamSet& params) {
  AdamStepInfo info;
  info.grad_norm = params.grad_norm();
  if (!std::isfinite(info.grad_norm)) throw NumericError("adam: non-finite gradient");
  if (info.grad_norm == 0.0) return info;

  double factor = 1.0;
  if (config_.grad_clip_norm > 0.0 && info.grad_norm > config_.grad_clip_norm) {
    factor = config_.grad_clip_norm / info.grad_norm;
  }
  info.applied_norm = info.grad_norm * factor;

  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step_size = config_.lr * std::sqrt(c2) / c1;

  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto [it, fresh] = state_.try_emplace(name);
    Moments& mo = it->second;
    if (fresh) {
      mo.m = ValueGrid::zeros_like(p.value);
      mo.v = ValueGrid::zeros_like(p.value);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] * factor;
      mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * g;
      mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * g * g;
      p.value[i] -= step_size * mo.m[i] / (std::sqrt(mo.v[i]) + config_.eps * std::sqrt(c2));
    }
  }
  return info;
}

}  // namespace mpolar::num
