#pragma once

#include <map>
#include <string>

#include "mpolar/numcore/param_set.hpp"

namespace mpolar::num {

struct AdamConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
  // Global L2 norm bound over all trainable gradients; <= 0 disables clipping.
  double grad_clip_norm = 0.5;
};

struct AdamStepInfo {
  double grad_norm = 0.0;  // before clipping
  double applied_norm = 0.0;
};

// Adam with global-norm gradient clipping. Moment state is keyed by parameter
// name and persists across step() calls; frozen parameters are skipped.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  AdamStepInfo step(ParamSet& params);
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  long step_count() const { return t_; }

 private:
  struct Moments {
    ValueGrid m;
    ValueGrid v;
  };
  AdamConfig config_;
  std::map<std::string, Moments> state_;
  long t_ = 0;
};

}  // namespace mpolar::num
