#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "mpolar/numcore/param_set.hpp"
#include "mpolar/numcore/rng.hpp"
#include "mpolar/numcore/value_grid.hpp"

namespace mpolar::testing {

inline num::ValueGrid random_grid(num::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  num::ValueGrid g(std::move(shape));
  for (double& v : g.values()) v = rng.uniform(lo, hi);
  return g;
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / (std::max(std::abs(a), std::abs(b)) + 1e-6);
}

// Compares the gradients already stored in params against central differences
// of loss() with step h, over every trainable coordinate.
inline GradCheck finite_difference_check(num::ParamSet& params, const std::function<double()>& loss,
                                         double h = 1e-5) {
  GradCheck out;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss();
      p.value[i] = orig - h;
      const double down = loss();
      p.value[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double e = rel_err(p.grad[i], fd);
      ++out.checked;
      if (e > out.max_rel_err) {
        out.max_rel_err = e;
        out.worst = name + "[" + std::to_string(i) + "] autodiff=" + std::to_string(p.grad[i]) +
                    " fd=" + std::to_string(fd);
      }
    }
  }
  return out;
}

}  // namespace mpolar::testing
