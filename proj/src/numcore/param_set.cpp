#include "mpolar/numcore/param_set.hpp"

#include <cmath>

namespace mpolar::num {

Param& ParamSet::add(const std::string& name, ValueGrid init, bool trainable) {
  if (params_.count(name)) throw NumericError("ParamSet: duplicate parameter '" + name + "'");
  Param p;
  p.grad = ValueGrid::zeros_like(init);
  p.value = std::move(init);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw NumericError("ParamSet: unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw NumericError("ParamSet: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParamSet::set_trainable(const std::string& name, bool trainable) {
  get(name).trainable = trainable;
}

void ParamSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

double ParamSet::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, p] : params_) {
    if (!p.trainable) continue;
    for (double g : p.grad.values()) s += g * g;
  }
  return std::sqrt(s);
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.trainable ? p.value.size() : 0;
  return n;
}

}  // namespace mpolar::num
