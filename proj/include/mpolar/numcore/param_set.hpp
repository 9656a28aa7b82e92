#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpolar/numcore/value_grid.hpp"

namespace mpolar::num {

struct Param {
  ValueGrid value;
  ValueGrid grad;  // always the same shape as value
  bool trainable = true;
};

// Named parameters with gradient slots. Iteration order is the lexicographic
// name order, which keeps optimizer and serialization order deterministic.
class ParamSet {
 public:
  Param& add(const std::string& name, ValueGrid init, bool trainable = true);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::vector<std::string> names() const;

  void set_trainable(const std::string& name, bool trainable);
  void zero_grad();
  // L2 norm over the gradients of trainable parameters.
  double grad_norm() const;
  std::size_t trainable_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
};

}  // namespace mpolar::num
