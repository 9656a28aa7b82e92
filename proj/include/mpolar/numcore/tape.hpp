#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mpolar/numcore/param_set.hpp"
#include "mpolar/numcore/value_grid.hpp"

namespace mpolar::num {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const ValueGrid& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class Op : std::uint8_t {
  Leaf,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddRowVector,
  Tanh,
  Relu,
  Exp,
  Log,
  Sum,
  Mean,
  SumRows,
  LogSoftmaxRows,
  Pick,
  GaussianLogProb,
  Aggregate,
  Clamp,
  Minimum,
};

// Records primitive operations in execution order; backward() walks them in
// reverse and accumulates adjoints into the ParamSet entries bound by param().
// A tape can be differentiated exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(ValueGrid value);
  // Differentiable leaf not bound to a ParamSet; read its adjoint with grad().
  Var variable(ValueGrid value);
  // Leaf bound to a parameter; gradients are added into param.grad.
  Var param(Param& param);

  void backward(Var loss);
  const ValueGrid& grad(Var v) const;
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend Var record(Op op, std::initializer_list<Var> inputs, ValueGrid value, double c0,
                    double c1, std::vector<std::size_t> index);

  struct Node {
    Op op = Op::Leaf;
    std::uint32_t in[3] = {0, 0, 0};
    std::uint8_t n_in = 0;
    bool requires_grad = false;
    double c0 = 0.0;
    double c1 = 0.0;
    Param* param = nullptr;
    std::vector<std::size_t> index;
    ValueGrid value;
    ValueGrid grad;
  };

  Var push(Node node);
  ValueGrid& grad_slot(std::size_t id);
  void propagate(std::size_t id);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Matrix product of rank-2 operands.
Var matmul(Var a, Var b);
// Exact-shape or scalar-broadcast arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
// x[m x n] + v[n] added to every row.
Var add_row_vector(Var x, Var v);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
// [m x n] -> [m]
Var sum_rows(Var a);
Var log_softmax_rows(Var logits);
// [m x n], one column index per row -> [m]
Var pick(Var x, std::vector<std::size_t> columns);
// Diagonal Gaussian log density per row: mean [m x D], log_std [D], action [m x D] -> [m].
// A rank-1 mean/action of length D is treated as a single row and yields a scalar.
Var gaussian_logprob(Var mean, Var log_std, Var action);
// out[d] = (1/K) sum_k theta[k, d] * actions[k, d]; actions [K x D] -> [D].
Var aggregate(Var theta, Var actions);
// Row-wise aggregate: actions [m x K*D], each row a flattened K x D block -> [m x D].
Var aggregate_rows(Var theta, Var actions);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);

}  // namespace mpolar::num
