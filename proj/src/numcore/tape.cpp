#include "mpolar/numcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mpolar::num {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw NumericError("operands live on different tapes");
  return a.tape();
}

void require_same_shape(const ValueGrid& a, const ValueGrid& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw NumericError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
  }
}

// Shape of a binary elementwise result with scalar broadcasting only.
Shape broadcast_shape(const ValueGrid& a, const ValueGrid& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.is_scalar()) return a.shape();
  if (a.is_scalar()) return b.shape();
  require_same_shape(a, b, op);
  return a.shape();
}

// Index into a broadcast operand.
inline double bget(const ValueGrid& g, std::size_t i) { return g.size() == 1 ? g[0] : g[i]; }

template <typename F>
ValueGrid binary(const ValueGrid& a, const ValueGrid& b, const char* op, F f) {
  ValueGrid out(broadcast_shape(a, b, op));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(bget(a, i), bget(b, i));
  out.require_finite(op);
  return out;
}

template <typename F>
ValueGrid unary(const ValueGrid& a, const char* op, F f) {
  ValueGrid out = ValueGrid::zeros_like(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  out.require_finite(op);
  return out;
}

// Adds g into slot, summing if slot is a broadcast scalar.
void accumulate(ValueGrid& slot, const ValueGrid& g, double factor = 1.0) {
  if (slot.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += factor * g[i];
  } else {
    double s = 0.0;
    for (double v : g.values()) s += v;
    slot[0] += factor * s;
  }
}

}  // namespace

const ValueGrid& Var::value() const { return tape_->nodes_[id_].value; }

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::push(Node node) {
  if (consumed_) throw NumericError("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(ValueGrid value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(ValueGrid value) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Param& param) {
  Node n;
  n.op = Op::Parameter;
  n.requires_grad = param.trainable;
  n.param = &param;
  n.value = param.value;
  return push(std::move(n));
}

Var record(Op op, std::initializer_list<Var> inputs, ValueGrid value, double c0, double c1,
           std::vector<std::size_t> index) {
  Tape& tape = inputs.begin()->tape();
  Tape::Node n;
  n.op = op;
  n.n_in = static_cast<std::uint8_t>(inputs.size());
  std::size_t k = 0;
  for (Var v : inputs) {
    if (&v.tape() != &tape) throw NumericError("operands live on different tapes");
    n.in[k++] = static_cast<std::uint32_t>(v.id());
    n.requires_grad = n.requires_grad || v.requires_grad();
  }
  n.c0 = c0;
  n.c1 = c1;
  n.index = std::move(index);
  n.value = std::move(value);
  return tape.push(std::move(n));
}

ValueGrid& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = ValueGrid::zeros_like(n.value);
  return n.grad;
}

const ValueGrid& Tape::grad(Var v) const {
  if (!consumed_) throw NumericError("grad() requested before backward()");
  const Node& n = nodes_[v.id()];
  if (n.grad.size() != n.value.size()) throw NumericError("no gradient reached this node");
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw NumericError("backward: loss belongs to another tape");
  if (consumed_) throw NumericError("backward: tape already consumed");
  if (!loss.value().is_scalar()) {
    throw NumericError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  }
  consumed_ = true;
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() != n.value.size()) continue;
    propagate(id);
  }
}

void Tape::propagate(std::size_t id) {
  // grad_slot() never grows nodes_, so these references stay valid.
  Node& n = nodes_[id];
  const ValueGrid& g = n.grad;
  auto needs = [&](int k) { return nodes_[n.in[k]].requires_grad; };
  auto in_value = [&](int k) -> const ValueGrid& { return nodes_[n.in[k]].value; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Parameter:
      accumulate(n.param->grad, g);
      break;
    case Op::MatMul:
      if (needs(0)) gemm_accumulate(g, false, in_value(1), true, grad_slot(n.in[0]));
      if (needs(1)) gemm_accumulate(in_value(0), true, g, false, grad_slot(n.in[1]));
      break;
    case Op::Add:
      if (needs(0)) accumulate(grad_slot(n.in[0]), g);
      if (needs(1)) accumulate(grad_slot(n.in[1]), g);
      break;
    case Op::Sub:
      if (needs(0)) accumulate(grad_slot(n.in[0]), g);
      if (needs(1)) accumulate(grad_slot(n.in[1]), g, -1.0);
      break;
    case Op::Mul: {
      const ValueGrid& a = in_value(0);
      const ValueGrid& b = in_value(1);
      for (int k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        const ValueGrid& other = k == 0 ? b : a;
        ValueGrid& slot = grad_slot(n.in[k]);
        if (slot.size() == g.size()) {
          for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * bget(other, i);
        } else {
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bget(other, i);
          slot[0] += s;
        }
      }
      break;
    }
    case Op::Scale:
      accumulate(grad_slot(n.in[0]), g, n.c0);
      break;
    case Op::AddRowVector: {
      if (needs(0)) accumulate(grad_slot(n.in[0]), g);
      if (needs(1)) {
        ValueGrid& gv = grad_slot(n.in[1]);
        const std::size_t r = g.rows();
        const std::size_t c = g.cols();
        double* pv = gv.data();
        const double* pg = g.data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) pv[j] += pg[i * c + j];
      }
      break;
    }
    case Op::Tanh: {
      ValueGrid& gx = grad_slot(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::Relu: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const ValueGrid& x = in_value(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
      break;
    }
    case Op::Exp: {
      ValueGrid& gx = grad_slot(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i];
      break;
    }
    case Op::Log: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const ValueGrid& x = in_value(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const double f = n.op == Op::Mean ? g[0] / static_cast<double>(gx.size()) : g[0];
      for (double& v : gx.values()) v += f;
      break;
    }
    case Op::SumRows: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const std::size_t c = gx.cols();
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
      break;
    }
    case Op::LogSoftmaxRows: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const std::size_t r = g.rows();
      const std::size_t c = g.cols();
      for (std::size_t i = 0; i < r; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] += g[i * c + j] - std::exp(n.value[i * c + j]) * gs;
        }
      }
      break;
    }
    case Op::Pick: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const std::size_t c = gx.cols();
      for (std::size_t i = 0; i < n.index.size(); ++i) gx[i * c + n.index[i]] += g[i];
      break;
    }
    case Op::GaussianLogProb: {
      const ValueGrid& mu = in_value(0);
      const ValueGrid& ls = in_value(1);
      const ValueGrid& act = in_value(2);
      const std::size_t d_dim = ls.size();
      const std::size_t rows = mu.size() / d_dim;
      ValueGrid* gmu = needs(0) ? &grad_slot(n.in[0]) : nullptr;
      ValueGrid* gls = needs(1) ? &grad_slot(n.in[1]) : nullptr;
      ValueGrid* gact = needs(2) ? &grad_slot(n.in[2]) : nullptr;
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t d = 0; d < d_dim; ++d) {
          const std::size_t k = i * d_dim + d;
          const double inv_sigma = std::exp(-ls[d]);
          const double z = (act[k] - mu[k]) * inv_sigma;
          if (gmu) (*gmu)[k] += g[i] * z * inv_sigma;
          if (gls) (*gls)[d] += g[i] * (z * z - 1.0);
          if (gact) (*gact)[k] -= g[i] * z * inv_sigma;
        }
      }
      break;
    }
    case Op::Aggregate: {
      const ValueGrid& theta = in_value(0);
      const ValueGrid& acts = in_value(1);
      const std::size_t k_src = theta.shape()[0];
      const std::size_t d_dim = theta.shape()[1];
      const std::size_t rows = acts.size() / (k_src * d_dim);
      const double inv_k = 1.0 / static_cast<double>(k_src);
      ValueGrid* gt = needs(0) ? &grad_slot(n.in[0]) : nullptr;
      ValueGrid* ga = needs(1) ? &grad_slot(n.in[1]) : nullptr;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* a_row = acts.data() + i * k_src * d_dim;
        for (std::size_t k = 0; k < k_src; ++k) {
          for (std::size_t d = 0; d < d_dim; ++d) {
            const double gi = g[i * d_dim + d] * inv_k;
            if (gt) (*gt)[k * d_dim + d] += gi * a_row[k * d_dim + d];
            if (ga) (*ga)[i * k_src * d_dim + k * d_dim + d] += gi * theta[k * d_dim + d];
          }
        }
      }
      break;
    }
    case Op::Clamp: {
      ValueGrid& gx = grad_slot(n.in[0]);
      const ValueGrid& x = in_value(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] >= n.c0 && x[i] <= n.c1) gx[i] += g[i];
      }
      break;
    }
    case Op::Minimum: {
      const ValueGrid& a = in_value(0);
      const ValueGrid& b = in_value(1);
      ValueGrid* ga = needs(0) ? &grad_slot(n.in[0]) : nullptr;
      ValueGrid* gb = needs(1) ? &grad_slot(n.in[1]) : nullptr;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] <= b[i]) {
          if (ga) (*ga)[i] += g[i];
        } else if (gb) {
          (*gb)[i] += g[i];
        }
      }
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  return record(Op::MatMul, {a, b}, matmul(a.value(), b.value()), 0, 0, {});
}

Var add(Var a, Var b) {
  same_tape(a, b);
  return record(Op::Add, {a, b},
                binary(a.value(), b.value(), "add", [](double x, double y) { return x + y; }), 0,
                0, {});
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  return record(Op::Sub, {a, b},
                binary(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }), 0,
                0, {});
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  return record(Op::Mul, {a, b},
                binary(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }), 0,
                0, {});
}

Var scale(Var a, double c) {
  return record(Op::Scale, {a}, unary(a.value(), "scale", [c](double x) { return c * x; }), c,
                0, {});
}

Var add_row_vector(Var x, Var v) {
  same_tape(x, v);
  const ValueGrid& xv = x.value();
  const ValueGrid& vv = v.value();
  if (vv.rank() != 1 || xv.cols() != vv.size() || xv.rank() == 0) {
    throw NumericError("add_row_vector: incompatible shapes " + shape_string(xv.shape()) +
                       " and " + shape_string(vv.shape()));
  }
  ValueGrid out = xv;
  const std::size_t c = vv.size();
  const double* pv = vv.data();
  for (double* row = out.data(); row != out.data() + out.size(); row += c)
    for (std::size_t j = 0; j < c; ++j) row[j] += pv[j];
  out.require_finite("add_row_vector");
  return record(Op::AddRowVector, {x, v}, std::move(out), 0, 0, {});
}

Var tanh(Var a) {
  return record(Op::Tanh, {a}, unary(a.value(), "tanh", [](double x) { return tanh_scalar(x); }), 0,
                0, {});
}

Var relu(Var a) {
  return record(Op::Relu, {a},
                unary(a.value(), "relu", [](double x) { return x > 0.0 ? x : 0.0; }), 0, 0, {});
}

Var exp(Var a) {
  return record(Op::Exp, {a}, unary(a.value(), "exp", [](double x) { return std::exp(x); }), 0,
                0, {});
}

Var log(Var a) {
  for (double x : a.value().values()) {
    if (!(x > 0.0)) throw NumericError("log: non-positive argument");
  }
  return record(Op::Log, {a}, unary(a.value(), "log", [](double x) { return std::log(x); }), 0,
                0, {});
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  ValueGrid out = ValueGrid::scalar(s);
  out.require_finite("sum");
  return record(Op::Sum, {a}, std::move(out), 0, 0, {});
}

Var mean(Var a) {
  if (a.value().size() == 0) throw NumericError("mean: empty input");
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  ValueGrid out = ValueGrid::scalar(s / static_cast<double>(a.value().size()));
  out.require_finite("mean");
  return record(Op::Mean, {a}, std::move(out), 0, 0, {});
}

Var sum_rows(Var a) {
  const ValueGrid& x = a.value();
  if (x.rank() != 2) throw NumericError("sum_rows: expected a matrix");
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  ValueGrid out({r}, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  out.require_finite("sum_rows");
  return record(Op::SumRows, {a}, std::move(out), 0, 0, {});
}

Var log_softmax_rows(Var logits) {
  const ValueGrid& x = logits.value();
  if (x.rank() != 2 || x.cols() == 0) throw NumericError("log_softmax_rows: expected a matrix");
  x.require_finite("log_softmax input");
  ValueGrid out = ValueGrid::zeros_like(x);
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xi[j] - lse;
  }
  out.require_finite("log_softmax_rows");
  return record(Op::LogSoftmaxRows, {logits}, std::move(out), 0, 0, {});
}

Var pick(Var x, std::vector<std::size_t> columns) {
  const ValueGrid& v = x.value();
  if (v.rank() != 2 || columns.size() != v.rows()) {
    throw NumericError("pick: need one column per row of a matrix");
  }
  ValueGrid out({columns.size()}, 0.0);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] >= v.cols()) throw NumericError("pick: column index out of range");
    out[i] = v[i * v.cols() + columns[i]];
  }
  return record(Op::Pick, {x}, std::move(out), 0, 0, std::move(columns));
}

Var gaussian_logprob(Var mean, Var log_std, Var action) {
  same_tape(mean, log_std);
  same_tape(mean, action);
  const ValueGrid& mu = mean.value();
  const ValueGrid& ls = log_std.value();
  const ValueGrid& act = action.value();
  if (ls.rank() != 1 || mu.shape() != act.shape() || mu.cols() != ls.size() || mu.rank() == 0) {
    throw NumericError("gaussian_logprob: shape mismatch " + shape_string(mu.shape()) + ", " +
                       shape_string(ls.shape()) + ", " + shape_string(act.shape()));
  }
  ls.require_finite("gaussian_logprob log_std");
  const std::size_t d_dim = ls.size();
  const std::size_t rows = mu.size() / d_dim;
  ValueGrid out = mu.rank() == 1 ? ValueGrid::scalar(0.0) : ValueGrid({rows}, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double lp = 0.0;
    for (std::size_t d = 0; d < d_dim; ++d) {
      const std::size_t k = i * d_dim + d;
      const double z = (act[k] - mu[k]) * std::exp(-ls[d]);
      lp += -0.5 * z * z - ls[d] - kHalfLog2Pi;
    }
    out[i] = lp;
  }
  out.require_finite("gaussian_logprob");
  return record(Op::GaussianLogProb, {mean, log_std, action}, std::move(out), 0, 0, {});
}

namespace {

Var aggregate_impl(Var theta, Var actions, bool batched) {
  same_tape(theta, actions);
  const ValueGrid& t = theta.value();
  const ValueGrid& a = actions.value();
  if (t.rank() != 2 || t.size() == 0) throw NumericError("aggregate: theta must be K x D");
  const std::size_t k_src = t.shape()[0];
  const std::size_t d_dim = t.shape()[1];
  Shape out_shape;
  std::size_t rows = 0;
  if (!batched && a.shape() == t.shape()) {
    out_shape = {d_dim};
    rows = 1;
  } else if (batched && a.rank() == 2 && a.shape()[1] == k_src * d_dim) {
    rows = a.shape()[0];
    out_shape = {rows, d_dim};
  } else {
    throw NumericError("aggregate: shape mismatch " + shape_string(t.shape()) + " vs " +
                       shape_string(a.shape()));
  }
  ValueGrid out(out_shape, 0.0);
  const double inv_k = 1.0 / static_cast<double>(k_src);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* a_row = a.data() + i * k_src * d_dim;
    for (std::size_t d = 0; d < d_dim; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < k_src; ++k) s += t[k * d_dim + d] * a_row[k * d_dim + d];
      out[i * d_dim + d] = s * inv_k;
    }
  }
  out.require_finite("aggregate");
  return record(Op::Aggregate, {theta, actions}, std::move(out), 0, 0, {});
}

}  // namespace

Var aggregate(Var theta, Var actions) { return aggregate_impl(theta, actions, false); }

Var aggregate_rows(Var theta, Var actions) { return aggregate_impl(theta, actions, true); }

Var clamp(Var a, double lo, double hi) {
  return record(Op::Clamp, {a},
                unary(a.value(), "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); }),
                lo, hi, {});
}

Var minimum(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.value(), b.value(), "minimum");
  return record(Op::Minimum, {a, b},
                binary(a.value(), b.value(), "minimum",
                       [](double x, double y) { return x <= y ? x : y; }),
                0, 0, {});
}

}  // namespace mpolar::num
