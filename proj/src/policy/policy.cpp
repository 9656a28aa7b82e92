#include "mpolar/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mpolar::policy {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::string layer_name(const std::string& prefix, std::size_t i, const char* what) {
  return prefix + "/" + std::to_string(i) + "/" + what;
}

std::string out_name(const std::string& prefix, const char* what) {
  return prefix + "/out/" + what;
}

void add_stack(num::ParamSet& params, const std::string& prefix, std::size_t in_dim,
               const Architecture& arch, std::size_t out_dim, double out_gain, Rng& rng) {
  std::size_t width = in_dim;
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
    params.add(layer_name(prefix, i, "w"), orthogonal(width, arch.hidden[i], std::sqrt(2.0), rng));
    params.add(layer_name(prefix, i, "b"), ValueGrid({arch.hidden[i]}, 0.0));
    width = arch.hidden[i];
  }
  if (out_gain == 0.0) {
    params.add(out_name(prefix, "w"), ValueGrid({width, out_dim}, 0.0));
  } else {
    params.add(out_name(prefix, "w"), orthogonal(width, out_dim, out_gain, rng));
  }
  params.add(out_name(prefix, "b"), ValueGrid({out_dim}, 0.0));
}

// y = x W + b through the same kernel as the tape's matmul, so inference and
// training forward passes agree bit for bit.
void dense(const ValueGrid& w, const ValueGrid& b, std::span<const double> x,
           std::vector<double>& y) {
  y.assign(w.shape()[1], 0.0);
  num::gemv_accumulate(x, w, y);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += b[j];
}

std::vector<double> eval_stack(const num::ParamSet& params, const std::string& prefix,
                               std::size_t n_hidden, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t i = 0; i < n_hidden; ++i) {
    dense(params.get(layer_name(prefix, i, "w")).value, params.get(layer_name(prefix, i, "b")).value,
          cur, next);
    for (double& v : next) v = num::tanh_scalar(v);
    cur.swap(next);
  }
  dense(params.get(out_name(prefix, "w")).value, params.get(out_name(prefix, "b")).value, cur,
        next);
  for (double v : next) {
    if (!std::isfinite(v)) throw num::NumericError("policy: non-finite network output");
  }
  return next;
}

// Log-softmax evaluated exactly as the tape's log_softmax_rows.
std::vector<double> log_softmax(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] - lse;
  return out;
}

std::size_t argmax(std::span<const double> x) {
  return static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
}

ValueGrid as_row(std::span<const double> v) {
  return ValueGrid({1, v.size()}, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

ValueGrid orthogonal(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  // Gram-Schmidt on a Gaussian matrix with the long side as column length;
  // the sign fix makes the result Haar-distributed.
  const bool tall = rows >= cols;
  const std::size_t n = tall ? rows : cols;  // vector length
  const std::size_t m = tall ? cols : rows;  // vector count
  std::vector<std::vector<double>> q(m, std::vector<double>(n));
  for (auto& v : q)
    for (double& e : v) e = rng.normal();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < n; ++t) dot += q[i][t] * q[j][t];
      for (std::size_t t = 0; t < n; ++t) q[i][t] -= dot * q[j][t];
    }
    double norm = 0.0;
    for (double e : q[i]) norm += e * e;
    norm = std::sqrt(norm);
    for (double& e : q[i]) e /= norm;
  }
  ValueGrid out({rows, cols}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < n; ++t) {
      if (tall) {
        out.at(t, i) = gain * q[i][t];
      } else {
        out.at(i, t) = gain * q[i][t];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SourcePolicy::SourcePolicy(std::shared_ptr<const Policy> network) : network_(std::move(network)) {
  if (!network_) throw PolicyMismatchError("source policy: null network");
  if (network_->is_multipolar()) {
    throw PolicyMismatchError("source policy: expected a plain MLP policy");
  }
}

ActionSpec SourcePolicy::action_spec() const { return network_->action_spec(); }
std::size_t SourcePolicy::obs_dim() const { return network_->obs_dim(); }
std::optional<envs::Family> SourcePolicy::family() const { return network_->family(); }

void SourcePolicy::act(std::span<const double> raw_obs, std::span<double> out) const {
  const Policy& net = *network_;
  if (raw_obs.size() != net.obs_dim()) {
    throw PolicyMismatchError("source policy: observation has dimension " +
                              std::to_string(raw_obs.size()) + ", expected " +
                              std::to_string(net.obs_dim()));
  }
  std::vector<double> norm(raw_obs.size());
  net.normalize_into(raw_obs, norm);
  const auto scores = eval_stack(net.params(), "pi", net.architecture().hidden.size(), norm);
  if (net.action_spec().discrete) {
    std::fill(out.begin(), out.end(), 0.0);
    out[argmax(scores)] = 1.0;
  } else {
    std::copy(scores.begin(), scores.end(), out.begin());
  }
}

SourceSet::SourceSet(std::vector<std::shared_ptr<const SourcePolicy>> sources)
    : sources_(std::move(sources)) {
  if (sources_.empty()) throw PolicyMismatchError("source set: need at least one source");
  spec_ = sources_.front()->action_spec();
  obs_dim_ = sources_.front()->obs_dim();
  action_dim_ = spec_.dim;
  const auto fam = sources_.front()->family();
  for (const auto& s : sources_) {
    if (!s) throw PolicyMismatchError("source set: null source");
    if (!(s->action_spec() == spec_) || s->obs_dim() != obs_dim_ || s->family() != fam) {
      throw PolicyMismatchError("source set: sources disagree on observation/action spaces");
    }
  }
}

void SourceSet::actions_into(std::span<const double> raw_obs, std::span<double> out) const {
  if (out.size() != k() * action_dim_) throw PolicyMismatchError("source set: bad output size");
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    sources_[i]->act(raw_obs, out.subspan(i * action_dim_, action_dim_));
  }
}

// ---------------------------------------------------------------------------

Policy Policy::mlp(std::size_t obs_dim, ActionSpec spec, const Architecture& arch,
                   std::uint64_t seed) {
  Policy p;
  p.kind_ = PolicyKind::Mlp;
  p.obs_dim_ = obs_dim;
  p.spec_ = spec;
  p.arch_ = arch;
  p.obs_moments_ = ppo::RunningMoments(obs_dim);
  Rng rng = Rng(seed).fork("init");
  add_stack(p.params_, "pi", obs_dim, arch, spec.dim, 0.01, rng);
  add_stack(p.params_, "vf", obs_dim, arch, 1, 1.0, rng);
  if (!spec.discrete) p.params_.add("log_std", ValueGrid({spec.dim}, 0.0));
  return p;
}

Policy Policy::mlp(envs::Family family, const Architecture& arch, std::uint64_t seed) {
  Policy p = mlp(envs::observation_dim(family), envs::action_spec(family), arch, seed);
  p.family_ = family;
  return p;
}

Policy Policy::multipolar(std::size_t obs_dim, ActionSpec spec, SourceSet sources,
                          const Architecture& arch, std::uint64_t seed, AuxMode aux) {
  if (sources.k() == 0) throw PolicyMismatchError("multipolar: empty source set");
  if (sources.obs_dim() != obs_dim || !(sources.action_spec() == spec)) {
    throw PolicyMismatchError("multipolar: sources do not match the target spaces");
  }
  Policy p;
  p.kind_ = PolicyKind::Multipolar;
  p.obs_dim_ = obs_dim;
  p.spec_ = spec;
  p.arch_ = arch;
  p.aux_mode_ = aux;
  p.obs_moments_ = ppo::RunningMoments(obs_dim);
  Rng rng = Rng(seed).fork("init");
  p.params_.add("agg/theta", ValueGrid({sources.k(), spec.dim}, 1.0));
  if (aux == AuxMode::Network) {
    add_stack(p.params_, "pi", obs_dim, arch, spec.dim, 0.0, rng);
  } else {
    p.params_.add("aux/bias", ValueGrid({spec.dim}, 0.0));
  }
  add_stack(p.params_, "vf", obs_dim, arch, 1, 1.0, rng);
  if (!spec.discrete) p.params_.add("log_std", ValueGrid({spec.dim}, 0.0));
  p.sources_ = std::move(sources);
  return p;
}

Policy Policy::multipolar(envs::Family family, SourceSet sources, const Architecture& arch,
                          std::uint64_t seed, AuxMode aux) {
  for (const auto& s : sources.sources()) {
    if (s->family() && *s->family() != family) {
      throw PolicyMismatchError("multipolar: source trained on " +
                                std::string(envs::family_name(*s->family())) + ", target is " +
                                std::string(envs::family_name(family)));
    }
  }
  Policy p = multipolar(envs::observation_dim(family), envs::action_spec(family),
                        std::move(sources), arch, seed, aux);
  p.family_ = family;
  return p;
}

Policy Policy::assemble(PolicyKind kind, std::optional<envs::Family> family, std::size_t obs_dim,
                        ActionSpec spec, Architecture arch, AuxMode aux, SourceSet sources,
                        num::ParamSet params, bool normalize_obs, ppo::RunningMoments moments) {
  Policy p;
  p.kind_ = kind;
  p.family_ = family;
  p.obs_dim_ = obs_dim;
  p.spec_ = spec;
  p.arch_ = std::move(arch);
  p.aux_mode_ = aux;
  p.sources_ = std::move(sources);
  p.params_ = std::move(params);
  p.normalize_obs_ = normalize_obs;
  p.obs_moments_ = std::move(moments);
  if (p.obs_moments_.dim() != obs_dim) {
    throw PolicyMismatchError("policy: normalization statistics have the wrong dimension");
  }
  if (kind == PolicyKind::Multipolar &&
      (p.sources_.k() == 0 || p.sources_.obs_dim() != obs_dim || !(p.sources_.action_spec() == spec))) {
    throw PolicyMismatchError("policy: source set does not match the policy spaces");
  }
  return p;
}

bool Policy::aggregation_trainable() const {
  return is_multipolar() && params_.get("agg/theta").trainable;
}

void Policy::normalize_into(std::span<const double> raw, std::span<double> out) const {
  if (raw.size() != obs_dim_) {
    throw PolicyMismatchError("policy: observation has dimension " + std::to_string(raw.size()) +
                              ", expected " + std::to_string(obs_dim_));
  }
  if (normalize_obs_) {
    obs_moments_.normalize(raw, out, kObsClip);
  } else {
    std::copy(raw.begin(), raw.end(), out.begin());
  }
}

ValueGrid Policy::normalize(const ValueGrid& raw) const {
  ValueGrid out = ValueGrid::zeros_like(raw);
  normalize_into(raw.values(), out.values());
  return out;
}

Var Policy::dense_stack(num::Tape& tape, const std::string& prefix, Var x) {
  for (std::size_t i = 0; i < arch_.hidden.size(); ++i) {
    Var w = tape.param(params_.get(layer_name(prefix, i, "w")));
    Var b = tape.param(params_.get(layer_name(prefix, i, "b")));
    x = num::tanh(num::add_row_vector(num::matmul(x, w), b));
  }
  Var w = tape.param(params_.get(out_name(prefix, "w")));
  Var b = tape.param(params_.get(out_name(prefix, "b")));
  return num::add_row_vector(num::matmul(x, w), b);
}

Var Policy::aggregated(num::Tape& tape, const ValueGrid& source_actions) {
  if (!is_multipolar()) throw PolicyMismatchError("aggregated: not a MULTIPOLAR policy");
  Var theta = tape.param(params_.get("agg/theta"));
  return num::aggregate_rows(theta, tape.constant(source_actions));
}

Var Policy::residual(num::Tape& tape, const ValueGrid& obs) {
  if (obs.rank() != 2 || obs.cols() != obs_dim_) {
    throw PolicyMismatchError("policy: observation batch has shape " + num::shape_string(obs.shape()));
  }
  if (is_multipolar() && aux_mode_ == AuxMode::Stateless) {
    Var bias = tape.param(params_.get("aux/bias"));
    return num::add_row_vector(tape.constant(ValueGrid({obs.rows(), spec_.dim}, 0.0)), bias);
  }
  return dense_stack(tape, "pi", tape.constant(obs));
}

Var Policy::scores(num::Tape& tape, const ValueGrid& obs, const ValueGrid& source_actions) {
  if (!is_multipolar()) return residual(tape, obs);
  if (source_actions.rank() != 2 || source_actions.rows() != obs.rows() ||
      source_actions.cols() != source_width()) {
    throw PolicyMismatchError("policy: source-action batch has shape " +
                              num::shape_string(source_actions.shape()));
  }
  return num::add(aggregated(tape, source_actions), residual(tape, obs));
}

Var Policy::value(num::Tape& tape, const ValueGrid& obs) {
  if (obs.rank() != 2 || obs.cols() != obs_dim_) {
    throw PolicyMismatchError("policy: observation batch has shape " + num::shape_string(obs.shape()));
  }
  return dense_stack(tape, "vf", tape.constant(obs));
}

Var Policy::log_std(num::Tape& tape) {
  if (spec_.discrete) throw PolicyMismatchError("log_std: discrete policy");
  return tape.param(params_.get("log_std"));
}

Var Policy::log_prob(Var scores, Var log_std, const ValueGrid& actions) {
  num::Tape& tape = scores.tape();
  if (spec_.discrete) {
    std::vector<std::size_t> idx(actions.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::size_t>(actions[i]);
    return num::pick(num::log_softmax_rows(scores), std::move(idx));
  }
  return num::gaussian_logprob(scores, log_std, tape.constant(actions));
}

Var Policy::entropy(Var scores, Var log_std) {
  num::Tape& tape = scores.tape();
  if (spec_.discrete) {
    Var lsm = num::log_softmax_rows(scores);
    return num::scale(num::sum_rows(num::mul(num::exp(lsm), lsm)), -1.0);
  }
  const double c = static_cast<double>(spec_.dim) * (0.5 + kHalfLog2Pi);
  const std::size_t rows = scores.value().rows();
  return num::add(tape.constant(ValueGrid({rows}, c)), num::sum(log_std));
}

ActResult Policy::act_prepared(std::span<const double> norm_obs, std::span<const double> source_row,
                               ActMode mode, Rng& rng) {
  std::vector<double> f;
  if (is_multipolar()) {
    if (source_row.size() != source_width()) {
      throw PolicyMismatchError("act: source row has the wrong width");
    }
    if (aux_mode_ == AuxMode::Network) {
      f = eval_stack(params_, "pi", arch_.hidden.size(), norm_obs);
    } else {
      const auto& bias = params_.get("aux/bias").value;
      f.assign(bias.values().begin(), bias.values().end());
    }
    const ValueGrid& theta = params_.get("agg/theta").value;
    const std::size_t k_src = sources_.k();
    const std::size_t d_dim = spec_.dim;
    const double inv_k = 1.0 / static_cast<double>(k_src);
    for (std::size_t d = 0; d < d_dim; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < k_src; ++k) s += theta[k * d_dim + d] * source_row[k * d_dim + d];
      f[d] = s * inv_k + f[d];
    }
    for (double v : f) {
      if (!std::isfinite(v)) throw num::NumericError("policy: non-finite network output");
    }
  } else {
    f = eval_stack(params_, "pi", arch_.hidden.size(), norm_obs);
  }

  ActResult r;
  if (spec_.discrete) {
    const auto lsm = log_softmax(f);
    std::size_t a = 0;
    if (mode == ActMode::Deterministic) {
      a = argmax(f);
    } else {
      const double u = rng.uniform();
      double cdf = 0.0;
      a = f.size() - 1;
      for (std::size_t j = 0; j < f.size(); ++j) {
        cdf += std::exp(lsm[j]);
        if (u < cdf) {
          a = j;
          break;
        }
      }
    }
    r.action = envs::Action::discrete(a);
    r.action_row = {static_cast<double>(a)};
    r.log_prob = lsm[a];
  } else {
    const auto& ls = params_.get("log_std").value;
    std::vector<double> a(f.size());
    for (std::size_t d = 0; d < f.size(); ++d) {
      a[d] = mode == ActMode::Deterministic ? f[d] : f[d] + std::exp(ls[d]) * rng.normal();
    }
    r.log_prob = num::gaussian_logprob(f, ls.values(), a);
    r.action_row = a;
    r.action = envs::Action::continuous(std::move(a));
  }
  r.value = value_of(norm_obs);
  return r;
}

double Policy::value_of(std::span<const double> norm_obs) {
  return eval_stack(params_, "vf", arch_.hidden.size(), norm_obs)[0];
}

ActResult Policy::act(const ValueGrid& raw_obs, ActMode mode, Rng& rng) {
  std::vector<double> norm(raw_obs.size());
  normalize_into(raw_obs.values(), norm);
  std::vector<double> src(source_width());
  if (is_multipolar()) sources_.actions_into(raw_obs.values(), src);
  return act_prepared(norm, src, mode, rng);
}

// ---------------------------------------------------------------------------

ValueGrid source_actions(const SourceSet& sources, const ValueGrid& obs) {
  if (obs.size() != sources.obs_dim()) {
    throw PolicyMismatchError("source_actions: observation has dimension " +
                              std::to_string(obs.size()) + ", expected " +
                              std::to_string(sources.obs_dim()));
  }
  ValueGrid out({sources.k(), sources.action_dim()}, 0.0);
  sources.actions_into(obs.values(), out.values());
  return out;
}

ValueGrid aggregate(const ValueGrid& theta, const ValueGrid& actions) {
  num::Tape tape;
  return num::aggregate(tape.constant(theta), tape.constant(actions)).value();
}

ValueGrid multipolar_forward(Policy& head, const ValueGrid& raw_obs) {
  if (!head.is_multipolar()) throw PolicyMismatchError("multipolar_forward: not a MULTIPOLAR policy");
  const ValueGrid a = source_actions(head.sources(), raw_obs);
  num::Tape tape;
  Var f = head.scores(tape, as_row(head.normalize(raw_obs).values()),
                      a.reshaped({1, a.size()}));
  return f.value().reshaped({head.action_dim()});
}

Policy degrade(Policy head, DegradeMode mode) {
  if (!head.is_multipolar()) throw PolicyMismatchError("degrade: not a MULTIPOLAR policy");
  if (mode == DegradeMode::FixedWeights) {
    auto& theta = head.params().get("agg/theta");
    theta.value.fill(1.0);
    theta.grad.fill(0.0);
    theta.trainable = false;
    return head;
  }
  if (head.aux_mode() == AuxMode::Stateless) return head;
  num::ParamSet params;
  for (const auto& [name, p] : head.params()) {
    if (name.rfind("pi/", 0) == 0) continue;
    params.add(name, p.value, p.trainable);
  }
  params.add("aux/bias", ValueGrid({head.action_dim()}, 0.0));
  return Policy::assemble(PolicyKind::Multipolar, head.family(), head.obs_dim(), head.action_spec(),
                          head.architecture(), AuxMode::Stateless, head.sources(), std::move(params),
                          head.normalizes_obs(), head.obs_moments());
}

}  // namespace mpolar::policy
