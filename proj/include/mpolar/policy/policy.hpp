#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mpolar/envs/envs.hpp"
#include "mpolar/numcore/param_set.hpp"
#include "mpolar/numcore/rng.hpp"
#include "mpolar/numcore/tape.hpp"
#include "mpolar/ppo/running_moments.hpp"

namespace mpolar::policy {

using envs::ActionSpec;
using num::ValueGrid;
using num::Var;

// Raised when a policy does not fit the environment or source set it is used with.
class PolicyMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kObsClip = 10.0;

enum class PolicyKind { Mlp, Multipolar };

// How the residual term of a MULTIPOLAR head is produced.
enum class AuxMode { Network, Stateless };

enum class ActMode { Sample, Deterministic };

struct Architecture {
  std::vector<std::size_t> hidden{64, 64};
};

class Policy;

// Frozen deterministic policy mu_i: observation -> action. Continuous sources
// emit their mean action, discrete sources the one-hot of their argmax. Each
// source normalizes the raw observation with its own training-time statistics.
class SourcePolicy {
 public:
  explicit SourcePolicy(std::shared_ptr<const Policy> network);

  ActionSpec action_spec() const;
  std::size_t obs_dim() const;
  std::optional<envs::Family> family() const;
  // Writes the D-dimensional action for one raw observation into out.
  void act(std::span<const double> raw_obs, std::span<double> out) const;
  const Policy& network() const { return *network_; }

 private:
  std::shared_ptr<const Policy> network_;
};

// Ordered collection L = {mu_1, ..., mu_K} sharing one observation/action space.
class SourceSet {
 public:
  SourceSet() = default;
  explicit SourceSet(std::vector<std::shared_ptr<const SourcePolicy>> sources);

  std::size_t k() const { return sources_.size(); }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t obs_dim() const { return obs_dim_; }
  const ActionSpec& action_spec() const { return spec_; }
  const SourcePolicy& at(std::size_t i) const { return *sources_.at(i); }
  const std::vector<std::shared_ptr<const SourcePolicy>>& sources() const { return sources_; }

  // Row-major K*D actions for one raw observation.
  void actions_into(std::span<const double> raw_obs, std::span<double> out) const;

 private:
  std::vector<std::shared_ptr<const SourcePolicy>> sources_;
  ActionSpec spec_;
  std::size_t action_dim_ = 0;
  std::size_t obs_dim_ = 0;
};

struct ActResult {
  envs::Action action;
  // Stored form of the action: [D] sampled values (continuous, unclipped) or
  // the chosen index as a single value (discrete).
  std::vector<double> action_row;
  double log_prob = 0.0;
  double value = 0.0;
};

// Gaussian/categorical policy with a separate value network. An MLP policy
// maps observations straight to action scores; a MULTIPOLAR policy adds the
// adaptive aggregation of source actions to a residual term.
//
// Parameter names: "pi/<layer>/{w,b}" policy network (F_aux for MULTIPOLAR),
// "vf/<layer>/{w,b}" value network, "log_std", "agg/theta" [K x D],
// "aux/bias" [D] for the state-independent residual.
class Policy {
 public:
  static Policy mlp(std::size_t obs_dim, ActionSpec spec, const Architecture& arch,
                    std::uint64_t seed);
  static Policy mlp(envs::Family family, const Architecture& arch, std::uint64_t seed);
  static Policy multipolar(std::size_t obs_dim, ActionSpec spec, SourceSet sources,
                           const Architecture& arch, std::uint64_t seed,
                           AuxMode aux = AuxMode::Network);
  static Policy multipolar(envs::Family family, SourceSet sources, const Architecture& arch,
                           std::uint64_t seed, AuxMode aux = AuxMode::Network);

  PolicyKind kind() const { return kind_; }
  bool is_multipolar() const { return kind_ == PolicyKind::Multipolar; }
  std::optional<envs::Family> family() const { return family_; }
  void set_family(std::optional<envs::Family> f) { family_ = f; }
  const ActionSpec& action_spec() const { return spec_; }
  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t action_dim() const { return spec_.dim; }
  const Architecture& architecture() const { return arch_; }
  AuxMode aux_mode() const { return aux_mode_; }
  bool aggregation_trainable() const;
  const SourceSet& sources() const { return sources_; }
  // Width of a flattened source-action row (K*D, or 0 for MLP policies).
  std::size_t source_width() const { return sources_.k() * sources_.action_dim(); }

  num::ParamSet& params() { return params_; }
  const num::ParamSet& params() const { return params_; }

  // Observation normalization. Disabled policies pass observations through.
  bool normalizes_obs() const { return normalize_obs_; }
  void set_normalize_obs(bool on) { normalize_obs_ = on; }
  ppo::RunningMoments& obs_moments() { return obs_moments_; }
  const ppo::RunningMoments& obs_moments() const { return obs_moments_; }
  void normalize_into(std::span<const double> raw, std::span<double> out) const;
  ValueGrid normalize(const ValueGrid& raw) const;

  // Batched forward passes. obs is [m x obs_dim] normalized; source_actions is
  // [m x K*D] (ignored for MLP policies). Returns [m x D] action scores: the
  // Gaussian mean for continuous spaces, logits for discrete ones.
  Var scores(num::Tape& tape, const ValueGrid& obs, const ValueGrid& source_actions);
  // Components of the MULTIPOLAR scores, [m x D] each.
  Var aggregated(num::Tape& tape, const ValueGrid& source_actions);
  Var residual(num::Tape& tape, const ValueGrid& obs);
  // [m x 1]
  Var value(num::Tape& tape, const ValueGrid& obs);
  Var log_std(num::Tape& tape);
  // Per-row log probability of stored actions ([m x 1] indices or [m x D] values).
  Var log_prob(Var scores, Var log_std, const ValueGrid& actions);
  // Per-row entropy of the action distribution, [m].
  Var entropy(Var scores, Var log_std);

  // Raw observation in, action out. Source actions and normalization are
  // handled internally.
  ActResult act(const ValueGrid& raw_obs, ActMode mode, Rng& rng);
  // Same, but for callers that already hold the normalized observation and
  // the flattened source actions.
  ActResult act_prepared(std::span<const double> norm_obs, std::span<const double> source_row,
                         ActMode mode, Rng& rng);
  double value_of(std::span<const double> norm_obs);

  // Assembles a policy from deserialized parts (used by load_policy).
  static Policy assemble(PolicyKind kind, std::optional<envs::Family> family,
                         std::size_t obs_dim, ActionSpec spec, Architecture arch, AuxMode aux,
                         SourceSet sources, num::ParamSet params, bool normalize_obs,
                         ppo::RunningMoments moments);

 private:
  Policy() = default;
  Var dense_stack(num::Tape& tape, const std::string& prefix, Var x);

  PolicyKind kind_ = PolicyKind::Mlp;
  std::optional<envs::Family> family_;
  std::size_t obs_dim_ = 0;
  ActionSpec spec_;
  Architecture arch_;
  AuxMode aux_mode_ = AuxMode::Network;
  SourceSet sources_;
  num::ParamSet params_;
  bool normalize_obs_ = false;
  ppo::RunningMoments obs_moments_;
};

// Stacked deterministic source actions A_t for one raw observation, [K x D].
ValueGrid source_actions(const SourceSet& sources, const ValueGrid& obs);
// (1/K) * sum_k theta[k, d] * A[k, d], [D].
ValueGrid aggregate(const ValueGrid& theta, const ValueGrid& actions);
// F(s) = aggregate(theta_agg, A_t) + F_aux(s) for one raw observation, [D].
ValueGrid multipolar_forward(Policy& head, const ValueGrid& raw_obs);

enum class DegradeMode { FixedWeights, StatelessAux };
// fixed_weights: theta_agg pinned to all-ones and excluded from optimization.
// stateless_aux: the residual network is replaced by a trainable D-vector.
Policy degrade(Policy head, DegradeMode mode);

// Orthogonal initialization of a [rows x cols] matrix scaled by gain.
ValueGrid orthogonal(std::size_t rows, std::size_t cols, double gain, Rng& rng);

}  // namespace mpolar::policy
