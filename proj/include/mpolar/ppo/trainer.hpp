#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "mpolar/numcore/adam.hpp"
#include "mpolar/numcore/tape.hpp"
#include "mpolar/ppo/rollout.hpp"

namespace mpolar::ppo {

// A training run produced a non-finite loss or gradient.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Minibatch {
  ValueGrid observations;    // [m x obs_dim]
  ValueGrid source_actions;  // [m x K*D]
  ValueGrid actions;         // [m x action_width]
  ValueGrid old_log_probs;   // [m]
  ValueGrid advantages;      // [m]
  ValueGrid returns;         // [m x 1]
};

// Gathers rows idx of the buffer; advantages are normalized within the batch
// when normalize is set.
Minibatch gather_minibatch(const RolloutBuffer& buffer, std::span<const std::size_t> idx,
                           bool normalize = true);

struct LossTerms {
  num::Var total;
  num::Var policy;   // -mean(min(rho A, clip(rho) A))
  num::Var value;    // mean((V - R)^2)
  num::Var entropy;  // mean entropy
  num::Var ratio;    // [m]
};

LossTerms ppo_loss(num::Tape& tape, policy::Policy& policy, const Minibatch& batch,
                   const TrainConfig& config);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  std::size_t minibatches = 0;
};

// Epochs of shuffled minibatch Adam steps over one rollout. Statistics are
// means over all minibatches.
UpdateStats ppo_update(policy::Policy& policy, const RolloutBuffer& buffer,
                       const TrainConfig& config, num::Adam& adam, Rng& rng);

struct UpdateInfo {
  std::size_t index = 0;     // 1-based update counter
  std::uint64_t samples = 0;  // environment samples consumed so far
  UpdateStats stats;
};

struct TrainCallbacks {
  std::function<void(const UpdateInfo&, const policy::Policy&)> on_update;
};

struct TrainResult {
  std::vector<EpisodeRecord> episodes;
  std::vector<UpdateStats> updates;
  std::uint64_t samples = 0;
};

// Collect / GAE / update until config.total_samples environment samples have
// been consumed; the last rollout is shortened to land on the budget exactly.
TrainResult train(policy::Policy& policy, Environment& env, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});
TrainResult train(policy::Policy& policy, const envs::EnvInstance& instance,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

// Mean raw reward of the last n finished episodes (all of them if fewer).
double final_mean_reward(const std::vector<EpisodeRecord>& episodes, std::size_t n = 100);

}  // namespace mpolar::ppo
