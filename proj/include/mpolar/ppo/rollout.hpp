#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mpolar/envs/envs.hpp"
#include "mpolar/numcore/rng.hpp"
#include "mpolar/numcore/value_grid.hpp"
#include "mpolar/policy/policy.hpp"
#include "mpolar/ppo/config.hpp"
#include "mpolar/ppo/running_moments.hpp"

namespace mpolar::ppo {

using num::ValueGrid;

struct Transition {
  std::vector<double> observation;  // raw observation after the step
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
};

// Episodic environment seen by the trainer. reset() starts a new episode
// whose stochasticity comes entirely from the given stream.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t obs_dim() const = 0;
  virtual envs::ActionSpec action_spec() const = 0;
  virtual std::vector<double> reset(Rng& episode_rng) = 0;
  virtual Transition step(const envs::Action& action) = 0;
};

class InstanceEnvironment : public Environment {
 public:
  explicit InstanceEnvironment(envs::EnvInstance instance);
  std::size_t obs_dim() const override;
  envs::ActionSpec action_spec() const override;
  std::vector<double> reset(Rng& episode_rng) override;
  Transition step(const envs::Action& action) override;
  const envs::EnvInstance& instance() const { return instance_; }

 private:
  envs::EnvInstance instance_;
  envs::EnvState state_;
  bool started_ = false;
};

struct RolloutBuffer {
  std::size_t size = 0;
  std::size_t obs_dim = 0;
  std::size_t action_width = 0;  // 1 for discrete (index), D for continuous
  std::size_t source_width = 0;  // K*D for MULTIPOLAR, 0 otherwise
  std::vector<double> observations;    // [H x obs_dim], normalized
  std::vector<double> source_actions;  // [H x source_width]
  std::vector<double> actions;         // [H x action_width]
  std::vector<double> rewards;         // normalized
  std::vector<double> raw_rewards;
  std::vector<double> values;
  std::vector<double> log_probs;
  std::vector<std::uint8_t> terminals;
  std::vector<std::uint8_t> truncateds;
  // V(final observation) at truncated steps, 0 elsewhere.
  std::vector<double> bootstrap_values;
  // V of the observation following the last step (used when it is not done).
  double last_value = 0.0;
  std::vector<double> advantages;
  std::vector<double> returns;

  void reset(std::size_t horizon, std::size_t obs, std::size_t act, std::size_t src);
};

// GAE with truncation handling: terminal steps have no successor value,
// truncated steps bootstrap from bootstrap_values, and the recursion never
// crosses an episode boundary. Fills advantages and returns (= A + V).
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

// In place: (a - mean) / (std + eps), std the population standard deviation.
void normalize_advantages(std::span<double> adv, double eps = 1e-8);

struct EpisodeRecord {
  std::uint64_t samples = 0;  // cumulative environment samples at episode end
  double reward = 0.0;        // raw, undiscounted episode reward
  std::size_t length = 0;
};

// Steps one environment with a policy, carrying the unfinished episode and
// the reward-normalization state across rollouts.
class RolloutCollector {
 public:
  RolloutCollector(Environment& env, const TrainConfig& config, Rng rng);

  void collect(policy::Policy& policy, std::size_t horizon, RolloutBuffer& buffer);

  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  std::uint64_t samples() const { return samples_; }
  const RunningMoments& return_moments() const { return return_moments_; }

 private:
  void begin_episode();

  Environment& env_;
  TrainConfig config_;
  Rng episode_rng_;
  Rng action_rng_;
  std::uint64_t episode_index_ = 0;
  bool in_episode_ = false;
  std::vector<double> obs_;
  double episode_reward_ = 0.0;
  std::size_t episode_length_ = 0;
  double discounted_return_ = 0.0;
  RunningMoments return_moments_{1};
  std::uint64_t samples_ = 0;
  std::vector<EpisodeRecord> episodes_;
};

}  // namespace mpolar::ppo
