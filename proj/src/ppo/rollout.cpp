#include "mpolar/ppo/rollout.hpp"

#include <algorithm>
#include <cmath>

namespace mpolar::ppo {

namespace {
constexpr double kRewardClip = 10.0;
}  // namespace

InstanceEnvironment::InstanceEnvironment(envs::EnvInstance instance)
    : instance_(std::move(instance)) {
  envs::validate_instance(instance_);
}

std::size_t InstanceEnvironment::obs_dim() const { return envs::observation_dim(instance_.family); }

envs::ActionSpec InstanceEnvironment::action_spec() const {
  return envs::action_spec(instance_.family);
}

std::vector<double> InstanceEnvironment::reset(Rng& episode_rng) {
  state_ = envs::reset(instance_, episode_rng);
  started_ = true;
  const auto& o = state_.observation.values();
  return {o.begin(), o.end()};
}

Transition InstanceEnvironment::step(const envs::Action& action) {
  if (!started_) throw envs::EnvError("step before reset");
  auto r = envs::step(instance_, state_, action);
  state_ = std::move(r.next_state);
  const auto& o = state_.observation.values();
  return {{o.begin(), o.end()}, r.reward, r.terminal, r.truncated};
}

void RolloutBuffer::reset(std::size_t horizon, std::size_t obs, std::size_t act, std::size_t src) {
  size = horizon;
  obs_dim = obs;
  action_width = act;
  source_width = src;
  observations.assign(horizon * obs, 0.0);
  source_actions.assign(horizon * src, 0.0);
  actions.assign(horizon * act, 0.0);
  rewards.assign(horizon, 0.0);
  raw_rewards.assign(horizon, 0.0);
  values.assign(horizon, 0.0);
  log_probs.assign(horizon, 0.0);
  terminals.assign(horizon, 0);
  truncateds.assign(horizon, 0);
  bootstrap_values.assign(horizon, 0.0);
  last_value = 0.0;
  advantages.assign(horizon, 0.0);
  returns.assign(horizon, 0.0);
}

void compute_gae(RolloutBuffer& b, double gamma, double lambda) {
  const std::size_t h = b.size;
  b.advantages.assign(h, 0.0);
  b.returns.assign(h, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = h; i-- > 0;) {
    double next_value = 0.0;
    double carry = 0.0;
    if (b.terminals[i]) {
      next_value = 0.0;
    } else if (b.truncateds[i]) {
      next_value = b.bootstrap_values[i];
    } else if (i + 1 == h) {
      next_value = b.last_value;
    } else {
      next_value = b.values[i + 1];
      carry = 1.0;
    }
    const double delta = b.rewards[i] + gamma * next_value - b.values[i];
    next_adv = delta + gamma * lambda * carry * next_adv;
    b.advantages[i] = next_adv;
    b.returns[i] = next_adv + b.values[i];
  }
}

void normalize_advantages(std::span<double> adv, double eps) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  for (double& a : adv) a = (a - mean) / (sd + eps);
}

RolloutCollector::RolloutCollector(Environment& env, const TrainConfig& config, Rng rng)
    : env_(env),
      config_(config),
      episode_rng_(rng.fork("episodes")),
      action_rng_(rng.fork("actions")) {}

void RolloutCollector::begin_episode() {
  Rng ep = episode_rng_.fork(episode_index_++);
  obs_ = env_.reset(ep);
  in_episode_ = true;
  episode_reward_ = 0.0;
  episode_length_ = 0;
}

void RolloutCollector::collect(policy::Policy& pol, std::size_t horizon, RolloutBuffer& b) {
  if (pol.obs_dim() != env_.obs_dim() || !(pol.action_spec() == env_.action_spec())) {
    throw policy::PolicyMismatchError("rollout: policy does not match the environment");
  }
  const std::size_t od = pol.obs_dim();
  const std::size_t aw = pol.action_spec().discrete ? 1 : pol.action_dim();
  const std::size_t sw = pol.source_width();
  b.reset(horizon, od, aw, sw);
  std::vector<double> norm(od);

  for (std::size_t t = 0; t < horizon; ++t) {
    if (!in_episode_) begin_episode();
    if (pol.normalizes_obs()) pol.obs_moments().update(obs_);
    pol.normalize_into(obs_, norm);
    std::copy(norm.begin(), norm.end(), b.observations.begin() + t * od);
    std::span<double> src(b.source_actions.data() + t * sw, sw);
    if (sw > 0) pol.sources().actions_into(obs_, src);

    auto act = pol.act_prepared(norm, src, policy::ActMode::Sample, action_rng_);
    std::copy(act.action_row.begin(), act.action_row.end(), b.actions.begin() + t * aw);
    b.values[t] = act.value;
    b.log_probs[t] = act.log_prob;

    Transition tr = env_.step(act.action);
    ++samples_;
    ++episode_length_;
    episode_reward_ += tr.reward;
    b.raw_rewards[t] = tr.reward;
    if (config_.normalize_reward) {
      discounted_return_ = discounted_return_ * config_.gamma + tr.reward;
      const double ret[1] = {discounted_return_};
      return_moments_.update(ret);
      b.rewards[t] = std::clamp(tr.reward / std::sqrt(return_moments_.variance(0) + 1e-8),
                                -kRewardClip, kRewardClip);
    } else {
      b.rewards[t] = tr.reward;
    }
    b.terminals[t] = tr.terminal ? 1 : 0;
    b.truncateds[t] = tr.truncated && !tr.terminal ? 1 : 0;

    if (tr.terminal || tr.truncated) {
      if (b.truncateds[t]) {
        pol.normalize_into(tr.observation, norm);
        b.bootstrap_values[t] = pol.value_of(norm);
      }
      episodes_.push_back({samples_, episode_reward_, episode_length_});
      discounted_return_ = 0.0;
      in_episode_ = false;
    } else {
      obs_ = std::move(tr.observation);
    }
  }
  if (in_episode_) {
    pol.normalize_into(obs_, norm);
    b.last_value = pol.value_of(norm);
  }
}

}  // namespace mpolar::ppo
