#include "mpolar/ppo/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mpolar::ppo {

Minibatch gather_minibatch(const RolloutBuffer& b, std::span<const std::size_t> idx,
                           bool normalize) {
  const std::size_t m = idx.size();
  Minibatch mb{ValueGrid({m, b.obs_dim}, 0.0),      ValueGrid({m, b.source_width}, 0.0),
               ValueGrid({m, b.action_width}, 0.0), ValueGrid({m}, 0.0),
               ValueGrid({m}, 0.0),                 ValueGrid({m, 1}, 0.0)};
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = idx[r];
    if (i >= b.size) throw std::out_of_range("gather_minibatch: index out of range");
    std::copy_n(b.observations.begin() + i * b.obs_dim, b.obs_dim, mb.observations.row(r).begin());
    if (b.source_width > 0) {
      std::copy_n(b.source_actions.begin() + i * b.source_width, b.source_width,
                  mb.source_actions.row(r).begin());
    }
    std::copy_n(b.actions.begin() + i * b.action_width, b.action_width, mb.actions.row(r).begin());
    mb.old_log_probs[r] = b.log_probs[i];
    mb.advantages[r] = b.advantages[i];
    mb.returns[r] = b.returns[i];
  }
  if (normalize) normalize_advantages(mb.advantages.values());
  return mb;
}

LossTerms ppo_loss(num::Tape& tape, policy::Policy& pol, const Minibatch& mb,
                   const TrainConfig& config) {
  LossTerms t;
  num::Var scores = pol.scores(tape, mb.observations, mb.source_actions);
  num::Var log_std = pol.action_spec().discrete ? num::Var{} : pol.log_std(tape);
  num::Var logp = pol.log_prob(scores, log_std, mb.actions);
  t.ratio = num::exp(num::sub(logp, tape.constant(mb.old_log_probs)));
  num::Var adv = tape.constant(mb.advantages);
  num::Var surr1 = num::mul(t.ratio, adv);
  num::Var surr2 =
      num::mul(num::clamp(t.ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio), adv);
  t.policy = num::scale(num::mean(num::minimum(surr1, surr2)), -1.0);

  num::Var err = num::sub(pol.value(tape, mb.observations), tape.constant(mb.returns));
  t.value = num::mean(num::mul(err, err));
  t.entropy = num::mean(pol.entropy(scores, log_std));

  t.total = num::add(t.policy, num::scale(t.value, config.value_coef));
  if (config.entropy_coef != 0.0) {
    t.total = num::sub(t.total, num::scale(t.entropy, config.entropy_coef));
  }
  return t;
}

UpdateStats ppo_update(policy::Policy& pol, const RolloutBuffer& buffer, const TrainConfig& config,
                       num::Adam& adam, Rng& rng) {
  UpdateStats s;
  const std::size_t h = buffer.size;
  if (h == 0) return s;
  const std::size_t n_mb = std::min(config.minibatch_count, h);
  std::vector<std::size_t> order(h);

  for (std::size_t epoch = 0; epoch < config.epochs_per_rollout; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::size_t start = 0;
    for (std::size_t j = 0; j < n_mb; ++j) {
      const std::size_t len = h / n_mb + (j < h % n_mb ? 1 : 0);
      const auto idx = std::span<const std::size_t>(order).subspan(start, len);
      start += len;

      const Minibatch mb = gather_minibatch(buffer, idx);
      num::Tape tape;
      LossTerms loss = ppo_loss(tape, pol, mb, config);
      const double total = loss.total.value().item();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite PPO loss at epoch " << epoch << ", minibatch " << j
            << ": policy=" << loss.policy.value().item() << " value=" << loss.value.value().item()
            << " entropy=" << loss.entropy.value().item();
        throw TrainingError(msg.str());
      }
      pol.params().zero_grad();
      tape.backward(loss.total);
      num::AdamStepInfo info;
      try {
        info = adam.step(pol.params());
      } catch (const num::NumericError& e) {
        throw TrainingError(std::string("PPO update at epoch ") + std::to_string(epoch) + ": " +
                            e.what());
      }

      const auto& ratio = loss.ratio.value();
      double kl = 0.0;
      double clipped = 0.0;
      for (std::size_t r = 0; r < len; ++r) {
        const double d = std::log(ratio[r]);
        kl += 0.5 * d * d;
        if (std::abs(ratio[r] - 1.0) > config.clip_ratio) clipped += 1.0;
      }
      s.policy_loss += loss.policy.value().item();
      s.value_loss += loss.value.value().item();
      s.entropy += loss.entropy.value().item();
      s.approx_kl += kl / static_cast<double>(len);
      s.clip_fraction += clipped / static_cast<double>(len);
      s.grad_norm += info.grad_norm;
      ++s.minibatches;
    }
  }
  const double n = static_cast<double>(s.minibatches);
  s.policy_loss /= n;
  s.value_loss /= n;
  s.entropy /= n;
  s.approx_kl /= n;
  s.clip_fraction /= n;
  s.grad_norm /= n;
  return s;
}

TrainResult train(policy::Policy& pol, Environment& env, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
  config.validate();
  TrainResult result;
  if (config.total_samples == 0) return result;
  pol.set_normalize_obs(config.normalize_obs);

  const Rng root(config.seed);
  RolloutCollector collector(env, config, root.fork("rollout"));
  Rng shuffle_rng = root.fork("minibatches");
  num::Adam adam(num::AdamConfig{config.lr, 0.9, 0.999, config.adam_eps, config.grad_clip});
  RolloutBuffer buffer;

  std::size_t index = 0;
  while (collector.samples() < config.total_samples) {
    const auto remaining = config.total_samples - collector.samples();
    const std::size_t h = static_cast<std::size_t>(
        std::min<std::uint64_t>(config.horizon, remaining));
    collector.collect(pol, h, buffer);
    compute_gae(buffer, config.gamma, config.gae_lambda);
    UpdateInfo info{++index, collector.samples(), ppo_update(pol, buffer, config, adam, shuffle_rng)};
    result.updates.push_back(info.stats);
    if (callbacks.on_update) callbacks.on_update(info, pol);
  }
  result.episodes = collector.episodes();
  result.samples = collector.samples();
  return result;
}

TrainResult train(policy::Policy& pol, const envs::EnvInstance& instance, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
  InstanceEnvironment env(instance);
  return train(pol, env, config, callbacks);
}

double final_mean_reward(const std::vector<EpisodeRecord>& episodes, std::size_t n) {
  if (episodes.empty()) throw std::invalid_argument("final_mean_reward: no episodes");
  const std::size_t k = std::min(n, episodes.size());
  double s = 0.0;
  for (std::size_t i = episodes.size() - k; i < episodes.size(); ++i) s += episodes[i].reward;
  return s / static_cast<double>(k);
}

}  // namespace mpolar::ppo
