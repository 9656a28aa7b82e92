#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mpolar/ppo/trainer.hpp"
#include "policy_support.hpp"

using namespace mpolar;
using namespace mpolar::ppo;
using envs::Family;
using policy::Policy;
using testing::finite_difference_check;
using testing::random_grid;
using testing::random_sources;
using testing::randomize;

namespace {

RolloutBuffer random_buffer(Rng& rng, std::size_t h) {
  RolloutBuffer b;
  b.reset(h, 1, 1, 0);
  for (std::size_t i = 0; i < h; ++i) {
    b.rewards[i] = rng.uniform(-1, 2);
    b.values[i] = rng.uniform(-3, 3);
    const double u = rng.uniform();
    b.terminals[i] = u < 0.1;
    b.truncateds[i] = !b.terminals[i] && u < 0.2;
    b.bootstrap_values[i] = b.truncateds[i] ? rng.uniform(-3, 3) : 0.0;
  }
  b.last_value = rng.uniform(-3, 3);
  return b;
}

// Successor value of step i and whether step i ends an episode.
std::pair<double, bool> successor(const RolloutBuffer& b, std::size_t i) {
  if (b.terminals[i]) return {0.0, true};
  if (b.truncateds[i]) return {b.bootstrap_values[i], true};
  if (i + 1 == b.size) return {b.last_value, true};
  return {b.values[i + 1], false};
}

// O(H^2) forward sum: A_i = sum_l (gamma lambda)^l delta_{i+l} until the episode ends.
std::vector<double> oracle_gae(const RolloutBuffer& b, double gamma, double lambda) {
  std::vector<double> delta(b.size);
  for (std::size_t i = 0; i < b.size; ++i) {
    delta[i] = b.rewards[i] + gamma * successor(b, i).first - b.values[i];
  }
  std::vector<double> adv(b.size);
  for (std::size_t i = 0; i < b.size; ++i) {
    double s = 0, w = 1;
    for (std::size_t j = i; j < b.size; ++j) {
      s += w * delta[j];
      if (successor(b, j).second) break;
      w *= gamma * lambda;
    }
    adv[i] = s;
  }
  return adv;
}

// Environment whose episodes last `length` steps and then terminate or truncate.
class CountingEnv : public Environment {
 public:
  CountingEnv(std::size_t length, bool truncate) : length_(length), truncate_(truncate) {}
  std::size_t obs_dim() const override { return 2; }
  envs::ActionSpec action_spec() const override { return {true, 2, 0, 0}; }
  std::vector<double> reset(Rng& rng) override {
    t_ = 0;
    offset_ = rng.uniform(-1, 1);
    return obs();
  }
  Transition step(const envs::Action&) override {
    ++t_;
    Transition tr{obs(), 1.0 + 0.5 * double(t_), false, false};
    if (t_ == length_) (truncate_ ? tr.truncated : tr.terminal) = true;
    return tr;
  }

 private:
  std::vector<double> obs() const { return {double(t_) + offset_, 3.0 * offset_ - double(t_)}; }
  std::size_t length_;
  bool truncate_;
  std::size_t t_ = 0;
  double offset_ = 0;
};

// One-step episodes: the observation is a one-hot state, action == state pays 1.
class BanditEnv : public Environment {
 public:
  std::size_t obs_dim() const override { return 2; }
  envs::ActionSpec action_spec() const override { return {true, 2, 0, 0}; }
  std::vector<double> reset(Rng& rng) override {
    state_ = rng.index(2);
    return onehot();
  }
  Transition step(const envs::Action& a) override {
    return {onehot(), a.index == state_ ? 1.0 : 0.0, true, false};
  }
  std::vector<double> onehot() const { return {state_ == 0 ? 1.0 : 0.0, state_ == 1 ? 1.0 : 0.0}; }

 private:
  std::size_t state_ = 0;
};

TrainConfig small_config() {
  TrainConfig c = TrainConfig::defaults(Family::CartPole);
  c.horizon = 64;
  c.minibatch_count = 4;
  c.epochs_per_rollout = 3;
  c.total_samples = 512;
  c.seed = 5;
  return c;
}

Minibatch random_minibatch(Policy& p, Rng& rng, std::size_t m) {
  Minibatch mb;
  mb.observations = random_grid({m, p.obs_dim()}, rng, -1.5, 1.5);
  mb.source_actions = ValueGrid({m, p.source_width()}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    p.sources().actions_into(mb.observations.row(i), mb.source_actions.row(i));
  }
  const bool discrete = p.action_spec().discrete;
  mb.actions = ValueGrid({m, discrete ? 1 : p.action_dim()}, 0.0);
  for (double& a : mb.actions.values()) {
    a = discrete ? double(rng.index(p.action_spec().dim)) : rng.uniform(-2, 2);
  }
  num::Tape t;
  const ValueGrid logp = p.log_prob(p.scores(t, mb.observations, mb.source_actions),
                                    discrete ? num::Var{} : p.log_std(t), mb.actions)
                             .value();
  mb.old_log_probs = logp;
  for (double& v : mb.old_log_probs.values()) v += rng.uniform(-0.4, 0.4);
  mb.advantages = random_grid({m}, rng, -2, 2);
  mb.returns = random_grid({m, 1}, rng, -2, 2);
  return mb;
}

}  // namespace

TEST_SUITE("properties") {

TEST_CASE("GAE matches the forward-sum oracle and the lambda identities") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    RolloutBuffer b = random_buffer(rng, 1 + rng.index(64));
    const double gamma = rng.uniform(0.8, 1.0), lambda = rng.uniform(0.0, 1.0);
    compute_gae(b, gamma, lambda);
    const auto ref = oracle_gae(b, gamma, lambda);
    for (std::size_t i = 0; i < b.size; ++i) {
      CHECK(std::abs(b.advantages[i] - ref[i]) < 1e-12);
      CHECK(b.returns[i] == b.advantages[i] + b.values[i]);
    }

    compute_gae(b, gamma, 0.0);
    for (std::size_t i = 0; i < b.size; ++i) {
      CHECK(b.advantages[i] == b.rewards[i] + gamma * successor(b, i).first - b.values[i]);
    }

    // lambda = 1: discounted reward-to-go plus the discounted tail value, minus V.
    compute_gae(b, gamma, 1.0);
    for (std::size_t i = 0; i < b.size; ++i) {
      double g = 0, w = 1;
      for (std::size_t j = i; j < b.size; ++j) {
        g += w * b.rewards[j];
        w *= gamma;
        const auto [next, ends] = successor(b, j);
        if (ends) {
          g += w * next;
          break;
        }
      }
      CHECK(std::abs(b.advantages[i] - (g - b.values[i])) < 1e-10);
    }
  }
}

TEST_CASE("running moments equal two-pass statistics and merge exactly") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.index(500), d = 1 + rng.index(4);
    std::vector<std::vector<double>> xs(n, std::vector<double>(d));
    const double offset = rng.uniform(-1000, 1000);
    for (auto& x : xs)
      for (double& v : x) v = offset + rng.normal() * rng.uniform(0.1, 10);
    RunningMoments all(d), first(d), second(d);
    const std::size_t split = rng.index(n);
    for (std::size_t i = 0; i < n; ++i) {
      all.update(xs[i]);
      (i < split ? first : second).update(xs[i]);
    }
    first.merge(second);
    for (std::size_t k = 0; k < d; ++k) {
      long double mean = 0;
      for (const auto& x : xs) mean += x[k];
      mean /= n;
      long double var = 0;
      for (const auto& x : xs) var += (x[k] - mean) * (x[k] - mean);
      var /= n;
      const double scale = std::max(1.0, std::abs(double(mean)));
      CHECK(std::abs(all.mean()[k] - double(mean)) < 1e-10 * scale);
      CHECK(std::abs(all.variance(k) - double(var)) < 1e-10 * std::max(1.0, double(var)));
      CHECK(std::abs(first.mean()[k] - all.mean()[k]) < 1e-10 * scale);
      CHECK(std::abs(first.variance(k) - all.variance(k)) < 1e-10 * std::max(1.0, double(var)));
      CHECK(all.variance(k) >= 0.0);
    }
    CHECK(first.count() == all.count());
  }
}

TEST_CASE("PPO policy and value loss gradients match central differences") {
  for (Family f : {Family::CartPole, Family::PendulumSwingUp}) {
    Rng rng(43);
    for (int point = 0; point < 10; ++point) {
      Policy p = point % 2 == 0 ? Policy::mlp(f, {{6, 5}}, point)
                                : Policy::multipolar(f, random_sources(f, 2, point), {{6, 5}}, point);
      randomize(p, rng);
      const Minibatch mb = random_minibatch(p, rng, 6);
      TrainConfig cfg = TrainConfig::defaults(f);
      cfg.entropy_coef = 0.01;
      for (int term = 0; term < 3; ++term) {
        auto pick = [&](const LossTerms& l) { return term == 0 ? l.policy : term == 1 ? l.value : l.total; };
        p.params().zero_grad();
        num::Tape t;
        t.backward(pick(ppo_loss(t, p, mb, cfg)));
        const auto res = finite_difference_check(p.params(), [&] {
          num::Tape t2;
          return pick(ppo_loss(t2, p, mb, cfg)).value().item();
        });
        INFO(res.worst << " term " << term);
        CHECK(res.max_rel_err < 1e-4);
      }
    }
  }
}

}  // TEST_SUITE("properties")

TEST_CASE("advantage normalization gives zero mean and unit std") {
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(2 + rng.index(300));
    const double shift = rng.uniform(-100, 100), sc = rng.uniform(0.01, 50);
    for (double& v : a) v = shift + sc * rng.normal();
    normalize_advantages(a);
    double mean = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    double var = 0;
    for (double v : a) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var / a.size()) - 1.0) < 1e-6);
  }
}

TEST_CASE("the first minibatch of every update sees a ratio of exactly one") {
  for (Family f : {Family::CartPole, Family::PendulumSwingUp}) {
    Policy p = Policy::multipolar(f, random_sources(f, 3, 77, true), {{16, 16}}, 3);
    Rng rng(45);
    randomize(p, rng, 0.3);
    TrainConfig cfg = TrainConfig::defaults(f);
    p.set_normalize_obs(cfg.normalize_obs);
    InstanceEnvironment env(envs::default_instance(f));
    RolloutCollector col(env, cfg, Rng(1));
    RolloutBuffer buf;
    col.collect(p, 128, buf);
    compute_gae(buf, cfg.gamma, cfg.gae_lambda);
    std::vector<std::size_t> idx(128);
    std::iota(idx.begin(), idx.end(), 0);
    const Minibatch mb = gather_minibatch(buf, idx);
    num::Tape t;
    const ValueGrid ratio = ppo_loss(t, p, mb, cfg).ratio.value();
    for (double r : ratio.values()) CHECK(r == 1.0);
  }
}

TEST_CASE("with zero value and entropy coefficients value parameters never move") {
  Policy p = Policy::mlp(Family::CartPole, {{16}}, 2);
  TrainConfig cfg = small_config();
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  InstanceEnvironment env(envs::default_instance(Family::CartPole));
  RolloutCollector col(env, cfg, Rng(3));
  RolloutBuffer buf;
  col.collect(p, 64, buf);
  compute_gae(buf, cfg.gamma, cfg.gae_lambda);
  const num::ParamSet before = p.params();
  num::Adam adam({cfg.lr, 0.9, 0.999, cfg.adam_eps, cfg.grad_clip});
  Rng rng(4);
  for (int i = 0; i < 3; ++i) ppo_update(p, buf, cfg, adam, rng);
  bool policy_moved = false;
  for (const auto& [name, param] : p.params()) {
    if (name.rfind("vf/", 0) == 0) {
      CHECK(param.value == before.get(name).value);
    } else if (!(param.value == before.get(name).value)) {
      policy_moved = true;
    }
  }
  CHECK(policy_moved);
}

TEST_CASE("PPO learns a two-state bandit") {
  Policy p = Policy::mlp(2, {true, 2, 0, 0}, {{16}}, 1);
  BanditEnv env;
  TrainConfig cfg = small_config();
  cfg.total_samples = 6000;
  cfg.lr = 3e-3;
  train(p, env, cfg);
  for (std::size_t s = 0; s < 2; ++s) {
    num::Tape t;
    ValueGrid obs({1, 2}, 0.0);
    obs[s] = 1.0;
    const ValueGrid probs = num::softmax(p.scores(t, obs, {}).value());
    CHECK(probs[s] > 0.95);
  }
}

TEST_CASE("rollout bookkeeping across episode and rollout boundaries") {
  for (bool truncate : {false, true}) {
    CountingEnv env(3, truncate);
    Policy p = Policy::mlp(2, {true, 2, 0, 0}, {{4}}, 1);
    TrainConfig cfg = small_config();
    RolloutCollector col(env, cfg, Rng(6));
    RolloutBuffer b;
    col.collect(p, 8, b);
    for (std::size_t i = 0; i < 8; ++i) {
      const bool ends = i == 2 || i == 5;
      CHECK(bool(b.terminals[i]) == (ends && !truncate));
      CHECK(bool(b.truncateds[i]) == (ends && truncate));
      CHECK((b.bootstrap_values[i] != 0.0) == (ends && truncate));
      CHECK(b.raw_rewards[i] == 1.0 + 0.5 * double(i % 3 + 1));
    }
    REQUIRE(col.episodes().size() == 2);
    CHECK(col.episodes()[0].samples == 3);
    CHECK(col.episodes()[1].samples == 6);
    CHECK(col.episodes()[0].reward == doctest::Approx(1.5 + 2.0 + 2.5));
    CHECK(col.episodes()[1].length == 3);
    CHECK(b.last_value != 0.0);

    col.collect(p, 8, b);
    CHECK(bool(b.terminals[0] || b.truncateds[0]));  // third episode finishes first
    REQUIRE(col.episodes().size() == 5);
    CHECK(col.episodes()[2].samples == 9);
    CHECK(col.episodes()[4].samples == 15);
    CHECK(col.samples() == 16);
  }
}

TEST_CASE("truncated steps bootstrap from the value of the final observation") {
  CountingEnv env(3, true);
  Policy p = Policy::mlp(2, {true, 2, 0, 0}, {{4}}, 1);
  TrainConfig cfg = small_config();
  RolloutCollector col(env, cfg, Rng(6));
  RolloutBuffer b;
  col.collect(p, 3, b);
  // Replay the same episode to recover the final observation.
  CountingEnv replay(3, true);
  Rng ep = Rng(6).fork("episodes").fork(0);
  replay.reset(ep);
  Transition last;
  for (int i = 0; i < 3; ++i) last = replay.step(envs::Action::discrete(0));
  CHECK(b.bootstrap_values[2] == p.value_of(last.observation));
}

TEST_CASE("observation and reward normalization follow their running statistics") {
  CountingEnv env(5, false);
  Policy p = Policy::mlp(2, {true, 2, 0, 0}, {{4}}, 1);
  p.set_normalize_obs(true);
  TrainConfig cfg = small_config();
  cfg.normalize_reward = true;
  cfg.gamma = 0.9;
  RolloutCollector col(env, cfg, Rng(7));
  RolloutBuffer b;
  col.collect(p, 12, b);

  // Replay the raw stream.
  CountingEnv replay(5, false);
  const Rng episodes = Rng(7).fork("episodes");
  std::vector<std::vector<double>> raw;
  std::vector<double> rewards;
  std::vector<bool> done;
  std::uint64_t ep_index = 0;
  bool fresh = true;
  std::vector<double> obs;
  for (int t = 0; t < 12; ++t) {
    if (fresh) {
      Rng ep = episodes.fork(ep_index++);
      obs = replay.reset(ep);
      fresh = false;
    }
    raw.push_back(obs);
    Transition tr = replay.step(envs::Action::discrete(0));
    rewards.push_back(tr.reward);
    done.push_back(tr.terminal);
    if (tr.terminal) fresh = true;
    obs = tr.observation;
  }

  double ret = 0;
  std::vector<double> rets;
  for (int t = 0; t < 12; ++t) {
    for (std::size_t d = 0; d < 2; ++d) {
      double mean = 0, var = 0;
      for (int s = 0; s <= t; ++s) mean += raw[s][d];
      mean /= t + 1;
      for (int s = 0; s <= t; ++s) var += (raw[s][d] - mean) * (raw[s][d] - mean);
      var /= t + 1;
      const double ref = std::clamp((raw[t][d] - mean) / std::sqrt(var + 1e-8), -10.0, 10.0);
      CHECK(b.observations[t * 2 + d] == doctest::Approx(ref).epsilon(1e-9));
    }
    ret = ret * 0.9 + rewards[t];
    rets.push_back(ret);
    double mean = 0, var = 0;
    for (double r : rets) mean += r;
    mean /= rets.size();
    for (double r : rets) var += (r - mean) * (r - mean);
    var /= rets.size();
    const double ref = std::clamp(rewards[t] / std::sqrt(var + 1e-8), -10.0, 10.0);
    CHECK(b.rewards[t] == doctest::Approx(ref).epsilon(1e-9));
    if (done[t]) ret = 0;
  }
  CHECK(p.obs_moments().count() == 12);
}

TEST_CASE("training is deterministic and lands exactly on the sample budget") {
  const envs::EnvInstance inst = envs::default_instance(Family::CartPole);
  TrainConfig cfg = small_config();
  cfg.total_samples = 300;
  Policy a = Policy::mlp(Family::CartPole, {{8}}, 1), b = Policy::mlp(Family::CartPole, {{8}}, 1);
  std::vector<std::uint64_t> seen;
  const auto ra = train(a, inst, cfg, {[&](const UpdateInfo& u, const Policy&) { seen.push_back(u.samples); }});
  const auto rb = train(b, inst, cfg);
  CHECK(ra.samples == 300);
  CHECK(seen == std::vector<std::uint64_t>{64, 128, 192, 256, 300});
  REQUIRE(ra.episodes.size() == rb.episodes.size());
  for (std::size_t i = 0; i < ra.episodes.size(); ++i) {
    CHECK(ra.episodes[i].reward == rb.episodes[i].reward);
    CHECK(ra.episodes[i].samples == rb.episodes[i].samples);
  }
  for (const auto& [name, p] : a.params()) CHECK(p.value == b.params().get(name).value);

  Policy c = Policy::mlp(Family::CartPole, {{8}}, 1);
  cfg.seed = 6;
  const auto rc = train(c, inst, cfg);
  CHECK_FALSE(c.params().get("pi/out/w").value == a.params().get("pi/out/w").value);

  cfg.total_samples = 0;
  Policy d = Policy::mlp(Family::CartPole, {{8}}, 1);
  const auto rd = train(d, inst, cfg);
  CHECK(rd.samples == 0);
  CHECK(rd.episodes.empty());
  CHECK(rd.updates.empty());
}

TEST_CASE("default hyperparameters per family") {
  const auto cp = TrainConfig::defaults(Family::CartPole);
  CHECK(cp.total_samples == 100000);
  CHECK(cp.epochs_per_rollout == 20);
  CHECK(cp.minibatch_count == 1);
  CHECK(cp.lr == 1e-3);
  CHECK(cp.gamma == 0.98);
  CHECK(cp.gae_lambda == 0.8);
  CHECK_FALSE(cp.normalize_obs);
  CHECK_FALSE(cp.normalize_reward);
  const auto ac = TrainConfig::defaults(Family::Acrobot);
  CHECK(ac.total_samples == 200000);
  CHECK(ac.epochs_per_rollout == 4);
  CHECK(ac.minibatch_count == 8);
  CHECK(ac.lr == 2.5e-4);
  CHECK(ac.gamma == 0.99);
  CHECK(ac.gae_lambda == 0.94);
  CHECK(ac.normalize_obs);
  const auto pd = TrainConfig::defaults(Family::PendulumSwingUp);
  CHECK(pd.total_samples == 2000000);
  CHECK(pd.epochs_per_rollout == 10);
  CHECK(pd.minibatch_count == 32);
  CHECK(pd.gae_lambda == 0.95);
  CHECK(pd.horizon == 1024);
  for (const auto& c : {cp, ac, pd}) {
    CHECK(c.clip_ratio == 0.2);
    CHECK(c.value_coef == 0.5);
    CHECK(c.entropy_coef == 0.0);
    CHECK(c.grad_clip == 0.5);
  }
}

TEST_CASE("train config json overlays, round-trips and rejects unknown keys") {
  const auto base = TrainConfig::defaults(Family::Acrobot);
  CHECK(config_from_json(nlohmann::json::parse(config_to_json(base).dump()), TrainConfig{}) == base);
  const auto over = config_from_json(nlohmann::json{{"lr", 0.01}, {"horizon", 32}}, base);
  CHECK(over.lr == 0.01);
  CHECK(over.horizon == 32);
  CHECK(over.gamma == base.gamma);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"learning_rate", 0.1}}, base), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gamma", 1.5}}, base), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"minibatch_count", 0}}, base), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"lr", "fast"}}, base), ConfigError);
}

TEST_CASE("final mean reward averages the last episodes") {
  std::vector<EpisodeRecord> eps;
  for (int i = 0; i < 150; ++i) eps.push_back({std::uint64_t(i), double(i), 1});
  CHECK(final_mean_reward(eps) == doctest::Approx(99.5));
  CHECK(final_mean_reward(eps, 10) == doctest::Approx(144.5));
  CHECK_THROWS(final_mean_reward({}));
}
