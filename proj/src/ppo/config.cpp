#include "mpolar/ppo/config.hpp"

#include <cmath>
#include <string>

namespace mpolar::ppo {

TrainConfig TrainConfig::defaults(envs::Family family) {
  TrainConfig c;
  switch (family) {
    case envs::Family::CartPole:
      c.total_samples = 100000;
      c.horizon = 256;
      c.epochs_per_rollout = 20;
      c.minibatch_count = 1;
      c.lr = 1e-3;
      c.gamma = 0.98;
      c.gae_lambda = 0.8;
      c.normalize_obs = false;
      c.normalize_reward = false;
      break;
    case envs::Family::Acrobot:
      c.total_samples = 200000;
      c.horizon = 256;
      c.epochs_per_rollout = 4;
      c.minibatch_count = 8;
      c.lr = 2.5e-4;
      c.gamma = 0.99;
      c.gae_lambda = 0.94;
      break;
    case envs::Family::PendulumSwingUp:
      c.total_samples = 2000000;
      c.horizon = 1024;
      c.epochs_per_rollout = 10;
      c.minibatch_count = 32;
      c.lr = 2.5e-4;
      c.gamma = 0.99;
      c.gae_lambda = 0.95;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (horizon == 0) fail("horizon must be positive");
  if (epochs_per_rollout == 0) fail("epochs_per_rollout must be positive");
  if (minibatch_count == 0 || minibatch_count > horizon) {
    fail("minibatch_count must be in [1, horizon]");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must be in [0, 1]");
  if (!(clip_ratio > 0.0)) fail("clip_ratio must be positive");
  if (!(value_coef >= 0.0) || !(entropy_coef >= 0.0)) fail("loss coefficients must be >= 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be positive");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["total_samples"] = c.total_samples;
  j["horizon"] = c.horizon;
  j["epochs_per_rollout"] = c.epochs_per_rollout;
  j["minibatch_count"] = c.minibatch_count;
  j["lr"] = c.lr;
  j["gamma"] = c.gamma;
  j["gae_lambda"] = c.gae_lambda;
  j["clip_ratio"] = c.clip_ratio;
  j["value_coef"] = c.value_coef;
  j["entropy_coef"] = c.entropy_coef;
  j["grad_clip"] = c.grad_clip;
  j["adam_eps"] = c.adam_eps;
  j["normalize_obs"] = c.normalize_obs;
  j["normalize_reward"] = c.normalize_reward;
  j["seed"] = c.seed;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& doc, TrainConfig c) {
  if (!doc.is_object()) throw ConfigError("train config: expected an object");
  for (const auto& [key, v] : doc.items()) {
    try {
      if (key == "total_samples") c.total_samples = v.get<std::uint64_t>();
      else if (key == "horizon") c.horizon = v.get<std::size_t>();
      else if (key == "epochs_per_rollout") c.epochs_per_rollout = v.get<std::size_t>();
      else if (key == "minibatch_count") c.minibatch_count = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "gae_lambda") c.gae_lambda = v.get<double>();
      else if (key == "clip_ratio") c.clip_ratio = v.get<double>();
      else if (key == "value_coef") c.value_coef = v.get<double>();
      else if (key == "entropy_coef") c.entropy_coef = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "normalize_obs") c.normalize_obs = v.get<bool>();
      else if (key == "normalize_reward") c.normalize_reward = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config: bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

}  // namespace mpolar::ppo
