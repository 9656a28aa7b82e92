#pragma once

#include <cstdint>
#include <stdexcept>

#include <json.hpp>

#include "mpolar/envs/envs.hpp"

namespace mpolar::ppo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// minibatch_count is the number of minibatches each epoch is split into,
// not the minibatch size.
struct TrainConfig {
  std::uint64_t total_samples = 100000;
  std::size_t horizon = 256;
  std::size_t epochs_per_rollout = 10;
  std::size_t minibatch_count = 4;
  double lr = 2.5e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double grad_clip = 0.5;
  double adam_eps = 1e-5;
  bool normalize_obs = true;
  bool normalize_reward = true;
  std::uint64_t seed = 0;

  static TrainConfig defaults(envs::Family family);
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::ordered_json config_to_json(const TrainConfig& config);
// Overlays the keys present in doc onto base. Unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& doc, TrainConfig base);

}  // namespace mpolar::ppo
