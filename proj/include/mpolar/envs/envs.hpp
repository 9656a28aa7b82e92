#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpolar/numcore/rng.hpp"
#include "mpolar/numcore/value_grid.hpp"

namespace mpolar::envs {

class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Family { CartPole, Acrobot, PendulumSwingUp };

std::string_view family_name(Family family);
Family parse_family(std::string_view name);

struct ParamRange {
  std::string_view name;
  double lo;
  double hi;
};

// Sampling ranges of the kinematic/dynamic parameters of each family.
std::span<const ParamRange> param_ranges(Family family);

struct ActionSpec {
  bool discrete = true;
  std::size_t dim = 0;  // number of choices (discrete) or action dimension
  double low = 0.0;     // continuous bounds
  double high = 0.0;

  friend bool operator==(const ActionSpec&, const ActionSpec&) = default;
};

ActionSpec action_spec(Family family);
std::size_t observation_dim(Family family);
double default_gamma(Family family);
int default_horizon(Family family);

// One member of a family: the parameters realize that member's dynamics.
struct EnvInstance {
  Family family = Family::CartPole;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;
  double gamma = 0.99;
  int max_episode_steps = 200;

  double param(std::string_view name) const;
};

// Uniform draw of every parameter from its range; same (family, seed) gives
// the same instance.
EnvInstance sample_instance(Family family, std::uint64_t seed);
// The classic textbook parameterization, which lies inside every range.
EnvInstance default_instance(Family family);
// Throws EnvError if a parameter is missing, unknown, or outside its range.
void validate_instance(const EnvInstance& instance);

nlohmann::json instance_to_json(const EnvInstance& instance);
// Validates ranges.
EnvInstance instance_from_json(const nlohmann::json& doc);

struct EnvState {
  num::ValueGrid observation;
  std::vector<double> internal;  // generalized coordinates and velocities
  int steps_elapsed = 0;
};

struct Action {
  std::size_t index = 0;       // discrete families
  std::vector<double> values;  // continuous families

  static Action discrete(std::size_t i) { return Action{i, {}}; }
  static Action continuous(std::vector<double> v) { return Action{0, std::move(v)}; }
};

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
};

num::ValueGrid observe(Family family, std::span<const double> internal);
EnvState reset(const EnvInstance& instance, Rng& episode_rng);
// Pure function of its arguments. Throws EnvError on an invalid action or a
// non-finite successor state.
StepResult step(const EnvInstance& instance, const EnvState& state, const Action& action);

// Total mechanical energy of the pendulum (zero at the hanging rest position).
double pendulum_energy(const EnvInstance& instance, std::span<const double> internal);

// Viscous damping torque per unit damping parameter, N*m*s/rad.
inline constexpr double kPendulumDampingUnit = 0.02;
inline constexpr double kPendulumMaxSpeed = 8.0;

}  // namespace mpolar::envs
