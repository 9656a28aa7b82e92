#include "mpolar/envs/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace mpolar::envs {

namespace {

using std::numbers::pi;

constexpr std::array<ParamRange, 5> kCartPoleRanges{{
    {"cart_mass", 0.3, 4.0},
    {"force", 6.0, 13.0},
    {"gravity", -14.0, -6.0},
    {"pole_length", 0.1, 3.0},
    {"pole_mass", 0.1, 3.0},
}};

// Center of mass is a fraction of the link length.
constexpr std::array<ParamRange, 8> kAcrobotRanges{{
    {"link_com_frac_1", 0.05, 0.95},
    {"link_com_frac_2", 0.05, 0.95},
    {"link_length_1", 0.3, 1.3},
    {"link_length_2", 0.3, 1.3},
    {"link_mass_1", 0.5, 1.5},
    {"link_mass_2", 0.5, 1.5},
    {"link_moi_1", 0.25, 1.5},
    {"link_moi_2", 0.25, 1.5},
}};

constexpr std::array<ParamRange, 4> kPendulumRanges{{
    {"damping", 0.1, 5.0},
    {"gravity", 7.0, 11.0},
    {"mass_scale", 0.4, 3.0},
    {"pole_length", 0.2, 2.0},
}};

constexpr double kCartPoleDt = 0.02;
constexpr double kCartPoleXLimit = 2.4;
constexpr double kCartPoleThetaLimit = 12.0 * 2.0 * pi / 360.0;

constexpr double kAcrobotDt = 0.2;
constexpr int kAcrobotSubsteps = 4;
constexpr double kAcrobotGravity = 9.8;
constexpr double kAcrobotMaxVel1 = 4.0 * pi;
constexpr double kAcrobotMaxVel2 = 9.0 * pi;

constexpr double kPendulumDt = 0.05;

double wrap_angle(double x) {
  // Maps to [-pi, pi).
  double y = std::fmod(x + pi, 2.0 * pi);
  if (y < 0.0) y += 2.0 * pi;
  return y - pi;
}

void require_finite_state(const std::vector<double>& s, Family family) {
  for (double v : s) {
    if (!std::isfinite(v)) {
      throw EnvError(std::string(family_name(family)) +
                     ": non-finite state (unstable parameterization)");
    }
  }
}

using AcrobotState = std::array<double, 4>;

AcrobotState acrobot_derivs(const EnvInstance& inst, const AcrobotState& s, double torque) {
  const double m1 = inst.param("link_mass_1");
  const double m2 = inst.param("link_mass_2");
  const double l1 = inst.param("link_length_1");
  const double lc1 = inst.param("link_com_frac_1") * l1;
  const double lc2 = inst.param("link_com_frac_2") * inst.param("link_length_2");
  const double i1 = inst.param("link_moi_1");
  const double i2 = inst.param("link_moi_2");
  const double g = kAcrobotGravity;
  const double th1 = s[0];
  const double th2 = s[1];
  const double dth1 = s[2];
  const double dth2 = s[3];

  const double d1 =
      m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(th2)) + i1 + i2;
  const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(th2)) + i2;
  const double phi2 = m2 * lc2 * g * std::cos(th1 + th2 - pi / 2.0);
  const double phi1 = -m2 * l1 * lc2 * dth2 * dth2 * std::sin(th2) -
                      2.0 * m2 * l1 * lc2 * dth2 * dth1 * std::sin(th2) +
                      (m1 * lc1 + m2 * l1) * g * std::cos(th1 - pi / 2.0) + phi2;
  // "book" variant of the equations of motion
  const double ddth2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1 * dth1 * std::sin(th2) -
                        phi2) /
                       (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
  const double ddth1 = -(d2 * ddth2 + phi1) / d1;
  return {dth1, dth2, ddth1, ddth2};
}

StepResult step_cartpole(const EnvInstance& inst, const EnvState& state, const Action& action) {
  if (action.index > 1) throw EnvError("CartPole: action must be 0 or 1");
  const double g = std::abs(inst.param("gravity"));
  const double masspole = inst.param("pole_mass");
  const double total_mass = masspole + inst.param("cart_mass");
  const double length = inst.param("pole_length");  // half the pole length
  const double polemass_length = masspole * length;
  const double force = action.index == 1 ? inst.param("force") : -inst.param("force");

  auto s = state.internal;
  const double x = s[0];
  const double x_dot = s[1];
  const double theta = s[2];
  const double theta_dot = s[3];
  const double costh = std::cos(theta);
  const double sinth = std::sin(theta);
  const double temp = (force + polemass_length * theta_dot * theta_dot * sinth) / total_mass;
  const double thetaacc = (g * sinth - costh * temp) /
                          (length * (4.0 / 3.0 - masspole * costh * costh / total_mass));
  const double xacc = temp - polemass_length * thetaacc * costh / total_mass;

  // semi-implicit Euler
  s[1] = x_dot + kCartPoleDt * xacc;
  s[0] = x + kCartPoleDt * s[1];
  s[3] = theta_dot + kCartPoleDt * thetaacc;
  s[2] = theta + kCartPoleDt * s[3];
  require_finite_state(s, inst.family);

  StepResult r;
  r.terminal = std::abs(s[0]) > kCartPoleXLimit || std::abs(s[2]) > kCartPoleThetaLimit;
  r.reward = 1.0;
  r.next_state.internal = std::move(s);
  return r;
}

StepResult step_acrobot(const EnvInstance& inst, const EnvState& state, const Action& action) {
  if (action.index > 2) throw EnvError("Acrobot: action must be 0, 1 or 2");
  const double torque = static_cast<double>(action.index) - 1.0;
  AcrobotState s{state.internal[0], state.internal[1], state.internal[2], state.internal[3]};

  const double h = kAcrobotDt / kAcrobotSubsteps;
  for (int k = 0; k < kAcrobotSubsteps; ++k) {
    const AcrobotState k1 = acrobot_derivs(inst, s, torque);
    AcrobotState tmp;
    for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
    const AcrobotState k2 = acrobot_derivs(inst, tmp, torque);
    for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
    const AcrobotState k3 = acrobot_derivs(inst, tmp, torque);
    for (int i = 0; i < 4; ++i) tmp[i] = s[i] + h * k3[i];
    const AcrobotState k4 = acrobot_derivs(inst, tmp, torque);
    for (int i = 0; i < 4; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  std::vector<double> out{wrap_angle(s[0]), wrap_angle(s[1]),
                          std::clamp(s[2], -kAcrobotMaxVel1, kAcrobotMaxVel1),
                          std::clamp(s[3], -kAcrobotMaxVel2, kAcrobotMaxVel2)};
  require_finite_state(out, inst.family);

  const double l1 = inst.param("link_length_1");
  const double l2 = inst.param("link_length_2");
  const double tip_height = -l1 * std::cos(out[0]) - l2 * std::cos(out[0] + out[1]);

  StepResult r;
  r.terminal = tip_height > 0.5 * (l1 + l2);
  r.reward = r.terminal ? 0.0 : -1.0;
  r.next_state.internal = std::move(out);
  return r;
}

StepResult step_pendulum(const EnvInstance& inst, const EnvState& state, const Action& action) {
  if (action.values.size() != 1 || !std::isfinite(action.values[0])) {
    throw EnvError("PendulumSwingUp: expected one finite torque value");
  }
  const ActionSpec spec = action_spec(Family::PendulumSwingUp);
  const double u = std::clamp(action.values[0], spec.low, spec.high);
  const double m = inst.param("mass_scale");
  const double l = inst.param("pole_length");
  const double g = inst.param("gravity");
  const double b = inst.param("damping") * kPendulumDampingUnit;
  const double th = state.internal[0];
  const double thdot = state.internal[1];

  const double inertia = m * l * l / 3.0;
  const double thacc = 3.0 * g / (2.0 * l) * std::sin(th) + (u - b * thdot) / inertia;
  const double new_thdot = std::clamp(thdot + thacc * kPendulumDt, -kPendulumMaxSpeed,
                                      kPendulumMaxSpeed);
  const double new_th = th + new_thdot * kPendulumDt;

  const double upright = wrap_angle(th);
  StepResult r;
  r.reward = -(upright * upright + 0.1 * thdot * thdot + 0.001 * u * u);
  r.next_state.internal = {new_th, new_thdot};
  require_finite_state(r.next_state.internal, inst.family);
  return r;
}

}  // namespace

std::string_view family_name(Family family) {
  switch (family) {
    case Family::CartPole:
      return "CartPole";
    case Family::Acrobot:
      return "Acrobot";
    case Family::PendulumSwingUp:
      return "PendulumSwingUp";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::CartPole, Family::Acrobot, Family::PendulumSwingUp}) {
    if (family_name(f) == name) return f;
  }
  throw EnvError("unknown environment family '" + std::string(name) + "'");
}

std::span<const ParamRange> param_ranges(Family family) {
  switch (family) {
    case Family::CartPole:
      return kCartPoleRanges;
    case Family::Acrobot:
      return kAcrobotRanges;
    case Family::PendulumSwingUp:
      return kPendulumRanges;
  }
  return {};
}

ActionSpec action_spec(Family family) {
  switch (family) {
    case Family::CartPole:
      return {true, 2, 0.0, 0.0};
    case Family::Acrobot:
      return {true, 3, 0.0, 0.0};
    case Family::PendulumSwingUp:
      return {false, 1, -2.0, 2.0};
  }
  return {};
}

std::size_t observation_dim(Family family) {
  switch (family) {
    case Family::CartPole:
      return 4;
    case Family::Acrobot:
      return 6;
    case Family::PendulumSwingUp:
      return 3;
  }
  return 0;
}

double default_gamma(Family family) { return family == Family::CartPole ? 0.98 : 0.99; }

int default_horizon(Family family) {
  switch (family) {
    case Family::CartPole:
      return 200;
    case Family::Acrobot:
      return 500;
    case Family::PendulumSwingUp:
      return 200;
  }
  return 0;
}

double EnvInstance::param(std::string_view name) const {
  auto it = params.find(std::string(name));
  if (it == params.end()) throw EnvError("instance has no parameter '" + std::string(name) + "'");
  return it->second;
}

EnvInstance sample_instance(Family family, std::uint64_t seed) {
  EnvInstance inst;
  inst.family = family;
  inst.seed = seed;
  inst.gamma = default_gamma(family);
  inst.max_episode_steps = default_horizon(family);
  Rng rng(Rng::derive(seed, family_name(family)));
  for (const auto& r : param_ranges(family)) inst.params[std::string(r.name)] = rng.uniform(r.lo, r.hi);
  return inst;
}

EnvInstance default_instance(Family family) {
  EnvInstance inst;
  inst.family = family;
  inst.gamma = default_gamma(family);
  inst.max_episode_steps = default_horizon(family);
  switch (family) {
    case Family::CartPole:
      inst.params = {{"cart_mass", 1.0},
                     {"force", 10.0},
                     {"gravity", -9.8},
                     {"pole_length", 0.5},
                     {"pole_mass", 0.1}};
      break;
    case Family::Acrobot:
      inst.params = {{"link_com_frac_1", 0.5}, {"link_com_frac_2", 0.5}, {"link_length_1", 1.0},
                     {"link_length_2", 1.0},   {"link_mass_1", 1.0},     {"link_mass_2", 1.0},
                     {"link_moi_1", 1.0},      {"link_moi_2", 1.0}};
      break;
    case Family::PendulumSwingUp:
      inst.params = {{"damping", 0.1}, {"gravity", 10.0}, {"mass_scale", 1.0}, {"pole_length", 1.0}};
      break;
  }
  return inst;
}

void validate_instance(const EnvInstance& instance) {
  const auto ranges = param_ranges(instance.family);
  if (instance.params.size() != ranges.size()) {
    throw EnvError(std::string(family_name(instance.family)) + ": expected " +
                   std::to_string(ranges.size()) + " parameters, got " +
                   std::to_string(instance.params.size()));
  }
  for (const auto& r : ranges) {
    auto it = instance.params.find(std::string(r.name));
    if (it == instance.params.end()) {
      throw EnvError("missing parameter '" + std::string(r.name) + "'");
    }
    if (!(it->second >= r.lo && it->second <= r.hi)) {
      throw EnvError("parameter '" + std::string(r.name) + "' = " + std::to_string(it->second) +
                     " outside [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
    }
  }
  if (instance.max_episode_steps <= 0) throw EnvError("horizon must be positive");
}

nlohmann::json instance_to_json(const EnvInstance& instance) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [k, v] : instance.params) params[k] = v;
  return nlohmann::json{{"family", family_name(instance.family)},
                        {"horizon", instance.max_episode_steps},
                        {"params", params},
                        {"seed", instance.seed}};
}

EnvInstance instance_from_json(const nlohmann::json& doc) {
  EnvInstance inst;
  try {
    for (const auto& [key, _] : doc.items()) {
      if (key != "family" && key != "horizon" && key != "params" && key != "seed") {
        throw EnvError("instance file: unknown key '" + key + "'");
      }
    }
    inst.family = parse_family(doc.at("family").get<std::string>());
    inst.seed = doc.at("seed").get<std::uint64_t>();
    inst.max_episode_steps = doc.at("horizon").get<int>();
    for (const auto& [k, v] : doc.at("params").items()) inst.params[k] = v.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw EnvError(std::string("instance file: ") + e.what());
  }
  inst.gamma = default_gamma(inst.family);
  validate_instance(inst);
  return inst;
}

num::ValueGrid observe(Family family, std::span<const double> s) {
  switch (family) {
    case Family::CartPole:
      return num::ValueGrid::vector({s[0], s[1], s[2], s[3]});
    case Family::Acrobot:
      return num::ValueGrid::vector({std::cos(s[0]), std::sin(s[0]), std::cos(s[1]),
                                     std::sin(s[1]), s[2], s[3]});
    case Family::PendulumSwingUp:
      return num::ValueGrid::vector({std::cos(s[0]), std::sin(s[0]), s[1]});
  }
  return {};
}

EnvState reset(const EnvInstance& instance, Rng& episode_rng) {
  EnvState st;
  switch (instance.family) {
    case Family::CartPole:
      st.internal.resize(4);
      for (double& v : st.internal) v = episode_rng.uniform(-0.05, 0.05);
      break;
    case Family::Acrobot:
      st.internal.resize(4);
      for (double& v : st.internal) v = episode_rng.uniform(-0.1, 0.1);
      break;
    case Family::PendulumSwingUp:
      st.internal = {episode_rng.uniform(-pi, pi), episode_rng.uniform(-1.0, 1.0)};
      break;
  }
  st.observation = observe(instance.family, st.internal);
  return st;
}

StepResult step(const EnvInstance& instance, const EnvState& state, const Action& action) {
  StepResult r;
  switch (instance.family) {
    case Family::CartPole:
      r = step_cartpole(instance, state, action);
      break;
    case Family::Acrobot:
      r = step_acrobot(instance, state, action);
      break;
    case Family::PendulumSwingUp:
      r = step_pendulum(instance, state, action);
      break;
  }
  r.next_state.steps_elapsed = state.steps_elapsed + 1;
  r.next_state.observation = observe(instance.family, r.next_state.internal);
  r.truncated = !r.terminal && r.next_state.steps_elapsed >= instance.max_episode_steps;
  return r;
}

double pendulum_energy(const EnvInstance& instance, std::span<const double> internal) {
  const double m = instance.param("mass_scale");
  const double l = instance.param("pole_length");
  const double g = instance.param("gravity");
  const double inertia = m * l * l / 3.0;
  return 0.5 * inertia * internal[1] * internal[1] + m * g * 0.5 * l * (1.0 + std::cos(internal[0]));
}

}  // namespace mpolar::envs
