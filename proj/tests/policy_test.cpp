#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpolar/policy/serialization.hpp"
#include "policy_support.hpp"

using namespace mpolar;
using namespace mpolar::policy;
using envs::Family;
using testing::expressive_mlp;
using testing::finite_difference_check;
using testing::random_grid;
using testing::random_sources;
using testing::randomize;

namespace {

// Independent forward pass of a "pi"/"vf" stack: naive loops and std::tanh.
std::vector<double> oracle_stack(const Policy& p, const std::string& prefix,
                                 std::vector<double> x) {
  const auto& params = p.params();
  const std::size_t n_hidden = p.architecture().hidden.size();
  for (std::size_t layer = 0; layer <= n_hidden; ++layer) {
    const std::string base =
        prefix + "/" + (layer == n_hidden ? std::string("out") : std::to_string(layer));
    const ValueGrid& w = params.get(base + "/w").value;
    const ValueGrid& b = params.get(base + "/b").value;
    std::vector<double> y(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w.at(i, j);
      y[j] = layer == n_hidden ? s : std::tanh(s);
    }
    x = y;
  }
  return x;
}

std::vector<double> oracle_normalize(const Policy& p, std::span<const double> raw) {
  std::vector<double> out(raw.begin(), raw.end());
  if (!p.normalizes_obs()) return out;
  const auto& m = p.obs_moments();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp((raw[i] - m.mean()[i]) / std::sqrt(m.variance(i) + 1e-8), -kObsClip, kObsClip);
  }
  return out;
}

std::vector<double> oracle_source_action(const SourcePolicy& src, std::span<const double> raw) {
  const Policy& net = src.network();
  auto scores = oracle_stack(net, "pi", oracle_normalize(net, raw));
  if (!net.action_spec().discrete) return scores;
  std::vector<double> onehot(scores.size(), 0.0);
  onehot[std::max_element(scores.begin(), scores.end()) - scores.begin()] = 1.0;
  return onehot;
}

ValueGrid random_obs(Family f, Rng& rng, std::size_t rows) {
  return random_grid({rows, envs::observation_dim(f)}, rng, -1.5, 1.5);
}

ValueGrid stacked_source_actions(const SourceSet& sources, const ValueGrid& obs) {
  ValueGrid out({obs.rows(), sources.k() * sources.action_dim()});
  for (std::size_t i = 0; i < obs.rows(); ++i) sources.actions_into(obs.row(i), out.row(i));
  return out;
}

}  // namespace

TEST_SUITE("properties") {

TEST_CASE("MULTIPOLAR forward gradients match central differences") {
  for (Family f : {Family::CartPole, Family::PendulumSwingUp}) {
    Rng rng(21);
    for (int point = 0; point < 10; ++point) {
      Policy head = Policy::multipolar(f, random_sources(f, 3, 100 + point), {{6, 5}}, point);
      randomize(head, rng);
      const ValueGrid obs = random_obs(f, rng, 4);
      const ValueGrid acts = stacked_source_actions(head.sources(), obs);
      const ValueGrid weights = random_grid({4, head.action_dim()}, rng);
      auto build = [&](num::Tape& t) {
        return num::sum(num::mul(head.scores(t, obs, acts), t.constant(weights)));
      };
      head.params().zero_grad();
      num::Tape t;
      t.backward(build(t));
      const auto res = finite_difference_check(head.params(), [&] {
        num::Tape t2;
        return build(t2).value().item();
      });
      INFO(res.worst);
      CHECK(res.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("aggregate is linear in theta and reduces to the column mean at ones") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.index(8), d = 1 + rng.index(4);
    const ValueGrid theta = random_grid({k, d}, rng, -2, 2);
    const ValueGrid a = random_grid({k, d}, rng, -2, 2);
    const double c = rng.uniform(-3, 3);
    ValueGrid scaled = theta;
    for (double& v : scaled.values()) v *= c;
    const ValueGrid base = aggregate(theta, a), lhs = aggregate(scaled, a);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(lhs[j] - c * base[j]) < 1e-14);

    const ValueGrid mean = aggregate(ValueGrid({k, d}, 1.0), a);
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += a.at(i, j);
      CHECK(mean[j] == s * (1.0 / double(k)));
    }
  }
}

TEST_CASE("scores gradient with respect to theta_agg is A / K") {
  Rng rng(23);
  Policy head = Policy::multipolar(Family::PendulumSwingUp,
                                   random_sources(Family::PendulumSwingUp, 4, 5), {{8}}, 1);
  randomize(head, rng);
  const ValueGrid obs = random_obs(Family::PendulumSwingUp, rng, 1);
  const ValueGrid acts = stacked_source_actions(head.sources(), obs);
  head.params().zero_grad();
  num::Tape t;
  t.backward(num::sum(head.scores(t, obs, acts)));
  const auto& g = head.params().get("agg/theta").grad;
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(g[i] - acts[i] / 4.0) < 1e-12);
}

TEST_CASE("discrete score shifts leave argmax and distribution unchanged") {
  Rng rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const ValueGrid f = random_grid({1, 3}, rng, -4, 4);
    ValueGrid g = f;
    const double shift = rng.uniform(-50, 50);
    for (double& v : g.values()) v += shift;
    const ValueGrid pf = num::softmax(f), pg = num::softmax(g);
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(pf[j] - pg[j]) < 1e-12);
    auto am = [](const ValueGrid& x) {
      return std::max_element(x.values().begin(), x.values().end()) - x.values().begin();
    };
    CHECK(am(f) == am(g));
  }
}

TEST_CASE("K=1 with frozen unit weight reduces to source action plus residual") {
  Rng rng(25);
  for (Family f : {Family::CartPole, Family::PendulumSwingUp}) {
    Policy rpl = degrade(Policy::multipolar(f, random_sources(f, 1, 9, true), {{8, 8}}, 3),
                         DegradeMode::FixedWeights);
    randomize(rpl, rng);
    CHECK_FALSE(rpl.aggregation_trainable());
    for (int n = 0; n < 20; ++n) {
      const ValueGrid raw = random_grid({envs::observation_dim(f)}, rng, -1.5, 1.5);
      const ValueGrid out = multipolar_forward(rpl, raw);
      const auto src = oracle_source_action(rpl.sources().at(0), raw.values());
      const auto aux = oracle_stack(rpl, "pi", oracle_normalize(rpl, raw.values()));
      for (std::size_t d = 0; d < out.size(); ++d) {
        CHECK(std::abs(out[d] - (src[d] + aux[d])) < 1e-12);
      }
    }
  }
}

TEST_CASE("source actions match a duplicate forward pass and are deterministic") {
  Rng rng(26);
  for (Family f : {Family::CartPole, Family::Acrobot, Family::PendulumSwingUp}) {
    const SourceSet set = random_sources(f, 4, 31, true);
    for (int n = 0; n < 50; ++n) {
      const ValueGrid raw = random_grid({envs::observation_dim(f)}, rng, -1.5, 1.5);
      const ValueGrid a = source_actions(set, raw);
      CHECK(a == source_actions(set, raw));
      for (std::size_t k = 0; k < set.k(); ++k) {
        const auto ref = oracle_source_action(set.at(k), raw.values());
        for (std::size_t d = 0; d < set.action_dim(); ++d) CHECK(std::abs(a.at(k, d) - ref[d]) < 1e-12);
      }
    }
  }
}

TEST_CASE("policy serialization round-trips bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "mpolar_policy_test";
  std::filesystem::create_directories(dir);
  Rng rng(27);
  for (Family f : {Family::CartPole, Family::PendulumSwingUp}) {
    Policy head = Policy::multipolar(f, random_sources(f, 2, 40, true), {{8, 8}}, 4);
    randomize(head, rng);
    head.set_normalize_obs(true);
    for (int n = 0; n < 30; ++n) {
      head.obs_moments().update(random_grid({head.obs_dim()}, rng).values());
    }
    const auto path = dir / "head.pol";
    save_policy(head, path);
    Policy back = load_policy(path, f);
    CHECK(encode_policy(back) == encode_policy(head));
    for (const auto& [name, p] : head.params()) {
      CHECK(back.params().get(name).value == p.value);
      CHECK(back.params().get(name).trainable == p.trainable);
    }
    for (int n = 0; n < 100; ++n) {
      const ValueGrid raw = random_grid({head.obs_dim()}, rng, -1.5, 1.5);
      Rng r1(n), r2(n);
      const ActResult a = head.act(raw, ActMode::Sample, r1);
      const ActResult b = back.act(raw, ActMode::Sample, r2);
      CHECK(a.action_row == b.action_row);
      CHECK(a.log_prob == b.log_prob);
      CHECK(a.value == b.value);
    }
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE("properties")

TEST_CASE("loading into the wrong family or a corrupted file fails loudly") {
  const auto dir = std::filesystem::temp_directory_path() / "mpolar_policy_err";
  std::filesystem::create_directories(dir);
  const Policy p = Policy::mlp(Family::CartPole, {}, 1);
  const auto path = dir / "p.pol";
  save_policy(p, path);
  CHECK_THROWS_AS(load_policy(path, Family::Acrobot), PolicyMismatchError);
  CHECK_NOTHROW(load_policy(path, Family::CartPole));

  auto bytes = encode_policy(p);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_policy(truncated), PolicyFormatError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_policy(flipped), PolicyFormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_policy(bad_magic), PolicyFormatError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(decode_policy(bad_version), PolicyFormatError);
  CHECK_THROWS_AS(load_policy(dir / "missing.pol"), PolicyFormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("initialization: ones for theta, zero residual, orthogonal layers") {
  const SourceSet set = random_sources(Family::CartPole, 4, 50);
  Policy head = Policy::multipolar(Family::CartPole, set, {{64, 64}}, 7);
  CHECK(head.params().get("agg/theta").value == ValueGrid({4, 2}, 1.0));
  CHECK(head.aggregation_trainable());
  Rng rng(28);
  const ValueGrid obs = random_obs(Family::CartPole, rng, 5);
  const ValueGrid acts = stacked_source_actions(set, obs);
  num::Tape t;
  const ValueGrid f = head.scores(t, obs, acts).value();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t d = 0; d < 2; ++d) {
      double mean = 0;
      for (std::size_t k = 0; k < 4; ++k) mean += acts.at(i, k * 2 + d) / 4.0;
      CHECK(f.at(i, d) == doctest::Approx(mean).epsilon(1e-15));
    }
  }

  const Policy cont = Policy::mlp(Family::PendulumSwingUp, {{64, 64}}, 3);
  CHECK(cont.params().get("log_std").value == ValueGrid({1}, 0.0));
  CHECK_FALSE(Policy::mlp(Family::CartPole, {}, 3).params().contains("log_std"));

  for (auto [r, c, gain] : {std::tuple{4ul, 64ul, 1.4}, {64ul, 64ul, 1.0}, {64ul, 2ul, 0.01}}) {
    Rng orng(r * c);
    const ValueGrid w = orthogonal(r, c, gain, orng);
    const std::size_t small = std::min(r, c);
    for (std::size_t i = 0; i < small; ++i) {
      for (std::size_t j = 0; j < small; ++j) {
        double dot = 0;
        if (r <= c) {
          for (std::size_t q = 0; q < c; ++q) dot += w.at(i, q) * w.at(j, q);
        } else {
          for (std::size_t q = 0; q < r; ++q) dot += w.at(q, i) * w.at(q, j);
        }
        CHECK(std::abs(dot - (i == j ? gain * gain : 0.0)) < 1e-12);
      }
    }
  }
}

TEST_CASE("inference and training forward passes agree bit for bit") {
  Rng rng(29);
  for (Family f : {Family::CartPole, Family::PendulumSwingUp}) {
    Policy head = Policy::multipolar(f, random_sources(f, 3, 60), {{16, 16}}, 2);
    randomize(head, rng);
    const ValueGrid obs = random_obs(f, rng, 6);
    const ValueGrid acts = stacked_source_actions(head.sources(), obs);
    ValueGrid stored({6, f == Family::CartPole ? 1ul : head.action_dim()});
    std::vector<double> lp(6), vals(6);
    for (std::size_t i = 0; i < 6; ++i) {
      Rng r(i);
      const ActResult a = head.act_prepared(obs.row(i), acts.row(i), ActMode::Sample, r);
      std::copy(a.action_row.begin(), a.action_row.end(), stored.row(i).begin());
      lp[i] = a.log_prob;
      vals[i] = a.value;
    }
    num::Tape t;
    Var scores = head.scores(t, obs, acts);
    Var ls = head.action_spec().discrete ? Var{} : head.log_std(t);
    const ValueGrid tape_lp = head.log_prob(scores, ls, stored).value();
    const ValueGrid tape_v = head.value(t, obs).value();
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(tape_lp[i] == lp[i]);
      CHECK(tape_v[i] == vals[i]);
    }
  }
}

TEST_CASE("entropy matches closed forms") {
  Rng rng(30);
  Policy d = expressive_mlp(Family::Acrobot, 3);
  const ValueGrid obs = random_obs(Family::Acrobot, rng, 4);
  num::Tape t;
  Var s = d.scores(t, obs, {});
  const ValueGrid h = d.entropy(s, {}).value();
  const ValueGrid p = num::softmax(s.value());
  for (std::size_t i = 0; i < 4; ++i) {
    double ref = 0;
    for (std::size_t j = 0; j < 3; ++j) ref -= p.at(i, j) * std::log(p.at(i, j));
    CHECK(h[i] == doctest::Approx(ref).epsilon(1e-12));
  }

  Policy c = Policy::mlp(Family::PendulumSwingUp, {{8}}, 3);
  c.params().get("log_std").value = ValueGrid::vector({-0.7});
  num::Tape t2;
  const ValueGrid obs2 = random_obs(Family::PendulumSwingUp, rng, 2);
  const ValueGrid hc = c.entropy(c.scores(t2, obs2, {}), c.log_std(t2)).value();
  CHECK(hc[0] == doctest::Approx(0.5 * std::log(2 * std::numbers::pi * std::exp(1.0)) - 0.7).epsilon(1e-14));
}

TEST_CASE("sampling frequencies follow the softmax distribution") {
  Policy p = expressive_mlp(Family::Acrobot, 8);
  Rng rng(31);
  const ValueGrid raw = random_grid({6}, rng);
  num::Tape t;
  const ValueGrid probs = num::softmax(p.scores(t, raw.reshaped({1, 6}), {}).value());
  std::vector<int> counts(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[p.act(raw, ActMode::Sample, rng).action.index];
  for (std::size_t j = 0; j < 3; ++j) {
    const double sd = std::sqrt(probs[j] * (1 - probs[j]) / n);
    CHECK(std::abs(counts[j] / double(n) - probs[j]) < 5 * sd + 1e-9);
  }
}

TEST_CASE("degraded variants") {
  const SourceSet set = random_sources(Family::PendulumSwingUp, 2, 70);
  Policy head = Policy::multipolar(Family::PendulumSwingUp, set, {{8}}, 1);
  head.params().get("agg/theta").value.fill(0.3);

  Policy fixed = degrade(head, DegradeMode::FixedWeights);
  CHECK(fixed.params().get("agg/theta").value == ValueGrid({2, 1}, 1.0));
  CHECK_FALSE(fixed.params().get("agg/theta").trainable);
  CHECK(fixed.params().contains("pi/out/w"));

  Policy stateless = degrade(head, DegradeMode::StatelessAux);
  CHECK(stateless.aux_mode() == AuxMode::Stateless);
  CHECK_FALSE(stateless.params().contains("pi/out/w"));
  CHECK(stateless.params().contains("aux/bias"));
  CHECK(stateless.params().get("agg/theta").trainable);
  Rng rng(32);
  const ValueGrid a = stacked_source_actions(set, random_obs(Family::PendulumSwingUp, rng, 3));
  const ValueGrid o1 = random_obs(Family::PendulumSwingUp, rng, 3);
  const ValueGrid o2 = random_obs(Family::PendulumSwingUp, rng, 3);
  stateless.params().get("aux/bias").value = ValueGrid::vector({0.25});
  num::Tape t;
  const ValueGrid s1 = stateless.scores(t, o1, a).value();
  const ValueGrid s2 = stateless.scores(t, o2, a).value();
  CHECK(s1 == s2);
  CHECK_THROWS_AS(degrade(Policy::mlp(Family::CartPole, {}, 1), DegradeMode::FixedWeights),
                  PolicyMismatchError);
}

TEST_CASE("mismatched sources are rejected") {
  const SourceSet cart = random_sources(Family::CartPole, 2, 1);
  CHECK_THROWS_AS(Policy::multipolar(Family::Acrobot, cart, {}, 1), PolicyMismatchError);
  auto a = std::make_shared<SourcePolicy>(
      std::make_shared<const Policy>(Policy::mlp(Family::CartPole, {}, 1)));
  auto b = std::make_shared<SourcePolicy>(
      std::make_shared<const Policy>(Policy::mlp(Family::Acrobot, {}, 1)));
  CHECK_THROWS_AS(SourceSet({a, b}), PolicyMismatchError);
  CHECK_THROWS_AS(SourceSet(std::vector<std::shared_ptr<const SourcePolicy>>{}), PolicyMismatchError);
  auto head = std::make_shared<const Policy>(Policy::multipolar(Family::CartPole, cart, {}, 1));
  CHECK_THROWS_AS(SourcePolicy{head}, PolicyMismatchError);
  CHECK_THROWS_AS(source_actions(cart, ValueGrid::vector({1.0, 2.0})), PolicyMismatchError);
}
