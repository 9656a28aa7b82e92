#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "mpolar/cli/commands.hpp"
#include "mpolar/cli/svg.hpp"

using namespace mpolar;
using namespace mpolar::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "mpolar");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(int(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

// Minimal well-formedness check: every element closes in order.
bool balanced_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const std::size_t end = s.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = s.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag.back() == '/') continue;
    if (tag[0] == '/') {
      const std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else {
      stack.push_back(tag.substr(0, tag.find_first_of(" \n\t")));
    }
  }
  return stack.empty();
}

nlohmann::json tiny_config(const fs::path& root) {
  nlohmann::json doc = nlohmann::json::parse(R"({
    "family": "CartPole",
    "pool": {"pool_size": 4, "samples_per_source": 1500, "hidden": [8],
             "train": {"epochs_per_rollout": 2}},
    "plans": [
      {"method": "MLP", "n_instances": 2, "seeds": [1], "hidden": [8],
       "train": {"total_samples": 768, "epochs_per_rollout": 2}},
      {"method": "MULTIPOLAR", "k": 2, "n_instances": 2, "seeds": [1],
       "source_sets_per_instance": 1, "hidden": [8],
       "train": {"total_samples": 768, "epochs_per_rollout": 2}}
    ],
    "report": {"n_boot": 500, "checkpoints": [384, 768]}
  })");
  doc["pool_dir"] = (root / "pool").string();
  return doc;
}

}  // namespace

TEST_CASE("gen-instances is deterministic and writes valid instance files") {
  TempDir a("mpolar_gen_a"), b("mpolar_gen_b");
  CHECK(invoke({"gen-instances", "--family", "PendulumSwingUp", "--n", "3", "--out", a.path.string()}) == 0);
  CHECK(invoke({"gen-instances", "--family", "PendulumSwingUp", "--n", "3", "--out", b.path.string()}) == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a.path)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b.path / e.path().filename()));
    CHECK_NOTHROW(envs::instance_from_json(nlohmann::json::parse(slurp(e.path()))));
  }
  CHECK(files == 3);
  TempDir c("mpolar_gen_c");
  CHECK(invoke({"gen-instances", "--family", "PendulumSwingUp", "--n", "3", "--seed", "5", "--out",
             c.path.string()}) == 0);
  CHECK(slurp(c.path / "instance_000.json") != slurp(a.path / "instance_000.json"));
}

TEST_CASE("usage and runtime failures map to exit codes") {
  TempDir d("mpolar_cli_exit");
  CHECK(invoke({}) == 1);
  CHECK(invoke({"frobnicate"}) == 1);
  CHECK(invoke({"run", "--out", d.path.string()}) == 1);  // --config missing
  CHECK(invoke({"gen-instances", "--family", "Hopper", "--out", d.path.string()}) == 1);
  std::ofstream(d.path / "bad.json") << R"({"family": "CartPole", "colour": 1})";
  CHECK(invoke({"run", "--config", (d.path / "bad.json").string(), "--out", d.path.string()}) == 1);
  std::ofstream(d.path / "ok.json") << R"({"family": "CartPole"})";
  CHECK(invoke({"plot", "--config", (d.path / "ok.json").string(), "--out", (d.path / "empty").string()}) == 2);
  CHECK_FALSE(fs::exists(d.path / "empty" / "plots"));
}

TEST_CASE("run configuration parsing") {
  const RunConfig c = parse_run_config(nlohmann::json{{"family", "Acrobot"}});
  CHECK(c.family == envs::Family::Acrobot);
  ppo::TrainConfig expected = ppo::TrainConfig::defaults(envs::Family::Acrobot);
  expected.total_samples = c.pool.samples_per_source;
  CHECK(c.pool.train == expected);
  CHECK(report_checkpoints(parse_run_config(nlohmann::json::object())) ==
        std::vector<double>{25000, 50000, 75000, 100000});
  CHECK_THROWS_AS(parse_run_config(nlohmann::json{{"report", {{"nboot", 3}}}}), UsageError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(
                      R"({"plans": [{"method": "MLP"}, {"method": "MLP"}]})")),
                  UsageError);
  const RunConfig two = parse_run_config(nlohmann::json::parse(
      R"({"plans": [{"method": "MLP"}, {"method": "MLP", "label": "MLP-b"}]})"));
  CHECK(two.plans.size() == 2);
  const RunConfig back = parse_run_config(nlohmann::json::parse(resolved_config_json(two).dump()));
  CHECK(resolved_config_json(back) == resolved_config_json(two));
}

TEST_CASE("learning curves average interpolated runs with standard errors") {
  using ppo::EpisodeRecord;
  const std::vector<std::vector<EpisodeRecord>> runs{
      {{10, 0.0, 10}, {20, 10.0, 10}, {30, 20.0, 10}},
      {{10, 4.0, 10}, {20, 4.0, 10}},
  };
  const Series s = learning_curve("m", runs, {15, 25}, 1);
  REQUIRE(s.x.size() == 2);
  // x=15: run0 -> 5, run1 -> 4; x=25 only run0 (15) remains.
  CHECK(s.y[0] == doctest::Approx(4.5));
  CHECK(s.err[0] == doctest::Approx(std::sqrt(0.5) / std::sqrt(2.0)));
  CHECK(s.y[1] == doctest::Approx(15.0));
  CHECK(s.err[1] == doctest::Approx(0.0));

  const Series w = learning_curve("m", {runs[0]}, {30}, 2);
  CHECK(w.y[0] == doctest::Approx(15.0));  // mean of the last two episodes
}

TEST_CASE("svg rendering is well formed with one polyline per series") {
  Panel a{"a & b", "x", "y", {{"one", {0, 1, 2}, {1, 2, 3}, {}}, {"two<", {0, 1}, {3, 1}, {0.5, 0.5}}}};
  Panel b{"c", "x", "y", {{"three", {0, 1}, {0, 0}, {}}}};
  const std::string svg = render_line_panels({a, b});
  CHECK(balanced_xml(svg));
  CHECK(count_of(svg, "<polyline") == 3);
  CHECK(count_of(svg, "class=\"panel\"") == 2);
  CHECK(svg.find("two&lt;") != std::string::npos);
  const std::string hist = render_histogram("h", {1, 2, 2, 3, 10}, 4);
  CHECK(balanced_xml(hist));
  CHECK(count_of(hist, "class=\"bin\"") == 4);
  CHECK(xml_escape("<a href=\"x\">&'") == "&lt;a href=&quot;x&quot;&gt;&amp;&apos;");
}

TEST_CASE("end-to-end pipeline: train-pool, run, report, plot") {
  TempDir root("mpolar_cli_e2e");
  std::ofstream(root.path / "cfg.json") << tiny_config(root.path).dump(2);
  const std::string cfg = (root.path / "cfg.json").string();
  const std::string out = (root.path / "out").string();
  REQUIRE(invoke({"train-pool", "--config", cfg, "--out", (root.path / "pool").string(), "--workers", "2"}) == 0);
  CHECK(fs::exists(root.path / "pool" / "pool.json"));
  REQUIRE(invoke({"run", "--config", cfg, "--out", out, "--workers", "2"}) == 0);
  CHECK(fs::exists(root.path / "out" / "config.resolved.json"));

  REQUIRE(invoke({"report", "--out", out}) == 0);
  const std::string first = slurp(root.path / "out" / "results.csv");
  REQUIRE(invoke({"report", "--config", cfg, "--out", out}) == 0);
  CHECK(slurp(root.path / "out" / "results.csv") == first);
  CHECK(first.rfind("method,checkpoint_T,boot_mean,lo95,hi95\n", 0) == 0);
  CHECK(count_of(first, "\nMLP,") == 2);
  CHECK(count_of(first, "\nMULTIPOLAR,") == 2);
  CHECK(fs::exists(root.path / "out" / "suppression.csv"));

  REQUIRE(invoke({"plot", "--out", out}) == 0);
  const std::string curves = slurp(root.path / "out" / "plots" / "learning_curves.svg");
  CHECK(balanced_xml(curves));
  CHECK(count_of(curves, "<polyline") == 2);
  const std::string theta = slurp(root.path / "out" / "plots" / "theta_MULTIPOLAR.svg");
  CHECK(balanced_xml(theta));
  CHECK(count_of(theta, "<polyline") == 2);
  CHECK(fs::exists(root.path / "out" / "plots" / "source_pool_histogram.svg"));
}
