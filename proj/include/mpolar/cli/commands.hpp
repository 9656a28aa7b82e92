#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpolar/harness/experiment.hpp"

namespace mpolar::cli {

// Bad command line or configuration file (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structured run configuration. Every field is optional; family-specific
// defaults come from the per-family PPO table.
//
//   {
//     "family": "CartPole",
//     "pool": {"pool_size": 16, "samples_per_source": 60000, "master_seed": 1,
//              "hidden": [64, 64], "train": {...}},
//     "pool_dir": "out/pool",
//     "plans": [{"method": "MULTIPOLAR", "k": 4, ...}],
//     "report": {"n_boot": 10000, "seed": 0, "checkpoints": [25000, 50000]}
//   }
struct RunConfig {
  envs::Family family = envs::Family::CartPole;
  harness::PoolConfig pool;
  std::string pool_dir;
  std::vector<harness::ExperimentPlan> plans;
  std::size_t n_boot = 10000;
  std::uint64_t report_seed = 0;
  std::vector<double> report_checkpoints;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json resolved_config_json(const RunConfig& config);

// Checkpoints used by reports: explicit report checkpoints, else those of the
// first plan, else 25k/50k/75k/100k.
std::vector<double> report_checkpoints(const RunConfig& config);

std::vector<std::filesystem::path> cmd_gen_instances(envs::Family family, std::size_t n,
                                                     std::uint64_t seed,
                                                     const std::filesystem::path& out_dir);
harness::SourcePool cmd_train_pool(const RunConfig& config, const std::filesystem::path& out_dir,
                                   std::size_t workers);
std::vector<harness::LedgerRecord> cmd_run(const RunConfig& config,
                                           const std::filesystem::path& out_dir,
                                           std::size_t workers);
// Writes results.csv (and suppression.csv when theta logs exist); returns the
// results CSV text.
std::string cmd_report(const RunConfig& config, const std::filesystem::path& out_dir);
// Writes SVG files under out_dir/plots and returns their paths.
std::vector<std::filesystem::path> cmd_plot(const RunConfig& config,
                                            const std::filesystem::path& out_dir);

// Full command-line entry point; returns the process exit code
// (0 success, 1 usage, 2 runtime failure).
int run_cli(int argc, char** argv);

}  // namespace mpolar::cli
