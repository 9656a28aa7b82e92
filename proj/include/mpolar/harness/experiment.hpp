#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpolar/harness/evaluation.hpp"
#include "mpolar/policy/policy.hpp"
#include "mpolar/ppo/config.hpp"

namespace mpolar::harness {

// Runs task(i) for i in [0, n) on up to `workers` threads. Exceptions escape
// only after every task has finished; the first one is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& task);

std::string fnv1a_hex(std::string_view text);

// ---- source pools ---------------------------------------------------------

struct PoolEntry {
  std::string id;
  std::string artifact;  // file name inside the pool directory
  envs::EnvInstance instance;
  double final_reward = 0.0;  // mean of the last 100 training episodes
  bool failed = false;
  std::string error;
};

struct PoolConfig {
  envs::Family family = envs::Family::CartPole;
  std::size_t pool_size = 16;
  std::uint64_t samples_per_source = 60000;
  std::uint64_t master_seed = 1;
  policy::Architecture arch;
  ppo::TrainConfig train = ppo::TrainConfig::defaults(envs::Family::CartPole);
};

struct SourcePool {
  envs::Family family = envs::Family::CartPole;
  std::string fingerprint;  // hash of the PoolConfig that produced it
  std::filesystem::path dir;
  std::vector<PoolEntry> entries;

  std::vector<std::size_t> usable() const;  // indices of non-failed entries
  const PoolEntry& by_id(const std::string& id) const;
};

std::string pool_fingerprint(const PoolConfig& config);

// Trains one MLP per sampled instance and persists artifacts plus pool.json in
// dir. Entries already present for the same configuration are reused.
// Training failures are recorded as failed entries and excluded downstream.
SourcePool build_source_pool(const PoolConfig& config, const std::filesystem::path& dir,
                             std::size_t workers = 1,
                             const std::function<void(const PoolEntry&)>& on_entry = {});
SourcePool load_pool(const std::filesystem::path& dir);

enum class SourceFilter { Random, High, Low, Mixed };
std::string_view filter_name(SourceFilter f);
SourceFilter parse_filter(std::string_view name);

// Indices into pool.entries. Terciles use numpy-style percentiles of the
// usable entries' rewards: high = reward >= p(200/3), low = reward <= p(100/3).
std::vector<std::size_t> select_sources(const SourcePool& pool, std::size_t k, SourceFilter filter,
                                        Rng& rng);

// Frozen sources from pool artifacts; loaded artifacts are cached and shared.
policy::SourceSet load_source_set(const SourcePool& pool, const std::vector<std::size_t>& idx);

// ---- plans and runs -------------------------------------------------------

enum class Method { Mlp, Rpl, Multipolar, MultipolarFixedWeights, MultipolarStatelessAux };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct ExperimentPlan {
  std::string label;  // grouping name in reports; defaults to the method name
  envs::Family family = envs::Family::CartPole;
  std::size_t n_instances = 10;
  std::uint64_t instance_seed = 1000;
  std::vector<std::uint64_t> seeds{1, 2};
  std::size_t source_sets_per_instance = 2;
  std::size_t k = 4;
  Method method = Method::Multipolar;
  SourceFilter filter = SourceFilter::Random;
  ppo::TrainConfig train = ppo::TrainConfig::defaults(envs::Family::CartPole);
  // Empty means quarters of train.total_samples (25k/50k/75k/100k for CartPole).
  std::vector<double> checkpoints;
  policy::Architecture arch;

  void validate() const;
  std::vector<double> effective_checkpoints() const;
  std::string effective_label() const;
  // Source sets actually used: 1 for MLP.
  std::size_t effective_source_sets() const;
};

nlohmann::ordered_json plan_to_json(const ExperimentPlan& plan);
ExperimentPlan plan_from_json(const nlohmann::json& doc, const ExperimentPlan& base);
// Identity of a plan (and, for source-based methods, of its pool).
std::string plan_hash(const ExperimentPlan& plan, const std::string& pool_fingerprint);

// Target instance i of a plan family; shared by all plans with the same seed.
envs::EnvInstance target_instance(envs::Family family, std::uint64_t instance_seed, std::size_t i);

struct RunSpec {
  std::size_t instance_id = 0;
  std::uint64_t seed = 0;
  std::size_t source_set = 0;
  std::vector<std::size_t> sources;  // pool indices
  std::string run_id;
};

// The plan's cross product instances x source sets x seeds.
std::vector<RunSpec> expand_plan(const ExperimentPlan& plan, const SourcePool* pool);

struct LedgerRecord {
  std::string plan_hash;
  std::string label;
  std::size_t instance_id = 0;
  std::uint64_t seed = 0;
  std::size_t source_set = 0;
  std::vector<std::string> source_ids;
  std::string method;
  std::string episode_log_path;  // relative to the ledger directory
  std::string theta_log_path;    // empty for MLP runs
  std::string status = "ok";
  std::string error;

  std::string key() const;
};

nlohmann::ordered_json record_to_json(const LedgerRecord& r);
LedgerRecord record_from_json(const nlohmann::json& j);

// Append-only JSON-lines ledger with a serialized writer.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path path);
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path dir() const { return path_.parent_path(); }
  std::vector<LedgerRecord> records() const;
  void append(const LedgerRecord& r);

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

struct RunPlanOptions {
  std::size_t workers = 1;
  std::function<void(const LedgerRecord&)> on_record;
};

// Executes the runs of the plan that are not yet in the ledger and returns
// every ledger record belonging to the plan.
std::vector<LedgerRecord> run_plan(const ExperimentPlan& plan, const SourcePool* pool,
                                   RunLedger& ledger, const RunPlanOptions& options = {});

std::vector<ppo::EpisodeRecord> load_episodes(const RunLedger& ledger, const LedgerRecord& r);
std::vector<ThetaSnapshot> load_theta(const RunLedger& ledger, const LedgerRecord& r);

// ---- reports --------------------------------------------------------------

struct ResultRow {
  std::string method;
  double checkpoint = 0.0;
  BootstrapSummary summary;
};

// One row per (label, checkpoint) over the successful runs, pooled flat.
std::vector<ResultRow> results_table(const RunLedger& ledger,
                                      const std::vector<LedgerRecord>& records,
                                      const std::vector<double>& checkpoints, std::size_t n_boot,
                                      std::uint64_t seed);
std::string results_csv(const std::vector<ResultRow>& rows);

}  // namespace mpolar::harness
