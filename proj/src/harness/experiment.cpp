#include "mpolar/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "mpolar/policy/serialization.hpp"
#include "mpolar/ppo/trainer.hpp"

namespace mpolar::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& task) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

// ---- source pools ---------------------------------------------------------

namespace {

ordered_json arch_json(const policy::Architecture& a) { return ordered_json(a.hidden); }

ordered_json entry_to_json(const PoolEntry& e) {
  ordered_json j;
  j["id"] = e.id;
  j["artifact"] = e.artifact;
  j["instance"] = envs::instance_to_json(e.instance);
  j["final_reward"] = e.final_reward;
  j["failed"] = e.failed;
  j["error"] = e.error;
  return j;
}

PoolEntry entry_from_json(const json& j) {
  PoolEntry e;
  e.id = j.at("id").get<std::string>();
  e.artifact = j.at("artifact").get<std::string>();
  e.instance = envs::instance_from_json(j.at("instance"));
  e.final_reward = j.at("final_reward").get<double>();
  e.failed = j.at("failed").get<bool>();
  e.error = j.at("error").get<std::string>();
  return e;
}

void save_pool(const SourcePool& pool) {
  ordered_json j;
  j["family"] = envs::family_name(pool.family);
  j["fingerprint"] = pool.fingerprint;
  j["entries"] = ordered_json::array();
  for (const auto& e : pool.entries) j["entries"].push_back(entry_to_json(e));
  write_text_atomic(pool.dir / "pool.json", j.dump(2) + "\n");
}

std::string entry_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "src%03zu", i);
  return buf;
}

}  // namespace

std::vector<std::size_t> SourcePool::usable() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].failed) out.push_back(i);
  }
  return out;
}

const PoolEntry& SourcePool::by_id(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw HarnessError("source pool has no entry '" + id + "'");
}

std::string pool_fingerprint(const PoolConfig& c) {
  ordered_json j;
  j["family"] = envs::family_name(c.family);
  j["pool_size"] = c.pool_size;
  j["samples_per_source"] = c.samples_per_source;
  j["master_seed"] = c.master_seed;
  j["hidden"] = arch_json(c.arch);
  auto train = ppo::config_to_json(c.train);
  train.erase("seed");
  train.erase("total_samples");
  j["train"] = train;
  return fnv1a_hex(j.dump());
}

SourcePool load_pool(const fs::path& dir) {
  std::ifstream f(dir / "pool.json");
  if (!f) throw HarnessError("no source pool at " + dir.string() + " (missing pool.json)");
  SourcePool pool;
  try {
    const json j = json::parse(f);
    pool.family = envs::parse_family(j.at("family").get<std::string>());
    pool.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& e : j.at("entries")) pool.entries.push_back(entry_from_json(e));
  } catch (const json::exception& e) {
    throw HarnessError("malformed pool.json in " + dir.string() + ": " + e.what());
  }
  pool.dir = dir;
  return pool;
}

SourcePool build_source_pool(const PoolConfig& config, const fs::path& dir, std::size_t workers,
                             const std::function<void(const PoolEntry&)>& on_entry) {
  if (config.pool_size == 0) throw HarnessError("pool_size must be positive");
  fs::create_directories(dir);
  SourcePool pool;
  pool.family = config.family;
  pool.fingerprint = pool_fingerprint(config);
  pool.dir = dir;
  std::map<std::string, PoolEntry> done;
  if (fs::exists(dir / "pool.json")) {
    SourcePool old = load_pool(dir);
    if (old.fingerprint != pool.fingerprint) {
      throw HarnessError("directory " + dir.string() +
                         " holds a source pool built with a different configuration");
    }
    for (auto& e : old.entries) done[e.id] = std::move(e);
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < config.pool_size; ++i) {
    if (!done.count(entry_id(i))) todo.push_back(i);
  }
  std::mutex mu;
  auto flush = [&] {
    pool.entries.clear();
    for (const auto& [id, e] : done) pool.entries.push_back(e);
    save_pool(pool);
  };

  parallel_for(todo.size(), workers, [&](std::size_t t) {
    const std::size_t i = todo[t];
    PoolEntry e;
    e.id = entry_id(i);
    e.artifact = e.id + ".pol";
    e.instance = envs::sample_instance(
        config.family, Rng::derive(Rng::derive(config.master_seed, "pool-instance"), i));
    try {
      ppo::TrainConfig cfg = config.train;
      cfg.total_samples = config.samples_per_source;
      cfg.seed = Rng::derive(Rng::derive(config.master_seed, "pool-train"), i);
      auto pol = policy::Policy::mlp(config.family, config.arch, Rng::derive(cfg.seed, "init"));
      const auto res = ppo::train(pol, e.instance, cfg);
      e.final_reward = ppo::final_mean_reward(res.episodes, 100);
      if (!std::isfinite(e.final_reward)) throw HarnessError("non-finite final reward");
      policy::save_policy(pol, dir / e.artifact);
    } catch (const std::exception& ex) {
      e.failed = true;
      e.final_reward = 0.0;
      e.error = ex.what();
      std::cerr << "source pool: " << e.id << " failed: " << ex.what() << "\n";
    }
    std::lock_guard lock(mu);
    done[e.id] = e;
    flush();
    if (on_entry) on_entry(e);
  });
  std::lock_guard lock(mu);
  flush();
  return pool;
}

std::string_view filter_name(SourceFilter f) {
  switch (f) {
    case SourceFilter::Random: return "random";
    case SourceFilter::High: return "high";
    case SourceFilter::Low: return "low";
    case SourceFilter::Mixed: return "mixed";
  }
  return "?";
}

SourceFilter parse_filter(std::string_view name) {
  for (auto f : {SourceFilter::Random, SourceFilter::High, SourceFilter::Low, SourceFilter::Mixed}) {
    if (filter_name(f) == name) return f;
  }
  throw HarnessError("unknown source filter '" + std::string(name) + "'");
}

std::vector<std::size_t> select_sources(const SourcePool& pool, std::size_t k, SourceFilter filter,
                                        Rng& rng) {
  if (k == 0) throw HarnessError("select_sources: k must be positive");
  const auto usable = pool.usable();
  std::vector<double> rewards;
  for (auto i : usable) rewards.push_back(pool.entries[i].final_reward);
  std::sort(rewards.begin(), rewards.end());

  auto pick = [&](std::vector<std::size_t> cand, std::size_t n, const char* what) {
    if (cand.size() < n) {
      throw HarnessError("select_sources: need " + std::to_string(n) + " " + what +
                         " sources, pool has " + std::to_string(cand.size()));
    }
    rng.shuffle(std::span<std::size_t>(cand));
    cand.resize(n);
    return cand;
  };
  auto tercile = [&](bool high) {
    std::vector<std::size_t> out;
    if (rewards.empty()) return out;
    const double hi_cut = percentile_sorted(rewards, 200.0 / 3.0);
    const double lo_cut = percentile_sorted(rewards, 100.0 / 3.0);
    for (auto i : usable) {
      const double r = pool.entries[i].final_reward;
      if (high ? r >= hi_cut : r <= lo_cut) out.push_back(i);
    }
    return out;
  };

  switch (filter) {
    case SourceFilter::Random: return pick(usable, k, "usable");
    case SourceFilter::High: return pick(tercile(true), k, "high-tercile");
    case SourceFilter::Low: return pick(tercile(false), k, "low-tercile");
    case SourceFilter::Mixed: {
      auto hi = pick(tercile(true), k / 2, "high-tercile");
      std::vector<std::size_t> lo_cand;
      for (auto i : tercile(false)) {
        if (std::find(hi.begin(), hi.end(), i) == hi.end()) lo_cand.push_back(i);
      }
      auto lo = pick(lo_cand, k - k / 2, "low-tercile");
      hi.insert(hi.end(), lo.begin(), lo.end());
      return hi;
    }
  }
  return {};
}

policy::SourceSet load_source_set(const SourcePool& pool, const std::vector<std::size_t>& idx) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const policy::SourcePolicy>> cache;
  std::vector<std::shared_ptr<const policy::SourcePolicy>> out;
  for (auto i : idx) {
    const auto& e = pool.entries.at(i);
    if (e.failed) throw HarnessError("source " + e.id + " failed to train and cannot be used");
    const auto path = fs::absolute(pool.dir / e.artifact).lexically_normal().string();
    std::lock_guard lock(mu);
    auto it = cache.find(path);
    if (it == cache.end()) {
      auto net = std::make_shared<const policy::Policy>(policy::load_policy(path, pool.family));
      it = cache.emplace(path, std::make_shared<const policy::SourcePolicy>(net)).first;
    }
    out.push_back(it->second);
  }
  return policy::SourceSet(std::move(out));
}

// ---- plans ----------------------------------------------------------------

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Mlp: return "MLP";
    case Method::Rpl: return "RPL";
    case Method::Multipolar: return "MULTIPOLAR";
    case Method::MultipolarFixedWeights: return "MULTIPOLAR_fixed_weights";
    case Method::MultipolarStatelessAux: return "MULTIPOLAR_stateless_aux";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::Mlp, Method::Rpl, Method::Multipolar, Method::MultipolarFixedWeights,
                 Method::MultipolarStatelessAux}) {
    if (method_name(m) == name) return m;
  }
  throw HarnessError("unknown method '" + std::string(name) + "'");
}

void ExperimentPlan::validate() const {
  if (n_instances == 0) throw HarnessError("plan: n_instances must be positive");
  if (seeds.empty()) throw HarnessError("plan: at least one seed is required");
  if (k == 0) throw HarnessError("plan: k must be >= 1");
  if (method == Method::Rpl && k != 1) throw HarnessError("plan: RPL requires k = 1");
  if (method != Method::Mlp && source_sets_per_instance == 0) {
    throw HarnessError("plan: source_sets_per_instance must be positive");
  }
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw HarnessError("plan: duplicate seeds");
  train.validate();
}

std::string ExperimentPlan::effective_label() const {
  return label.empty() ? std::string(method_name(method)) : label;
}

std::size_t ExperimentPlan::effective_source_sets() const {
  return method == Method::Mlp ? 1 : source_sets_per_instance;
}

std::vector<double> ExperimentPlan::effective_checkpoints() const {
  if (!checkpoints.empty()) return checkpoints;
  const double t = static_cast<double>(train.total_samples);
  return {t / 4, t / 2, 3 * t / 4, t};
}

ordered_json plan_to_json(const ExperimentPlan& p) {
  ordered_json j;
  j["label"] = p.effective_label();
  j["family"] = envs::family_name(p.family);
  j["n_instances"] = p.n_instances;
  j["instance_seed"] = p.instance_seed;
  j["seeds"] = p.seeds;
  j["source_sets_per_instance"] = p.source_sets_per_instance;
  j["k"] = p.k;
  j["method"] = method_name(p.method);
  j["source_filter"] = filter_name(p.filter);
  j["hidden"] = arch_json(p.arch);
  j["checkpoints"] = p.effective_checkpoints();
  j["train"] = ppo::config_to_json(p.train);
  return j;
}

ExperimentPlan plan_from_json(const json& doc, const ExperimentPlan& base) {
  if (!doc.is_object()) throw HarnessError("plan: expected an object");
  ExperimentPlan p = base;
  try {
    if (doc.contains("family")) {
      p.family = envs::parse_family(doc.at("family").get<std::string>());
      if (p.family != base.family) p.train = ppo::TrainConfig::defaults(p.family);
    }
    for (const auto& [key, v] : doc.items()) {
      if (key == "family") continue;
      if (key == "label") p.label = v.get<std::string>();
      else if (key == "n_instances") p.n_instances = v.get<std::size_t>();
      else if (key == "instance_seed") p.instance_seed = v.get<std::uint64_t>();
      else if (key == "seeds") p.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "source_sets_per_instance") p.source_sets_per_instance = v.get<std::size_t>();
      else if (key == "k") p.k = v.get<std::size_t>();
      else if (key == "method") p.method = parse_method(v.get<std::string>());
      else if (key == "source_filter") p.filter = parse_filter(v.get<std::string>());
      else if (key == "hidden") p.arch.hidden = v.get<std::vector<std::size_t>>();
      else if (key == "checkpoints") p.checkpoints = v.get<std::vector<double>>();
      else if (key == "train") p.train = ppo::config_from_json(v, p.train);
      else throw HarnessError("plan: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw HarnessError(std::string("plan: ") + e.what());
  }
  p.validate();
  return p;
}

std::string plan_hash(const ExperimentPlan& plan, const std::string& pool_fp) {
  ordered_json j = plan_to_json(plan);
  j["train"].erase("seed");
  j.erase("checkpoints");
  if (plan.method != Method::Mlp) j["pool"] = pool_fp;
  return fnv1a_hex(j.dump());
}

envs::EnvInstance target_instance(envs::Family family, std::uint64_t instance_seed, std::size_t i) {
  return envs::sample_instance(family, Rng::derive(Rng::derive(instance_seed, "target"), i));
}

std::vector<RunSpec> expand_plan(const ExperimentPlan& plan, const SourcePool* pool) {
  plan.validate();
  if (plan.method != Method::Mlp) {
    if (!pool) throw HarnessError("plan '" + plan.effective_label() + "' needs a source pool");
    if (pool->family != plan.family) {
      throw HarnessError("source pool family " + std::string(envs::family_name(pool->family)) +
                         " does not match plan family " +
                         std::string(envs::family_name(plan.family)));
    }
  }
  std::vector<RunSpec> out;
  const Rng sets_root(Rng::derive(Rng::derive(plan.instance_seed, "source-sets"),
                                  std::string(filter_name(plan.filter)) + "/" +
                                      std::to_string(plan.k)));
  for (std::size_t i = 0; i < plan.n_instances; ++i) {
    for (std::size_t s = 0; s < plan.effective_source_sets(); ++s) {
      std::vector<std::size_t> sources;
      if (plan.method != Method::Mlp) {
        Rng rng = sets_root.fork(i).fork(s);
        sources = select_sources(*pool, plan.k, plan.filter, rng);
      }
      for (auto seed : plan.seeds) {
        RunSpec r;
        r.instance_id = i;
        r.seed = seed;
        r.source_set = s;
        r.sources = sources;
        r.run_id = plan.effective_label() + "-i" + std::to_string(i) + "-set" + std::to_string(s) +
                   "-s" + std::to_string(seed);
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

// ---- ledger ---------------------------------------------------------------

std::string LedgerRecord::key() const {
  return plan_hash + "/" + std::to_string(instance_id) + "/" + std::to_string(source_set) + "/" +
         std::to_string(seed);
}

ordered_json record_to_json(const LedgerRecord& r) {
  ordered_json j;
  j["plan_hash"] = r.plan_hash;
  j["label"] = r.label;
  j["instance_id"] = r.instance_id;
  j["seed"] = r.seed;
  j["source_set"] = r.source_set;
  j["source_ids"] = r.source_ids;
  j["method"] = r.method;
  j["episode_log_path"] = r.episode_log_path;
  j["theta_log_path"] = r.theta_log_path;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

LedgerRecord record_from_json(const json& j) {
  LedgerRecord r;
  r.plan_hash = j.at("plan_hash").get<std::string>();
  r.label = j.at("label").get<std::string>();
  r.instance_id = j.at("instance_id").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.source_set = j.at("source_set").get<std::size_t>();
  r.source_ids = j.at("source_ids").get<std::vector<std::string>>();
  r.method = j.at("method").get<std::string>();
  r.episode_log_path = j.at("episode_log_path").get<std::string>();
  r.theta_log_path = j.at("theta_log_path").get<std::string>();
  r.status = j.at("status").get<std::string>();
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  return r;
}

RunLedger::RunLedger(fs::path path) : path_(std::move(path)) {}

std::vector<LedgerRecord> RunLedger::records() const {
  std::lock_guard lock(mu_);
  std::vector<LedgerRecord> out;
  std::ifstream f(path_);
  if (!f) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception&) {
      // A run interrupted mid-append leaves a partial last line; it is redone.
      std::cerr << "ledger " << path_.string() << ": skipping unreadable line " << lineno << "\n";
    }
  }
  return out;
}

void RunLedger::append(const LedgerRecord& r) {
  std::lock_guard lock(mu_);
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream f(path_, std::ios::app);
  if (!f) throw HarnessError("cannot append to ledger " + path_.string());
  f << record_to_json(r).dump() << "\n";
  f.flush();
  if (!f) throw HarnessError("cannot append to ledger " + path_.string());
}

namespace {

LedgerRecord execute_run(const ExperimentPlan& plan, const SourcePool* pool, const RunSpec& spec,
                         const std::string& hash, const fs::path& root) {
  LedgerRecord rec;
  rec.plan_hash = hash;
  rec.label = plan.effective_label();
  rec.instance_id = spec.instance_id;
  rec.seed = spec.seed;
  rec.source_set = spec.source_set;
  rec.method = method_name(plan.method);
  for (auto i : spec.sources) rec.source_ids.push_back(pool->entries.at(i).id);

  const fs::path rel = fs::path("runs") / hash;
  try {
    const auto inst = target_instance(plan.family, plan.instance_seed, spec.instance_id);
    ppo::TrainConfig cfg = plan.train;
    cfg.seed = Rng::derive(Rng::derive(spec.seed, "run"), spec.instance_id);
    const auto init_seed = Rng::derive(cfg.seed, "init");

    std::optional<policy::Policy> pol;
    if (plan.method == Method::Mlp) {
      pol.emplace(policy::Policy::mlp(plan.family, plan.arch, init_seed));
    } else {
      auto sources = load_source_set(*pool, spec.sources);
      const auto aux = plan.method == Method::MultipolarStatelessAux ? policy::AuxMode::Stateless
                                                                     : policy::AuxMode::Network;
      pol.emplace(policy::Policy::multipolar(plan.family, std::move(sources), plan.arch, init_seed,
                                             aux));
      if (plan.method == Method::MultipolarFixedWeights) {
        pol.emplace(policy::degrade(std::move(*pol), policy::DegradeMode::FixedWeights));
      }
    }

    std::vector<ThetaSnapshot> thetas;
    ppo::TrainCallbacks cb;
    if (pol->is_multipolar()) {
      thetas.push_back({0, 0, pol->params().get("agg/theta").value});
      cb.on_update = [&](const ppo::UpdateInfo& info, const policy::Policy& p) {
        thetas.push_back({info.index, info.samples, p.params().get("agg/theta").value});
      };
    }
    const auto res = ppo::train(*pol, inst, cfg, cb);

    rec.episode_log_path = (rel / (spec.run_id + ".episodes.csv")).string();
    write_episode_csv(root / rec.episode_log_path, spec.run_id, res.episodes);
    if (pol->is_multipolar()) {
      rec.theta_log_path = (rel / (spec.run_id + ".theta.csv")).string();
      write_theta_csv(root / rec.theta_log_path, spec.run_id, thetas);
    }
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.error = e.what();
    rec.episode_log_path.clear();
    rec.theta_log_path.clear();
  }
  return rec;
}

}  // namespace

std::vector<LedgerRecord> run_plan(const ExperimentPlan& plan, const SourcePool* pool,
                                   RunLedger& ledger, const RunPlanOptions& options) {
  const auto specs = expand_plan(plan, pool);
  const std::string hash = plan_hash(plan, pool && plan.method != Method::Mlp ? pool->fingerprint : "");
  std::set<std::string> done;
  for (const auto& r : ledger.records()) {
    if (r.plan_hash == hash) done.insert(r.key());
  }
  std::vector<const RunSpec*> pending;
  for (const auto& s : specs) {
    LedgerRecord probe;
    probe.plan_hash = hash;
    probe.instance_id = s.instance_id;
    probe.seed = s.seed;
    probe.source_set = s.source_set;
    if (!done.count(probe.key())) pending.push_back(&s);
  }
  const fs::path root = ledger.dir();
  parallel_for(pending.size(), options.workers, [&](std::size_t i) {
    const auto rec = execute_run(plan, pool, *pending[i], hash, root);
    if (rec.status != "ok") {
      std::cerr << "run " << pending[i]->run_id << " failed: " << rec.error << "\n";
    }
    ledger.append(rec);
    if (options.on_record) options.on_record(rec);
  });

  std::vector<LedgerRecord> out;
  std::set<std::string> seen;
  for (auto& r : ledger.records()) {
    if (r.plan_hash == hash && seen.insert(r.key()).second) out.push_back(std::move(r));
  }
  return out;
}

std::vector<ppo::EpisodeRecord> load_episodes(const RunLedger& ledger, const LedgerRecord& r) {
  if (r.status != "ok") throw HarnessError("run " + r.key() + " did not complete");
  return read_episode_csv(ledger.dir() / r.episode_log_path);
}

std::vector<ThetaSnapshot> load_theta(const RunLedger& ledger, const LedgerRecord& r) {
  if (r.theta_log_path.empty()) throw HarnessError("run " + r.key() + " has no theta log");
  return read_theta_csv(ledger.dir() / r.theta_log_path);
}

// ---- reports --------------------------------------------------------------

std::vector<ResultRow> results_table(const RunLedger& ledger,
                                      const std::vector<LedgerRecord>& records,
                                      const std::vector<double>& checkpoints, std::size_t n_boot,
                                      std::uint64_t seed) {
  std::map<std::string, std::vector<std::vector<ppo::EpisodeRecord>>> by_label;
  for (const auto& r : records) {
    if (r.status != "ok") continue;
    by_label[r.label].push_back(load_episodes(ledger, r));
  }
  std::vector<ResultRow> rows;
  for (const auto& [label, logs] : by_label) {
    for (double T : checkpoints) {
      std::vector<double> values;
      for (const auto& log : logs) {
        try {
          values.push_back(average_episodic_reward(log, T));
        } catch (const HarnessError&) {
          // no episode finished inside this window
        }
      }
      if (values.size() < 2) continue;
      rows.push_back({label, T, bootstrap_ci(values, n_boot, seed)});
    }
  }
  return rows;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "method,checkpoint_T,boot_mean,lo95,hi95\n";
  out.setf(std::ios::fixed);
  for (const auto& r : rows) {
    out.precision(0);
    out << r.method << ',' << r.checkpoint << ',';
    out.precision(4);
    out << r.summary.mean << ',' << r.summary.lower_95 << ',' << r.summary.upper_95 << '\n';
  }
  return out.str();
}

}  // namespace mpolar::harness
