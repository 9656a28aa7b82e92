#include "mpolar/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mpolar/cli/svg.hpp"

namespace mpolar::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

harness::PoolConfig pool_from_json(const json& doc, harness::PoolConfig p) {
  if (!doc.is_object()) throw UsageError("config: 'pool' must be an object");
  for (const auto& [key, v] : doc.items()) {
    if (key == "pool_size") p.pool_size = v.get<std::size_t>();
    else if (key == "samples_per_source") p.samples_per_source = v.get<std::uint64_t>();
    else if (key == "master_seed") p.master_seed = v.get<std::uint64_t>();
    else if (key == "hidden") p.arch.hidden = v.get<std::vector<std::size_t>>();
    else if (key == "train") p.train = ppo::config_from_json(v, p.train);
    else throw UsageError("config: unknown key 'pool." + key + "'");
  }
  return p;
}

ordered_json pool_to_json(const harness::PoolConfig& p) {
  ordered_json j;
  j["pool_size"] = p.pool_size;
  j["samples_per_source"] = p.samples_per_source;
  j["master_seed"] = p.master_seed;
  j["hidden"] = p.arch.hidden;
  j["train"] = ppo::config_to_json(p.train);
  return j;
}

fs::path config_echo_path(const fs::path& out) { return out / "config.resolved.json"; }

void echo_config(const RunConfig& c, const fs::path& out) {
  harness::write_text_atomic(config_echo_path(out), resolved_config_json(c).dump(2) + "\n");
}

std::optional<harness::SourcePool> maybe_pool(const RunConfig& c) {
  bool needed = false;
  for (const auto& p : c.plans) needed |= p.method != harness::Method::Mlp;
  if (!needed) return std::nullopt;
  if (c.pool_dir.empty()) throw UsageError("config: plans with source policies need 'pool_dir'");
  return harness::load_pool(c.pool_dir);
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw UsageError("config: expected a JSON object");
  RunConfig c;
  try {
    if (doc.contains("family")) c.family = envs::parse_family(doc.at("family").get<std::string>());
    c.pool.family = c.family;
    c.pool.train = ppo::TrainConfig::defaults(c.family);
    c.pool.train.total_samples = c.pool.samples_per_source;
    harness::ExperimentPlan base;
    base.family = c.family;
    base.train = ppo::TrainConfig::defaults(c.family);
    for (const auto& [key, v] : doc.items()) {
      if (key == "family") continue;
      if (key == "pool") {
        c.pool = pool_from_json(v, c.pool);
        c.pool.train.total_samples = c.pool.samples_per_source;
      } else if (key == "pool_dir") {
        c.pool_dir = v.get<std::string>();
      } else if (key == "plans") {
        if (!v.is_array()) throw UsageError("config: 'plans' must be an array");
        for (const auto& p : v) c.plans.push_back(harness::plan_from_json(p, base));
      } else if (key == "report") {
        for (const auto& [rk, rv] : v.items()) {
          if (rk == "n_boot") c.n_boot = rv.get<std::size_t>();
          else if (rk == "seed") c.report_seed = rv.get<std::uint64_t>();
          else if (rk == "checkpoints") c.report_checkpoints = rv.get<std::vector<double>>();
          else throw UsageError("config: unknown key 'report." + rk + "'");
        }
      } else {
        throw UsageError("config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const ppo::ConfigError& e) {
    throw UsageError(e.what());
  } catch (const harness::HarnessError& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const envs::EnvError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  std::map<std::string, int> labels;
  for (const auto& p : c.plans) {
    if (++labels[p.effective_label()] > 1) {
      throw UsageError("config: duplicate plan label '" + p.effective_label() + "'");
    }
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

ordered_json resolved_config_json(const RunConfig& c) {
  ordered_json j;
  j["family"] = envs::family_name(c.family);
  j["pool"] = pool_to_json(c.pool);
  j["pool_dir"] = c.pool_dir;
  j["plans"] = ordered_json::array();
  for (const auto& p : c.plans) j["plans"].push_back(harness::plan_to_json(p));
  j["report"] = {{"n_boot", c.n_boot}, {"seed", c.report_seed},
                 {"checkpoints", report_checkpoints(c)}};
  return j;
}

std::vector<double> report_checkpoints(const RunConfig& c) {
  if (!c.report_checkpoints.empty()) return c.report_checkpoints;
  if (!c.plans.empty()) return c.plans.front().effective_checkpoints();
  return {25000, 50000, 75000, 100000};
}

std::vector<fs::path> cmd_gen_instances(envs::Family family, std::size_t n, std::uint64_t seed,
                                        const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw harness::HarnessError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto inst = harness::target_instance(family, seed, i);
    char name[64];
    std::snprintf(name, sizeof name, "instance_%03zu.json", i);
    const auto path = out_dir / name;
    harness::write_text_atomic(path, envs::instance_to_json(inst).dump(2) + "\n");
    out.push_back(path);
  }
  return out;
}

harness::SourcePool cmd_train_pool(const RunConfig& c, const fs::path& out_dir,
                                   std::size_t workers) {
  fs::create_directories(out_dir);
  echo_config(c, out_dir);
  return harness::build_source_pool(c.pool, out_dir, workers, [](const harness::PoolEntry& e) {
    std::cerr << "source " << e.id << (e.failed ? " FAILED: " + e.error : "")
              << " final reward " << e.final_reward << "\n";
  });
}

std::vector<harness::LedgerRecord> cmd_run(const RunConfig& c, const fs::path& out_dir,
                                           std::size_t workers) {
  if (c.plans.empty()) throw UsageError("config: no plans to run");
  fs::create_directories(out_dir);
  echo_config(c, out_dir);
  const auto pool = maybe_pool(c);
  harness::RunLedger ledger(out_dir / "ledger.jsonl");
  std::vector<harness::LedgerRecord> all;
  for (const auto& plan : c.plans) {
    harness::RunPlanOptions opt;
    opt.workers = workers;
    opt.on_record = [](const harness::LedgerRecord& r) {
      std::cerr << "run " << r.label << " instance " << r.instance_id << " set " << r.source_set
                << " seed " << r.seed << ": " << r.status << "\n";
    };
    auto recs = harness::run_plan(plan, pool ? &*pool : nullptr, ledger, opt);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return all;
}

std::string cmd_report(const RunConfig& c, const fs::path& out_dir) {
  harness::RunLedger ledger(out_dir / "ledger.jsonl");
  const auto records = ledger.records();
  if (records.empty()) throw harness::HarnessError("no runs in ledger " + ledger.path().string());
  const auto rows =
      harness::results_table(ledger, records, report_checkpoints(c), c.n_boot, c.report_seed);
  const std::string csv = harness::results_csv(rows);
  harness::write_text_atomic(out_dir / "results.csv", csv);

  std::ostringstream sup;
  bool any = false;
  sup << "method,run,source_id,final_mean_abs_theta\n";
  for (const auto& r : records) {
    if (r.status != "ok" || r.theta_log_path.empty()) continue;
    const auto log = harness::load_theta(ledger, r);
    std::vector<num::ValueGrid> thetas;
    for (const auto& s : log) thetas.push_back(s.theta);
    const auto stats = harness::suppression_stats(thetas);
    for (std::size_t k = 0; k < stats.size(); ++k) {
      sup << r.label << ",i" << r.instance_id << "-set" << r.source_set << "-s" << r.seed << ','
          << (k < r.source_ids.size() ? r.source_ids[k] : std::to_string(k)) << ','
          << stats[k].back() << '\n';
      any = true;
    }
  }
  if (any) harness::write_text_atomic(out_dir / "suppression.csv", sup.str());
  return csv;
}

std::vector<fs::path> cmd_plot(const RunConfig& c, const fs::path& out_dir) {
  harness::RunLedger ledger(out_dir / "ledger.jsonl");
  std::vector<harness::LedgerRecord> records;
  for (auto& r : ledger.records()) {
    if (r.status == "ok") records.push_back(std::move(r));
  }
  if (records.empty()) throw harness::HarnessError("no runs in ledger " + ledger.path().string());

  std::map<std::string, std::vector<std::vector<ppo::EpisodeRecord>>> by_label;
  double max_x = 0.0;
  for (const auto& r : records) {
    auto log = harness::load_episodes(ledger, r);
    if (!log.empty()) max_x = std::max(max_x, static_cast<double>(log.back().samples));
    by_label[r.label].push_back(std::move(log));
  }
  std::vector<double> grid;
  for (int i = 1; i <= 100; ++i) grid.push_back(max_x * i / 100.0);
  Panel curves{"Average learning curves (mean +/- 1 s.e.)", "samples", "episodic reward", {}};
  for (const auto& [label, runs] : by_label) curves.series.push_back(learning_curve(label, runs, grid));

  std::vector<fs::path> written;
  const fs::path dir = out_dir / "plots";
  harness::write_text_atomic(dir / "learning_curves.svg", render_line_panels({curves}));
  written.push_back(dir / "learning_curves.svg");

  std::map<std::string, bool> theta_done;
  for (const auto& r : records) {
    if (r.theta_log_path.empty() || theta_done[r.label]) continue;
    theta_done[r.label] = true;
    const auto log = harness::load_theta(ledger, r);
    std::vector<num::ValueGrid> thetas;
    std::vector<double> xs;
    for (const auto& s : log) {
      thetas.push_back(s.theta);
      xs.push_back(static_cast<double>(s.samples));
    }
    const auto stats = harness::suppression_stats(thetas);
    Panel p{"theta_agg trajectories: " + r.label + " (instance " + std::to_string(r.instance_id) +
                ", seed " + std::to_string(r.seed) + ")",
            "samples", "mean |theta_agg| per source", {}};
    for (std::size_t k = 0; k < stats.size(); ++k) {
      std::string name = k < r.source_ids.size() ? r.source_ids[k] : "source " + std::to_string(k);
      p.series.push_back({name, xs, stats[k], {}});
    }
    const auto path = dir / ("theta_" + r.label + ".svg");
    harness::write_text_atomic(path, render_line_panels({p}));
    written.push_back(path);
  }

  if (!c.pool_dir.empty() && fs::exists(fs::path(c.pool_dir) / "pool.json")) {
    const auto pool = harness::load_pool(c.pool_dir);
    std::vector<double> rewards;
    for (auto i : pool.usable()) rewards.push_back(pool.entries[i].final_reward);
    if (!rewards.empty()) {
      const auto path = dir / "source_pool_histogram.svg";
      harness::write_text_atomic(
          path, render_histogram("Source policy performance (" +
                                     std::string(envs::family_name(pool.family)) + ")",
                                 rewards, 10));
      written.push_back(path);
    }
  }
  return written;
}

int run_cli(int argc, char** argv) {
  num::tune_allocator();
  CLI::App app{"mpolar: transfer RL with adaptive aggregation of source policies"};
  app.require_subcommand(1);
  std::string config_path, out_dir, family_name = "CartPole";
  std::size_t workers = 1, n = 10;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", config_path, "JSON run configuration");
    if (need_config) opt->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--workers", workers, "parallel training runs")->check(CLI::PositiveNumber);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed = s; seed_given = true; }, "seed override");
  };
  auto* gen = app.add_subcommand("gen-instances", "sample environment instances to JSON files");
  add_common(gen, false);
  gen->add_option("--family", family_name, "CartPole | Acrobot | PendulumSwingUp");
  gen->add_option("--n", n, "number of instances");
  auto* pool = app.add_subcommand("train-pool", "train the source-policy pool");
  add_common(pool, true);
  auto* run = app.add_subcommand("run", "execute the experiment plans");
  add_common(run, true);
  auto* report = app.add_subcommand("report", "bootstrap results table from a run ledger");
  add_common(report, false);
  auto* plot = app.add_subcommand("plot", "SVG learning curves, pool histogram, theta trajectories");
  add_common(plot, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (gen->parsed()) {
      const auto fam = envs::parse_family(family_name);
      for (const auto& p : cmd_gen_instances(fam, n, seed, out_dir)) std::cout << p.string() << "\n";
      return 0;
    }
    if (pool->parsed()) {
      if (seed_given) cfg.pool.master_seed = seed;
      const auto built = cmd_train_pool(cfg, out_dir, workers);
      std::cout << "pool: " << built.usable().size() << " of " << built.entries.size()
                << " sources usable\n";
      return 0;
    }
    if (run->parsed()) {
      if (seed_given) {
        for (auto& p : cfg.plans) p.instance_seed = seed;
      }
      const auto recs = cmd_run(cfg, out_dir, workers);
      std::size_t failed = 0;
      for (const auto& r : recs) failed += r.status != "ok";
      std::cout << recs.size() << " runs in ledger, " << failed << " failed\n";
      return 0;
    }
    if (config_path.empty() && fs::exists(config_echo_path(out_dir))) {
      cfg = load_run_config(config_echo_path(out_dir));
    }
    if (seed_given) cfg.report_seed = seed;
    if (report->parsed()) {
      std::cout << cmd_report(cfg, out_dir);
      return 0;
    }
    for (const auto& p : cmd_plot(cfg, out_dir)) std::cout << p.string() << "\n";
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const envs::EnvError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mpolar::cli
