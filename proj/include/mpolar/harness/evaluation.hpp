#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpolar/numcore/value_grid.hpp"
#include "mpolar/ppo/rollout.hpp"

namespace mpolar::harness {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kAllSamples = std::numeric_limits<double>::infinity();

// Mean raw reward of the episodes finished within the first T samples.
// Throws HarnessError when no episode ends inside the window.
double average_episodic_reward(std::span<const ppo::EpisodeRecord> log, double T);

// numpy-style percentile with linear interpolation; sorted must be ascending.
double percentile_sorted(std::span<const double> sorted, double q);

struct BootstrapSummary {
  double mean = 0.0;
  double lower_95 = 0.0;
  double upper_95 = 0.0;
  std::size_t n_runs = 0;
  std::size_t n_boot = 0;
  bool exhaustive = false;
};

// Pivotal bootstrap of the mean: [2m - q97.5, 2m - q2.5] over resampled means.
// When n^n <= n_boot every ordered resample is enumerated instead of drawn.
// The input is sorted first, so the result does not depend on its order.
BootstrapSummary bootstrap_ci(std::span<const double> values, std::size_t n_boot,
                              std::uint64_t seed);

// Per source k, the mean over d of |theta[k, d]| at every snapshot: [K][T].
std::vector<std::vector<double>> suppression_stats(std::span<const num::ValueGrid> theta_log);

// Episode logs as CSV rows: run_id,samples,episode_reward.
void write_episode_csv(const std::filesystem::path& path, const std::string& run_id,
                       std::span<const ppo::EpisodeRecord> log);
std::vector<ppo::EpisodeRecord> read_episode_csv(const std::filesystem::path& path);

// theta snapshots as CSV rows: run_id,update,samples,source,dim,theta.
struct ThetaSnapshot {
  std::size_t update = 0;
  std::uint64_t samples = 0;
  num::ValueGrid theta;
};
void write_theta_csv(const std::filesystem::path& path, const std::string& run_id,
                     std::span<const ThetaSnapshot> log);
std::vector<ThetaSnapshot> read_theta_csv(const std::filesystem::path& path);

// Writes via a temporary file and rename so readers never see partial files.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace mpolar::harness
