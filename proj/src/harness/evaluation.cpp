#include "mpolar/harness/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mpolar/numcore/rng.hpp"

namespace mpolar::harness {

double average_episodic_reward(std::span<const ppo::EpisodeRecord> log, double T) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : log) {
    if (static_cast<double>(e.samples) <= T) {
      sum += e.reward;
      ++n;
    }
  }
  if (n == 0) {
    throw HarnessError("average_episodic_reward: no episode finished within " +
                       std::to_string(T) + " samples");
  }
  return sum / static_cast<double>(n);
}

double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw HarnessError("percentile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

// n^n, saturating at limit + 1.
std::size_t power_capped(std::size_t n, std::size_t limit) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (r > limit / n) return limit + 1;
    r *= n;
  }
  return r;
}

}  // namespace

BootstrapSummary bootstrap_ci(std::span<const double> values, std::size_t n_boot,
                              std::uint64_t seed) {
  const std::size_t n = values.size();
  if (n < 2) throw HarnessError("bootstrap_ci: need at least 2 values");
  if (n_boot == 0) throw HarnessError("bootstrap_ci: n_boot must be positive");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(n);

  BootstrapSummary s;
  s.mean = m;
  s.n_runs = n;
  std::vector<double> means;
  const std::size_t total = power_capped(n, n_boot);
  if (total <= n_boot) {
    s.exhaustive = true;
    means.reserve(total);
    std::vector<std::size_t> idx(n, 0);
    for (std::size_t c = 0; c < total; ++c) {
      double acc = 0.0;
      for (std::size_t i : idx) acc += v[i];
      means.push_back(acc / static_cast<double>(n));
      for (std::size_t pos = 0; pos < n; ++pos) {
        if (++idx[pos] < n) break;
        idx[pos] = 0;
      }
    }
  } else {
    Rng rng(seed);
    means.reserve(n_boot);
    for (std::size_t b = 0; b < n_boot; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += v[rng.index(n)];
      means.push_back(acc / static_cast<double>(n));
    }
  }
  s.n_boot = means.size();
  std::sort(means.begin(), means.end());
  s.lower_95 = 2.0 * m - percentile_sorted(means, 97.5);
  s.upper_95 = 2.0 * m - percentile_sorted(means, 2.5);
  return s;
}

std::vector<std::vector<double>> suppression_stats(std::span<const num::ValueGrid> theta_log) {
  if (theta_log.empty()) return {};
  const std::size_t k = theta_log.front().rows();
  const std::size_t d = theta_log.front().cols();
  std::vector<std::vector<double>> out(k, std::vector<double>(theta_log.size(), 0.0));
  for (std::size_t t = 0; t < theta_log.size(); ++t) {
    const auto& th = theta_log[t];
    if (th.rows() != k || th.cols() != d) {
      throw HarnessError("suppression_stats: snapshot " + std::to_string(t) + " has shape " +
                         num::shape_string(th.shape()));
    }
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += std::abs(th.at(i, j));
      out[i][t] = acc / static_cast<double>(d);
    }
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw HarnessError("cannot write " + tmp);
    f << text;
    if (!f) throw HarnessError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string fmt_double(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& header) {
  std::ifstream f(path);
  if (!f) throw HarnessError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != header) {
    throw HarnessError(path.string() + ": expected header '" + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void write_episode_csv(const std::filesystem::path& path, const std::string& run_id,
                       std::span<const ppo::EpisodeRecord> log) {
  std::ostringstream out;
  out << "run_id,samples,episode_reward\n";
  for (const auto& e : log) out << run_id << ',' << e.samples << ',' << fmt_double(e.reward) << '\n';
  write_text_atomic(path, out.str());
}

std::vector<ppo::EpisodeRecord> read_episode_csv(const std::filesystem::path& path) {
  std::vector<ppo::EpisodeRecord> log;
  for (const auto& row : read_csv(path, "run_id,samples,episode_reward")) {
    if (row.size() != 3) throw HarnessError(path.string() + ": malformed row");
    ppo::EpisodeRecord e;
    e.samples = std::stoull(row[1]);
    e.reward = std::stod(row[2]);
    log.push_back(e);
  }
  return log;
}

void write_theta_csv(const std::filesystem::path& path, const std::string& run_id,
                     std::span<const ThetaSnapshot> log) {
  std::ostringstream out;
  out << "run_id,update,samples,source,dim,theta\n";
  for (const auto& snap : log) {
    for (std::size_t k = 0; k < snap.theta.rows(); ++k) {
      for (std::size_t d = 0; d < snap.theta.cols(); ++d) {
        out << run_id << ',' << snap.update << ',' << snap.samples << ',' << k << ',' << d << ','
            << fmt_double(snap.theta.at(k, d)) << '\n';
      }
    }
  }
  write_text_atomic(path, out.str());
}

std::vector<ThetaSnapshot> read_theta_csv(const std::filesystem::path& path) {
  struct Cell {
    std::size_t update, k, d;
    std::uint64_t samples;
    double v;
  };
  std::vector<Cell> cells;
  std::size_t kmax = 0, dmax = 0;
  for (const auto& row : read_csv(path, "run_id,update,samples,source,dim,theta")) {
    if (row.size() != 6) throw HarnessError(path.string() + ": malformed row");
    Cell c{std::stoull(row[1]), std::stoull(row[3]), std::stoull(row[4]), std::stoull(row[2]),
           std::stod(row[5])};
    kmax = std::max(kmax, c.k + 1);
    dmax = std::max(dmax, c.d + 1);
    cells.push_back(c);
  }
  std::vector<ThetaSnapshot> log;
  for (const auto& c : cells) {
    if (log.empty() || log.back().update != c.update) {
      log.push_back({c.update, c.samples, num::ValueGrid({kmax, dmax}, 0.0)});
    }
    log.back().theta.at(c.k, c.d) = c.v;
  }
  return log;
}

}  // namespace mpolar::harness
