#pragma once

#include <string>
#include <vector>

#include "mpolar/ppo/rollout.hpp"

namespace mpolar::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional half-width of a shaded band
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

// One row of panels; every series becomes exactly one <polyline>.
std::string render_line_panels(const std::vector<Panel>& panels);

// Histogram with equal-width bins over [min, max] of the values.
std::string render_histogram(const std::string& title, const std::vector<double>& values,
                             std::size_t bins);

// Mean and standard error across runs on a common sample grid. Each run's
// curve (mean reward of its last `window` episodes, at every episode end) is
// linearly interpolated onto the grid; grid points beyond a run's last episode
// are left out for that run.
Series learning_curve(const std::string& name,
                      const std::vector<std::vector<ppo::EpisodeRecord>>& runs,
                      const std::vector<double>& grid, std::size_t window = 10);

std::string xml_escape(const std::string& s);

}  // namespace mpolar::cli
