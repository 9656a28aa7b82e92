#include "mpolar/cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mpolar::cli {

namespace {

constexpr double kPanelW = 520;
constexpr double kPanelH = 360;
constexpr double kMarginL = 70;
constexpr double kMarginR = 20;
constexpr double kMarginT = 40;
constexpr double kMarginB = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) {
      lo = 0;
      hi = 1;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

std::string num(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << v;
  return s.str();
}

std::string tick(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

void axes(std::ostringstream& out, double ox, const Range& xr, const Range& yr,
          const std::string& title, const std::string& xl, const std::string& yl) {
  const double x0 = ox + kMarginL, x1 = ox + kPanelW - kMarginR;
  const double y0 = kPanelH - kMarginB, y1 = kMarginT;
  out << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-size=\"15\">" << xml_escape(title) << "</text>\n";
  out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\""
      << num(y0) << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0) << "\" y2=\""
      << num(y1) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double px = x0 + (x1 - x0) * i / 4.0;
    out << "<text x=\"" << num(px) << "\" y=\"" << num(y0 + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick(fx) << "</text>\n";
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double py = y0 + (y1 - y0) * i / 4.0;
    out << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << tick(fy) << "</text>\n";
  }
  out << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kPanelH - 12)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(xl) << "</text>\n";
  out << "<text x=\"" << num(ox + 16) << "\" y=\"" << num((y0 + y1) / 2)
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 " << num(ox + 16)
      << " " << num((y0 + y1) / 2) << ")\">" << xml_escape(yl) << "</text>\n";
}

}  // namespace

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_line_panels(const std::vector<Panel>& panels) {
  std::ostringstream out;
  const double width = kPanelW * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
      << num(kPanelH) << "\" viewBox=\"0 0 " << num(width) << " " << num(kPanelH) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double ox = kPanelW * static_cast<double>(p);
    Range xr, yr;
    for (const auto& s : panel.series) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        xr.add(s.x[i]);
        const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
        yr.add(s.y[i] - e);
        yr.add(s.y[i] + e);
      }
    }
    xr.finish();
    yr.finish();
    const double x0 = ox + kMarginL, x1 = ox + kPanelW - kMarginR;
    const double y0 = kPanelH - kMarginB, y1 = kMarginT;
    auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
    auto py = [&](double v) { return y0 + (v - yr.lo) / (yr.hi - yr.lo) * (y1 - y0); };

    out << "<g class=\"panel\" data-title=\"" << xml_escape(panel.title) << "\">\n";
    axes(out, ox, xr, yr, panel.title, panel.x_label, panel.y_label);
    for (std::size_t si = 0; si < panel.series.size(); ++si) {
      const Series& s = panel.series[si];
      const char* color = kPalette[si % std::size(kPalette)];
      if (!s.err.empty() && !s.x.empty()) {
        out << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" "
            << "stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
          out << num(px(s.x[i])) << "," << num(py(s.y[i] + s.err[i])) << " ";
        for (std::size_t i = s.x.size(); i-- > 0;)
          out << num(px(s.x[i])) << "," << num(py(s.y[i] - s.err[i])) << " ";
        out << "\"/>\n";
      }
      out << "<polyline class=\"series\" data-name=\"" << xml_escape(s.name) << "\" fill=\"none\" "
          << "stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) out << num(px(s.x[i])) << "," << num(py(s.y[i])) << " ";
      out << "\"/>\n";
      out << "<text x=\"" << num(x0 + 10) << "\" y=\"" << num(y1 + 14 + 15 * si)
          << "\" font-size=\"12\" fill=\"" << color << "\">" << xml_escape(s.name) << "</text>\n";
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string render_histogram(const std::string& title, const std::vector<double>& values,
                             std::size_t bins) {
  Range r;
  for (double v : values) r.add(v);
  r.finish();
  bins = std::max<std::size_t>(1, bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - r.lo) / (r.hi - r.lo) * static_cast<double>(bins));
    counts[std::min(b, bins - 1)]++;
  }
  const std::size_t cmax = std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end()));
  Range yr;
  yr.add(0);
  yr.add(static_cast<double>(cmax));
  yr.finish();

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kPanelW) << "\" height=\""
      << num(kPanelH) << "\" viewBox=\"0 0 " << num(kPanelW) << " " << num(kPanelH) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g class=\"panel\">\n";
  axes(out, 0, r, yr, title, "final episodic reward", "number of sources");
  const double x0 = kMarginL, x1 = kPanelW - kMarginR;
  const double y0 = kPanelH - kMarginB, y1 = kMarginT;
  const double bw = (x1 - x0) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double h = (y0 - y1) * static_cast<double>(counts[b]) / (yr.hi - yr.lo);
    out << "<rect class=\"bin\" x=\"" << num(x0 + bw * b) << "\" y=\"" << num(y0 - h)
        << "\" width=\"" << num(bw - 1) << "\" height=\"" << num(h)
        << "\" fill=\"#1f77b4\" data-count=\"" << counts[b] << "\"/>\n";
  }
  out << "</g>\n</svg>\n";
  return out.str();
}

Series learning_curve(const std::string& name,
                      const std::vector<std::vector<ppo::EpisodeRecord>>& runs,
                      const std::vector<double>& grid, std::size_t window) {
  std::vector<std::vector<double>> at(grid.size());
  for (const auto& log : runs) {
    if (log.empty()) continue;
    std::vector<double> xs, ys;
    double acc = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
      acc += log[i].reward;
      if (i >= window) acc -= log[i - window].reward;
      xs.push_back(static_cast<double>(log[i].samples));
      ys.push_back(acc / static_cast<double>(std::min(i + 1, window)));
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double x = grid[g];
      if (x > xs.back()) continue;
      if (x <= xs.front()) {
        at[g].push_back(ys.front());
        continue;
      }
      const auto it = std::lower_bound(xs.begin(), xs.end(), x);
      const std::size_t j = static_cast<std::size_t>(it - xs.begin());
      const double t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
      at[g].push_back(ys[j - 1] + t * (ys[j] - ys[j - 1]));
    }
  }
  Series s;
  s.name = name;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& v = at[g];
    if (v.empty()) continue;
    double m = 0.0;
    for (double y : v) m += y;
    m /= static_cast<double>(v.size());
    double se = 0.0;
    if (v.size() > 1) {
      double ss = 0.0;
      for (double y : v) ss += (y - m) * (y - m);
      se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    s.x.push_back(grid[g]);
    s.y.push_back(m);
    s.err.push_back(se);
  }
  return s;
}

}  // namespace mpolar::cli
