#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lossforge/error.hpp"

namespace lossforge::plot {

namespace fs = std::filesystem;

/// Columns of a loss CSV; blank cells are nullopt.
struct LossTable {
  std::vector<std::string> columns;
  std::vector<long long> iter;
  std::map<std::string, std::vector<std::optional<double>>> values;

  std::size_t rows() const { return iter.size(); }
  bool has_data(const std::string& col) const {
    auto it = values.find(col);
    if (it == values.end()) return false;
    for (const auto& v : it->second)
      if (v) return true;
    return false;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline LossTable read_loss_csv(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + path.string());
  LossTable t;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::MalformedCsv, path.string() + " is empty");
  t.columns = split_csv_line(line);
  require(!t.columns.empty() && t.columns[0] == "iter", Errc::MalformedCsv,
          path.string() + ": header must start with 'iter'");
  for (std::size_t c = 1; c < t.columns.size(); ++c) t.values[t.columns[c]];
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(cells.size() == t.columns.size(), Errc::MalformedCsv,
            where + ": " + std::to_string(cells.size()) + " fields, header has " + std::to_string(t.columns.size()));
    try {
      std::size_t used = 0;
      t.iter.push_back(std::stoll(cells[0], &used));
      require(used == cells[0].size(), Errc::MalformedCsv, where + ": bad iteration '" + cells[0] + "'");
      for (std::size_t c = 1; c < cells.size(); ++c) {
        if (cells[c].empty()) {
          t.values[t.columns[c]].push_back(std::nullopt);
          continue;
        }
        const double v = std::stod(cells[c], &used);
        require(used == cells[c].size(), Errc::MalformedCsv, where + ": bad number '" + cells[c] + "'");
        t.values[t.columns[c]].push_back(v);
      }
    } catch (const std::logic_error&) {
      throw Error(Errc::MalformedCsv, where + ": unparsable field");
    }
  }
  require(t.rows() > 0, Errc::MalformedCsv, path.string() + " has no data rows");
  return t;
}

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
};

namespace detail {

inline Series column_series(const LossTable& t, const std::string& col, const std::string& label) {
  Series s{label, {}, {}};
  const auto& v = t.values.at(col);
  for (std::size_t i = 0; i < t.rows(); ++i)
    if (v[i] && std::isfinite(*v[i])) {
      s.x.push_back(static_cast<double>(t.iter[i]));
      s.y.push_back(*v[i]);
    }
  return s;
}

/// Mean of the given columns at rows where all are present.
inline Series mean_series(const LossTable& t, const std::vector<std::string>& cols, const std::string& label) {
  Series s{label, {}, {}};
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double sum = 0.0;
    bool ok = true;
    for (const auto& c : cols) {
      const auto& v = t.values.at(c)[i];
      ok = ok && v && std::isfinite(*v);
      if (ok) sum += *v;
    }
    if (!ok) continue;
    s.x.push_back(static_cast<double>(t.iter[i]));
    s.y.push_back(sum / cols.size());
  }
  return s;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline const cv::Scalar kColors[] = {{180, 90, 30}, {40, 130, 230}, {60, 160, 60}, {40, 40, 200}, {150, 80, 150}};

inline void draw_panel(cv::Mat& canvas, const cv::Rect& r, const Panel& p) {
  const int left = 62, right = 12, top = 28, bottom = 26;
  const cv::Rect plot(r.x + left, r.y + top, r.width - left - right, r.height - top - bottom);
  cv::rectangle(canvas, plot, {0, 0, 0}, 1);
  cv::putText(canvas, p.title, {r.x + left, r.y + 19}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0}, 1, cv::LINE_AA);

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x0 <= x1)) return;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + (y0 == 0 ? 1 : std::abs(y0) * 0.1);
  const auto px = [&](double x) { return plot.x + static_cast<int>(std::lround((x - x0) / (x1 - x0) * plot.width)); };
  const auto py = [&](double y) {
    return plot.y + plot.height - static_cast<int>(std::lround((y - y0) / (y1 - y0) * plot.height));
  };
  const auto small = [&](const std::string& s, cv::Point at) {
    cv::putText(canvas, s, at, cv::FONT_HERSHEY_SIMPLEX, 0.38, {60, 60, 60}, 1, cv::LINE_AA);
  };
  small(tick(y1), {r.x + 4, plot.y + 10});
  small(tick(y0), {r.x + 4, plot.y + plot.height});
  small(tick(x0), {plot.x, plot.y + plot.height + 16});
  small(tick(x1), {plot.x + plot.width - 40, plot.y + plot.height + 16});

  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const auto& s = p.series[k];
    const cv::Scalar col = kColors[k % std::size(kColors)];
    // break the line where a phase left the term unlogged
    double step = INFINITY;
    for (std::size_t i = 1; i < s.x.size(); ++i)
      if (s.x[i] > s.x[i - 1]) step = std::min(step, s.x[i] - s.x[i - 1]);
    std::vector<cv::Point> pts;
    const auto flush = [&] {
      if (pts.size() == 1) cv::circle(canvas, pts[0], 2, col, cv::FILLED);
      if (pts.size() > 1) cv::polylines(canvas, pts, false, col, 1, cv::LINE_AA);
      pts.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i > 0 && s.x[i] - s.x[i - 1] > 1.5 * step) flush();
      pts.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    flush();
    if (p.series.size() > 1)
      cv::putText(canvas, s.label, {plot.x + plot.width - 60, plot.y + 14 + 14 * static_cast<int>(k)},
                  cv::FONT_HERSHEY_SIMPLEX, 0.4, col, 1, cv::LINE_AA);
  }
}

}  // namespace detail

/// One panel per loss term that has data: L_FC, L_G, L_P, L_C (per layer),
/// L_R (per layer, averaged over directions) and adv.
inline std::vector<Panel> build_panels(const LossTable& t) {
  std::vector<Panel> panels;
  auto single = [&](const std::string& col, const std::string& title) {
    if (t.has_data(col)) panels.push_back({title, {detail::column_series(t, col, col)}});
  };
  single("L_FC", "L_FC");
  single("L_G", "L_G");
  single("L_P", "L_P");

  Panel lc{"L_C", {}};
  Panel lr{"L_R", {}};
  for (int j = 1;; ++j) {
    const std::string c = "L_C" + std::to_string(j);
    if (!t.values.count(c)) break;
    if (t.has_data(c)) lc.series.push_back(detail::column_series(t, c, "j=" + std::to_string(j)));
    std::vector<std::string> rel;
    for (const auto& name : t.columns)
      if (name.starts_with("L_R") && name.ends_with("_" + std::to_string(j)) && t.has_data(name)) rel.push_back(name);
    if (!rel.empty()) lr.series.push_back(detail::mean_series(t, rel, "j=" + std::to_string(j)));
  }
  if (!lc.series.empty()) panels.push_back(std::move(lc));
  if (!lr.series.empty()) panels.push_back(std::move(lr));
  single("adv", "L_Adv");
  return panels;
}

/// Renders the panels in a two-column grid; returns the panel titles.
inline std::vector<std::string> render_loss_plot(const fs::path& csv, const fs::path& out_png) {
  const LossTable t = read_loss_csv(csv);
  const auto panels = build_panels(t);
  require(!panels.empty(), Errc::MalformedCsv, csv.string() + " has no loss values to plot");
  const int pw = 460, ph = 280, cols = 2;
  const int rows = (static_cast<int>(panels.size()) + cols - 1) / cols;
  cv::Mat canvas(rows * ph, cols * pw, CV_8UC3, cv::Scalar(255, 255, 255));
  std::vector<std::string> titles;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    detail::draw_panel(canvas, {c * pw, r * ph, pw, ph}, panels[i]);
    titles.push_back(panels[i].title);
  }
  if (out_png.has_parent_path()) fs::create_directories(out_png.parent_path());
  require(cv::imwrite(out_png.string(), canvas), Errc::Io, "cannot write " + out_png.string());
  return titles;
}

}  // namespace lossforge::plot
