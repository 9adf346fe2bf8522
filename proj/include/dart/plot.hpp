#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dart/error.hpp"
#include "dart/harness.hpp"
#include "dart/trace.hpp"

// Static SVG renderings: alignment trajectories (generation traces and
// detector trajectories) and layer-sweep heatmaps. Output depends only on
// the input data.

namespace dart::plot {

struct Series {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;
  bool dashed = false;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<double> markers;  // vertical lines at these x positions
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render(const Chart& chart) {
  constexpr double W = 900, H = 420, left = 70, right = 170, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::max(), x1 = std::numeric_limits<double>::lowest();
  double y0 = x0, y1 = x1;
  for (const auto& s : chart.series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"420\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + detail::escape(chart.title) + "</text>\n";
  s += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(top) + "\" width=\"" + detail::num(W - left - right) +
       "\" height=\"" + detail::num(H - top - bottom) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double xv = x0 + (x1 - x0) * i / 4.0;
    s += "<text x=\"" + detail::num(left - 6) + "\" y=\"" + detail::num(py(yv) + 4) + "\" text-anchor=\"end\">" + detail::num(yv) + "</text>\n";
    s += "<text x=\"" + detail::num(px(xv)) + "\" y=\"" + detail::num(H - bottom + 16) + "\" text-anchor=\"middle\">" + detail::num(xv) + "</text>\n";
  }
  s += "<text x=\"" + detail::num((left + W - right) / 2) + "\" y=\"" + detail::num(H - 10) + "\" text-anchor=\"middle\">" + detail::escape(chart.x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + detail::num(H / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " + detail::num(H / 2) + ")\">" + detail::escape(chart.y_label) + "</text>\n";
  for (double m : chart.markers)
    s += "<line x1=\"" + detail::num(px(m)) + "\" y1=\"" + detail::num(top) + "\" x2=\"" + detail::num(px(m)) + "\" y2=\"" +
         detail::num(H - bottom) + "\" stroke=\"#d62728\" stroke-width=\"1\" stroke-dasharray=\"2,3\"/>\n";
  double legend_y = top + 10;
  for (const auto& ser : chart.series) {
    if (ser.points.empty()) continue;
    std::string path;
    for (std::size_t i = 0; i < ser.points.size(); ++i)
      path += (i ? " L" : "M") + detail::num(px(ser.points[i].first)) + "," + detail::num(py(ser.points[i].second));
    s += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"1.5\"" +
         (ser.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    s += "<line x1=\"" + detail::num(W - right + 10) + "\" y1=\"" + detail::num(legend_y) + "\" x2=\"" + detail::num(W - right + 30) +
         "\" y2=\"" + detail::num(legend_y) + "\" stroke=\"" + ser.color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + detail::num(W - right + 35) + "\" y=\"" + detail::num(legend_y + 4) + "\">" + detail::escape(ser.label) + "</text>\n";
    legend_y += 18;
  }
  s += "</svg>\n";
  return s;
}

/// Alignment trajectory of a generation trace, with the trigger threshold
/// mu - delta*sigma and reprune events marked.
inline Chart trajectory_from_trace(const std::vector<ojson>& records) {
  const RunConfig cfg = config_from_trace(records);
  Chart c;
  c.title = "Attention-centroid alignment";
  c.x_label = "token position";
  c.y_label = "cosine to reference centroid";
  Series align{"alignment", "#1f77b4", {}, false};
  Series mu{"reference mean", "#2ca02c", {}, true};
  Series thr{"trigger threshold", "#ff7f0e", {}, true};
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    try {
      if (r.at("type") != "token") continue;
      const double pos = r.at("pos").get<double>();
      if (!r.at("alignment").is_null()) {
        const double m = r.at("mu").get<double>(), sd = r.at("sigma").get<double>();
        align.points.emplace_back(pos, r["alignment"].get<double>());
        mu.points.emplace_back(pos, m);
        thr.points.emplace_back(pos, m - cfg.drift.delta * sd);
      }
      if (r.at("event").get<bool>()) c.markers.push_back(pos);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace:" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  c.series = {align, mu, thr};
  return c;
}

/// Window alignments of the first `max_runs` detector-bench runs, each with
/// its own trigger threshold; the regime switch (if any) is marked.
inline Chart trajectory_from_detect(const DetectTrajectory& t, std::size_t max_runs = 4) {
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd"};
  Chart c;
  c.title = "Detector window alignment";
  c.x_label = "stream token";
  c.y_label = "cosine to reference centroid";
  const std::size_t runs = std::min(max_runs, t.runs);
  for (std::size_t r = 0; r < runs; ++r) {
    Series a{"run " + std::to_string(r), kColors[r % 4], {}, false};
    Series thr{"run " + std::to_string(r) + " threshold", kColors[r % 4], {}, true};
    const DetectReference* ref = nullptr;
    for (const auto& x : t.references)
      if (x.run == r) ref = &x;
    for (const auto& w : t.windows)
      if (w.run == r) {
        a.points.emplace_back(static_cast<double>(w.end), w.alignment);
        if (ref) thr.points.emplace_back(static_cast<double>(w.end), ref->mu - t.delta * ref->sigma);
      }
    c.series.push_back(std::move(a));
    c.series.push_back(std::move(thr));
  }
  if (t.switch_at >= 0) c.markers.push_back(static_cast<double>(t.switch_at));
  return c;
}

/// Active mask density per layer over a generation trace.
inline Chart density_from_trace(const std::vector<ojson>& records) {
  Chart c;
  c.title = "Active FFN mask density";
  c.x_label = "token position";
  c.y_label = "kept fraction";
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    try {
      if (r.at("type") != "token") continue;
      const auto dens = r.at("density").get<std::vector<double>>();
      if (c.series.size() < dens.size())
        for (std::size_t l = c.series.size(); l < dens.size(); ++l)
          c.series.push_back({"layer " + std::to_string(l), kColors[l % 8], {}, false});
      for (std::size_t l = 0; l < dens.size(); ++l) c.series[l].points.emplace_back(r.at("pos").get<double>(), dens[l]);
      if (r.at("event").get<bool>()) c.markers.push_back(r.at("pos").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace:" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return c;
}

/// Heatmap of per-layer sweep metrics (rows = layers). Each column is
/// normalized to its own maximum.
inline std::string sweep_heatmap(std::istream& csv) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  while (std::getline(csv, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size())
      throw FormatError("sweep csv:" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " columns");
    std::vector<double> vals;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw FormatError("sweep csv:" + std::to_string(lineno) + ": non-numeric cell '" + c + "'");
      }
    }
    rows.push_back(vals);
  }
  if (header.size() < 2) throw FormatError("sweep csv: missing header");
  // Columns 1..n-1 (skip the layer index and the constant eval_tokens column).
  std::vector<std::size_t> cols;
  for (std::size_t c = 1; c < header.size(); ++c)
    if (header[c] != "eval_tokens") cols.push_back(c);
  constexpr double cell_w = 120, cell_h = 26, left = 80, top = 60;
  const double W = left + cell_w * static_cast<double>(cols.size()) + 20;
  const double H = top + cell_h * static_cast<double>(rows.size()) + 20;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) + "\" height=\"" + detail::num(H) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Single-layer pruning sweep</text>\n";
  for (std::size_t ci = 0; ci < cols.size(); ++ci) {
    const std::size_t c = cols[ci];
    double hi = 0.0;
    for (const auto& r : rows) hi = std::max(hi, std::abs(r[c]));
    s += "<text x=\"" + detail::num(left + cell_w * (ci + 0.5)) + "\" y=\"" + detail::num(top - 8) +
         "\" text-anchor=\"middle\">" + detail::escape(header[c]) + "</text>\n";
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
      const double v = hi > 0.0 ? std::abs(rows[ri][c]) / hi : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      char color[16];
      std::snprintf(color, sizeof color, "#ff%02x%02x", shade, shade);
      s += "<rect x=\"" + detail::num(left + cell_w * ci) + "\" y=\"" + detail::num(top + cell_h * ri) + "\" width=\"" +
           detail::num(cell_w) + "\" height=\"" + detail::num(cell_h) + "\" fill=\"" + color + "\" stroke=\"#888\"/>\n";
      char text[32];
      std::snprintf(text, sizeof text, "%.4g", rows[ri][c]);
      s += "<text x=\"" + detail::num(left + cell_w * (ci + 0.5)) + "\" y=\"" + detail::num(top + cell_h * ri + 17) +
           "\" text-anchor=\"middle\">" + text + "</text>\n";
    }
  }
  for (std::size_t ri = 0; ri < rows.size(); ++ri)
    s += "<text x=\"" + detail::num(left - 8) + "\" y=\"" + detail::num(top + cell_h * ri + 17) + "\" text-anchor=\"end\">layer " +
         std::to_string(static_cast<long long>(rows[ri][0])) + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace dart::plot
