#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "graphvalue/errors.hpp"

namespace graphvalue::plot {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;     // ascending
  std::vector<double> mean;  // one per x
  std::vector<double> lo;    // whisker bottom (min over repetitions)
  std::vector<double> hi;    // whisker top (max over repetitions)
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  double chance_level = -1.0;  // dashed reference line when in [0,1]
};

namespace detail {

// Fixed-precision coordinates so identical inputs render identical bytes.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

struct Scale {
  double d0, d1, r0, r1;
  double operator()(double v) const {
    if (d1 == d0) return (r0 + r1) / 2.0;
    return r0 + (v - d0) / (d1 - d0) * (r1 - r0);
  }
};

}  // namespace detail

// Accuracy-vs-x line chart with one sub-plot per panel, laid out left to
// right. The y axis is fixed to [0, 1].
inline std::string render_panels(const std::vector<Panel>& panels) {
  if (panels.empty()) throw ContractError("cannot render an empty panel list");
  const double panel_w = 420.0, panel_h = 330.0;
  const double ml = 56.0, mr = 18.0, mt = 40.0, mb = 48.0;
  const double width = panel_w * static_cast<double>(panels.size());
  const double height = panel_h;
  using detail::escape;
  using detail::num;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"" + num(width) + "\" height=\"" + num(height) + "\" fill=\"white\"/>\n";

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    double x0 = static_cast<double>(p) * panel_w + ml;
    double x1 = static_cast<double>(p + 1) * panel_w - mr;
    double y0 = height - mb;  // y axis grows upward in data space
    double y1 = mt;

    double dmin = 0.0, dmax = 1.0;
    bool have_x = false;
    for (const Series& s : panel.series)
      for (double v : s.x) {
        if (!have_x) {
          dmin = dmax = v;
          have_x = true;
        } else {
          dmin = std::min(dmin, v);
          dmax = std::max(dmax, v);
        }
      }
    detail::Scale sx{dmin, dmax, x0, x1};
    detail::Scale sy{0.0, 1.0, y0, y1};

    svg += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(mt - 16) +
           "\" text-anchor=\"middle\" font-size=\"15\" font-weight=\"bold\">" + escape(panel.title) + "</text>\n";

    // frame and y grid
    for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      double y = sy(tick);
      svg += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y) +
             "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
      svg += "<text x=\"" + num(x0 - 8) + "\" y=\"" + num(y + 4) +
             "\" text-anchor=\"end\" font-size=\"11\">" + num(tick) + "</text>\n";
    }
    svg += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";

    // x ticks at every distinct data x
    std::vector<double> ticks;
    for (const Series& s : panel.series)
      for (double v : s.x)
        if (std::find(ticks.begin(), ticks.end(), v) == ticks.end()) ticks.push_back(v);
    std::sort(ticks.begin(), ticks.end());
    for (double tick : ticks) {
      double x = sx(tick);
      svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x) + "\" y2=\"" + num(y0 + 4) +
             "\" stroke=\"black\" stroke-width=\"1\"/>\n";
      char label[32];
      std::snprintf(label, sizeof(label), "%g", tick);
      svg += "<text x=\"" + num(x) + "\" y=\"" + num(y0 + 18) + "\" text-anchor=\"middle\" font-size=\"11\">" +
             label + "</text>\n";
    }
    svg += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(y0 + 36) +
           "\" text-anchor=\"middle\" font-size=\"12\">" + escape(panel.x_label) + "</text>\n";
    svg += "<text x=\"" + num(x0 - 40) + "\" y=\"" + num((y0 + y1) / 2) +
           "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 " + num(x0 - 40) + " " +
           num((y0 + y1) / 2) + ")\">" + escape(panel.y_label) + "</text>\n";

    if (panel.chance_level >= 0.0 && panel.chance_level <= 1.0) {
      double y = sy(panel.chance_level);
      svg += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y) +
             "\" stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n";
      svg += "<text x=\"" + num(x1 - 2) + "\" y=\"" + num(y - 4) +
             "\" text-anchor=\"end\" font-size=\"10\" fill=\"#888888\">chance</text>\n";
    }

    for (const Series& s : panel.series) {
      if (s.x.size() != s.mean.size() || s.x.size() != s.lo.size() || s.x.size() != s.hi.size())
        throw ContractError("series '" + s.label + "' has mismatched point counts");
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        double x = sx(s.x[i]);
        svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(sy(s.lo[i])) + "\" x2=\"" + num(x) + "\" y2=\"" +
               num(sy(s.hi[i])) + "\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" opacity=\"0.6\"/>\n";
      }
      if (!s.x.empty()) {
        std::string points;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (i) points += ' ';
          points += num(sx(s.x[i])) + "," + num(sy(s.mean[i]));
        }
        svg += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + s.color +
               "\" stroke-width=\"2\"/>\n";
      }
      for (std::size_t i = 0; i < s.x.size(); ++i)
        svg += "<circle cx=\"" + num(sx(s.x[i])) + "\" cy=\"" + num(sy(s.mean[i])) + "\" r=\"3.5\" fill=\"" +
               s.color + "\"/>\n";
    }

    // legend, top-left inside the frame
    double lx = x0 + 10, ly = y1 + 6;
    for (const Series& s : panel.series) {
      svg += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly + 5) + "\" x2=\"" + num(lx + 22) + "\" y2=\"" +
             num(ly + 5) + "\" stroke=\"" + s.color + "\" stroke-width=\"2\"/>\n";
      svg += "<text x=\"" + num(lx + 28) + "\" y=\"" + num(ly + 9) + "\" font-size=\"12\">" + escape(s.label) +
             "</text>\n";
      ly += 16;
    }
  }

  svg += "</svg>\n";
  return svg;
}

inline void save_svg(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write svg file '" + path + "'");
  out << content;
  if (!out) throw ContractError("failed writing svg file '" + path + "'");
}

}  // namespace graphvalue::plot
