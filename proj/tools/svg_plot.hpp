#pragma once

// Standalone two-panel SVG of a training curve: instruction logps on the
// left, response-given-instruction logps on the right.

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "suri/iorpo_core.hpp"

namespace suri::plot {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> y;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string panel(double x0, double y0, double w, double h, const std::string& title,
                         const std::vector<double>& steps, const std::vector<Series>& series) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) lo = hi = 0.0;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double smin = steps.empty() ? 0.0 : steps.front();
  const double smax = steps.empty() ? 1.0 : std::max(steps.back(), smin + 1.0);
  auto px = [&](double s) { return x0 + (s - smin) / (smax - smin) * w; };
  auto py = [&](double v) { return y0 + h - (v - lo) / (hi - lo) * h; };

  std::string out;
  out += "<g>\n";
  out += "<text x=\"" + num(x0 + w / 2) + "\" y=\"" + num(y0 - 12) +
         "\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
  out += "<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    out += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py(v) + 4) +
           "\" text-anchor=\"end\" font-size=\"10\">" + tick(v) + "</text>\n";
    const double s = smin + (smax - smin) * i / 4.0;
    out += "<text x=\"" + num(px(s)) + "\" y=\"" + num(y0 + h + 14) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + tick(s) + "</text>\n";
  }
  out += "<text x=\"" + num(x0 + w / 2) + "\" y=\"" + num(y0 + h + 30) +
         "\" text-anchor=\"middle\" font-size=\"11\">step</text>\n";
  double ly = y0 + 14;
  for (const auto& s : series) {
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.y.size() && i < steps.size(); ++i) {
      if (i) out += ' ';
      out += num(px(steps[i])) + "," + num(py(s.y[i]));
    }
    out += "\"/>\n";
    out += "<text x=\"" + num(x0 + 8) + "\" y=\"" + num(ly) + "\" font-size=\"11\" fill=\"" + s.color + "\">" +
           escape(s.label) + "</text>\n";
    ly += 14;
  }
  out += "</g>\n";
  return out;
}

}  // namespace detail

inline std::string curve_svg(const std::vector<TrainingCurvePoint>& curve) {
  std::vector<double> steps;
  Series xw{"logps(x_w)", "#1f77b4", {}}, xl{"logps(x_l)", "#d62728", {}};
  Series yw{"logps(y|x_w)", "#1f77b4", {}}, yl{"logps(y|x_l)", "#d62728", {}};
  for (const auto& p : curve) {
    steps.push_back(static_cast<double>(p.step));
    xw.y.push_back(p.logps_xw);
    xl.y.push_back(p.logps_xl);
    yw.y.push_back(p.logps_y_xw);
    yl.y.push_back(p.logps_y_xl);
  }
  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"360\" viewBox=\"0 0 900 360\" "
      "font-family=\"sans-serif\">\n<rect width=\"900\" height=\"360\" fill=\"white\"/>\n";
  svg += detail::panel(70, 40, 360, 260, "instruction", steps, {xw, xl});
  svg += detail::panel(520, 40, 360, 260, "response given instruction", steps, {yw, yl});
  svg += "</svg>\n";
  return svg;
}

}  // namespace suri::plot
