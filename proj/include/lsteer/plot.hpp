#pragma once

// Deterministic SVG rendering of an anomaly curve: one polyline path per
// series (raw, smoothed), shaded rectangles over ground-truth anomalous
// frame runs when labels are present, and a dashed threshold rule. Fixed
// numeric formatting and no timestamps, so identical inputs yield
// byte-identical files.

#include <string>

#include "lsteer/scorer.hpp"

namespace lsteer {

namespace detail {

inline void append_num(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  s += buf;
}

}  // namespace detail

inline std::string render_curve_svg(const CurveCsv& curve, const std::string& title,
                                    double tau) {
  if (curve.raw.empty()) throw usage_error("plot: empty curve");
  const double width = 960.0, height = 320.0;
  const double ml = 48.0, mr = 16.0, mt = 28.0, mb = 32.0;
  const double pw = width - ml - mr;
  const double ph = height - mt - mb;
  const std::size_t n = curve.raw.size();

  auto x_of = [&](std::size_t i) {
    return n == 1 ? ml + pw / 2.0
                  : ml + pw * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  auto y_of = [&](double v) { return mt + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::string svg;
  svg.reserve(1 << 16);
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"320\" "
         "viewBox=\"0 0 960 320\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"960\" height=\"320\" fill=\"#ffffff\"/>\n";

  // Shaded ground-truth runs.
  if (!curve.labels.empty()) {
    std::size_t i = 0;
    while (i < curve.labels.size()) {
      if (curve.labels[i] != 1) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + 1 < curve.labels.size() && curve.labels[j + 1] == 1) ++j;
      const double x0 = x_of(i), x1 = x_of(j);
      svg += "<rect class=\"truth\" x=\"";
      detail::append_num(svg, x0);
      svg += "\" y=\"";
      detail::append_num(svg, mt);
      svg += "\" width=\"";
      detail::append_num(svg, std::max(1.0, x1 - x0));
      svg += "\" height=\"";
      detail::append_num(svg, ph);
      svg += "\" fill=\"#fbd5d5\"/>\n";
      i = j + 1;
    }
  }

  // Frame + threshold rule.
  svg += "<rect x=\"";
  detail::append_num(svg, ml);
  svg += "\" y=\"";
  detail::append_num(svg, mt);
  svg += "\" width=\"";
  detail::append_num(svg, pw);
  svg += "\" height=\"";
  detail::append_num(svg, ph);
  svg += "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"";
  detail::append_num(svg, ml);
  svg += "\" y1=\"";
  detail::append_num(svg, y_of(tau));
  svg += "\" x2=\"";
  detail::append_num(svg, ml + pw);
  svg += "\" y2=\"";
  detail::append_num(svg, y_of(tau));
  svg += "\" stroke=\"#888888\" stroke-dasharray=\"4 3\" stroke-width=\"1\"/>\n";

  auto emit_path = [&](const std::vector<double>& series, const char* cls,
                       const char* color, const char* widthpx) {
    svg += "<path class=\"";
    svg += cls;
    svg += "\" fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"";
    svg += widthpx;
    svg += "\" d=\"";
    for (std::size_t i = 0; i < series.size(); ++i) {
      svg += i == 0 ? "M" : " L";
      detail::append_num(svg, x_of(i));
      svg += ",";
      detail::append_num(svg, y_of(series[i]));
    }
    svg += "\"/>\n";
  };
  emit_path(curve.raw, "raw", "#9ecae1", "1");
  emit_path(curve.smooth, "smooth", "#08519c", "2");

  svg += "<text x=\"";
  detail::append_num(svg, ml);
  svg += "\" y=\"18\" font-family=\"monospace\" font-size=\"13\">" + title + "</text>\n";
  svg += "<text x=\"8\" y=\"";
  detail::append_num(svg, y_of(1.0) + 4);
  svg += "\" font-family=\"monospace\" font-size=\"11\">1.0</text>\n";
  svg += "<text x=\"8\" y=\"";
  detail::append_num(svg, y_of(0.0) + 4);
  svg += "\" font-family=\"monospace\" font-size=\"11\">0.0</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace lsteer
