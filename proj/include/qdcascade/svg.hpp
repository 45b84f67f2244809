#pragma once

// Minimal SVG emitter for the 6x6 tomography grid: one panel per (P1, P2),
// P1 down the rows and P2 across the columns, each with a frame, a g2 = 1
// guide, the curve as a polyline and its label.

#include <algorithm>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"

namespace qdcascade {

struct SvgStyle {
  double panel_width = 160.0;
  double panel_height = 110.0;
  double margin = 24.0;
  double y_max = 0.0;  ///< 0: common scale from the largest sample
};

inline void write_tomography_svg(std::ostream& os, const std::vector<CorrelationCurve>& panels,
                                 const SvgStyle& style = {}) {
  if (panels.size() != 36) throw ShapeError("tomography SVG needs 36 panels");
  double ymax = style.y_max;
  if (ymax <= 0.0) {
    for (const auto& p : panels)
      for (double v : p.values) ymax = std::max(ymax, v);
    ymax *= 1.05;
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const double cell_w = style.panel_width + style.margin;
  const double cell_h = style.panel_height + style.margin;
  const double width = 6 * cell_w + style.margin;
  const double height = 6 * cell_h + style.margin;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_double(width) << "\" height=\""
     << format_double(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < 36; ++i) {
    const auto& c = panels[i];
    const double x0 = style.margin + static_cast<double>(i % 6) * cell_w;
    const double y0 = style.margin + static_cast<double>(i / 6) * cell_h;
    const double t0 = c.grid.tau_min(), t1 = c.grid.tau_max();
    auto px = [&](double tau) { return x0 + (tau - t0) / (t1 - t0) * style.panel_width; };
    auto py = [&](double g) { return y0 + style.panel_height * (1.0 - std::clamp(g / ymax, 0.0, 1.0)); };
    os << "<g>\n<rect x=\"" << format_double(x0) << "\" y=\"" << format_double(y0) << "\" width=\""
       << format_double(style.panel_width) << "\" height=\"" << format_double(style.panel_height)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << format_double(x0) << "\" y1=\"" << format_double(py(1.0)) << "\" x2=\""
       << format_double(x0 + style.panel_width) << "\" y2=\"" << format_double(py(1.0))
       << "\" stroke=\"gray\" stroke-dasharray=\"3,3\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
    for (std::size_t k = 0; k < c.values.size(); ++k) {
      if (k) os << ' ';
      os << format_double(px(c.grid.center(k))) << ',' << format_double(py(c.values[k]));
    }
    os << "\"/>\n";
    std::string label = "?";
    if (c.meta.p1 && c.meta.p2) label = pair_name(*c.meta.p1, *c.meta.p2);
    os << "<text x=\"" << format_double(x0 + 4) << "\" y=\"" << format_double(y0 + 13) << "\">" << label
       << "</text>\n</g>\n";
  }
  os << "<text x=\"" << format_double(style.margin) << "\" y=\"" << format_double(height - 6)
     << "\">tau from " << format_double(panels[0].grid.tau_min()) << " to "
     << format_double(panels[0].grid.tau_max()) << " ps; g2 from 0 to " << format_double(ymax) << "</text>\n";
  os << "</svg>\n";
}

inline void write_tomography_svg(const std::string& path, const std::vector<CorrelationCurve>& panels,
                                 const SvgStyle& style = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_tomography_svg(os, panels, style);
}

}  // namespace qdcascade
