#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcp::plot {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal static SVG line chart; results CSVs stay the source of truth and
// nothing downstream parses these images.
inline void write_svg(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  if (series.empty()) throw std::invalid_argument("write_svg: no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) throw std::invalid_argument("write_svg: no points");
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot: " + path);
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.0f\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">", w / 2);
  out << buf << title << "</text>\n";
  // axes
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                h - mb, w - mr, h - mb);
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                mt, ml, h - mb);
  out << buf;
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.3g</text>\n", sx(fx),
                  h - mb + 18, fx);
    out << buf;
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3g</text>\n",
                  ml - 6, sy(fy) + 4, fy);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "<text x=\"%.0f\" y=\"%.0f\" text-anchor=\"middle\">", w / 2,
                h - 12);
  out << buf << x_label << "</text>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%.0f\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.0f)\">",
                (mt + h - mb) / 2, (mt + h - mb) / 2);
  out << buf << y_label << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : series[si].points) {
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(x), sy(y));
      out << buf;
    }
    out << "\"/>\n";
    for (const auto& [x, y] : series[si].points) {
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n",
                    sx(x), sy(y), color);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" fill=\"%s\">", w - mr - 120.0,
                  mt + 16.0 * (si + 1), color);
    out << buf << series[si].name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace rcp::plot
