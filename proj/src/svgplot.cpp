#include "multipath/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace multipath {

namespace {

const char* kPalette[6] = {"#1f77b4", "#d62728", "#2ca02c",
                           "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  double span() const { return hi - lo; }
};

Range padded(double lo, double hi) {
  if (lo == hi) return {lo - 1.0, hi + 1.0};
  const double pad = 0.04 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::string render_line_chart(const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<Series>& series, int width,
                              int height) {
  if (series.empty()) {
    throw std::invalid_argument("plot: no series to draw");
  }
  if (width < 160 || height < 120) {
    throw std::invalid_argument("plot: canvas too small");
  }
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool first = true;
  for (const auto& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) {
      throw std::invalid_argument("plot: series '" + s.name +
                                  "' needs matching nonempty x and y");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        throw std::invalid_argument("plot: series '" + s.name +
                                    "' has a non-finite value");
      }
      if (first) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        first = false;
      } else {
        x_min = std::min(x_min, s.x[i]);
        x_max = std::max(x_max, s.x[i]);
        y_min = std::min(y_min, s.y[i]);
        y_max = std::max(y_max, s.y[i]);
      }
    }
  }
  const Range xr = padded(x_min, x_max);
  const Range yr = padded(y_min, y_max);

  const double left = 62, right = width - 18, top = 42, bottom = height - 46;
  auto px = [&](double x) {
    return left + (x - xr.lo) / xr.span() * (right - left);
  };
  auto py = [&](double y) {
    return bottom - (y - yr.lo) / yr.span() * (bottom - top);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2
      << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
         "text-anchor=\"middle\">"
      << escape_xml(title) << "</text>\n";

  // Grid and tick labels: five evenly spaced ticks per axis.
  const int kTicks = 5;
  for (int i = 0; i < kTicks; ++i) {
    const double f = static_cast<double>(i) / (kTicks - 1);
    const double xv = xr.lo + f * xr.span();
    const double yv = yr.lo + f * yr.span();
    svg << "<line x1=\"" << fmt(px(xv)) << "\" y1=\"" << fmt(top) << "\" x2=\""
        << fmt(px(xv)) << "\" y2=\"" << fmt(bottom)
        << "\" stroke=\"#dddddd\"/>\n";
    svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(py(yv))
        << "\" x2=\"" << fmt(right) << "\" y2=\"" << fmt(py(yv))
        << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(bottom + 16)
        << "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"middle\">"
        << fmt(xv, "%g") << "</text>\n";
    svg << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(yv) + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"end\">"
        << fmt(yv, "%g") << "</text>\n";
  }

  // Axes.
  svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\""
      << fmt(left) << "\" y2=\"" << fmt(bottom) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(bottom) << "\" x2=\""
      << fmt(right) << "\" y2=\"" << fmt(bottom) << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << height - 10
      << "\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\">"
      << escape_xml(x_label) << "</text>\n";
  svg << "<text x=\"16\" y=\"" << (top + bottom) / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (top + bottom) / 2 << ")\">" << escape_xml(y_label) << "</text>\n";

  // Data polylines.
  for (std::size_t si = 0; si < series.size(); ++si) {
    svg << "<polyline fill=\"none\" stroke=\"" << kPalette[si % 6]
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[si].x.size(); ++i) {
      if (i) svg << ' ';
      svg << fmt(px(series[si].x[i])) << ',' << fmt(py(series[si].y[i]));
    }
    svg << "\"/>\n";
  }

  // Legend, top right.
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ly = top + 14 + 16 * static_cast<double>(si);
    svg << "<line x1=\"" << fmt(right - 110) << "\" y1=\"" << fmt(ly - 4)
        << "\" x2=\"" << fmt(right - 90) << "\" y2=\"" << fmt(ly - 4)
        << "\" stroke=\"" << kPalette[si % 6] << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(right - 84) << "\" y=\"" << fmt(ly)
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape_xml(series[si].name) << "</text>\n";
  }

  svg << "</svg>\n";
  return svg.str();
}

}  // namespace multipath
