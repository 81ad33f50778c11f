#pragma once

#include <string>
#include <vector>

namespace multipath {

// One polyline on a chart. x and y must have equal nonzero length and hold
// only finite values.
struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Renders a standalone SVG line chart (axes, gridlines, tick labels, legend).
// Output is a pure function of the inputs: fixed-precision coordinates, no
// timestamps, so golden-file comparisons are stable. Throws
// std::invalid_argument on empty input, length mismatches or non-finite
// values.
std::string render_line_chart(const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<Series>& series,
                              int width = 640, int height = 400);

}  // namespace multipath
