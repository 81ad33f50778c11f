#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "multipath/svgplot.hpp"

using namespace multipath;

namespace {

// Pixel coordinates of the first polyline in the document.
std::vector<std::pair<double, double>> polyline_points(const std::string& svg) {
  const std::string key = "<polyline";
  const auto start = svg.find(key);
  REQUIRE(start != std::string::npos);
  const auto pts = svg.find("points=\"", start);
  REQUIRE(pts != std::string::npos);
  const auto end = svg.find('"', pts + 8);
  std::string body = svg.substr(pts + 8, end - (pts + 8));
  std::vector<std::pair<double, double>> out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    double x = 0, y = 0;
    int consumed = 0;
    if (std::sscanf(body.c_str() + pos, "%lf,%lf%n", &x, &y, &consumed) != 2) {
      break;
    }
    out.emplace_back(x, y);
    pos += consumed;
    while (pos < body.size() && body[pos] == ' ') ++pos;
  }
  return out;
}

std::size_t count_substr(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos;
       p = hay.find(needle, p + 1)) {
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("chart structure: one polyline per series, escaped labels") {
  const Series a{"ap", {0, 1, 2}, {10, 20, 15}};
  const Series b{"ap50", {0, 1, 2}, {30, 35, 33}};
  const std::string svg =
      render_line_chart("A<B&C", "iters", "score", {a, b});
  CHECK(svg.rfind("<svg ", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(count_substr(svg, "<polyline") == 2);
  CHECK(svg.find("A&lt;B&amp;C") != std::string::npos);
  CHECK(svg.find("A<B&C") == std::string::npos);
  // legend entries
  CHECK(svg.find(">ap<") != std::string::npos);
  CHECK(svg.find(">ap50<") != std::string::npos);
}

TEST_CASE("monotone data renders a monotone polyline") {
  const Series s{"ap", {10, 50, 200, 400}, {21, 26.5, 29, 29.5}};
  const std::string svg = render_line_chart("t", "x", "y", {s});
  const auto pts = polyline_points(svg);
  REQUIRE(pts.size() == 4);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].first > pts[i - 1].first);
    // SVG y grows downward, so increasing data means decreasing pixel y.
    CHECK(pts[i].second < pts[i - 1].second);
  }
}

TEST_CASE("rendering is deterministic") {
  const Series s{"ap", {0, 1, 2, 3}, {1, 4, 2, 8}};
  CHECK(render_line_chart("t", "x", "y", {s}) ==
        render_line_chart("t", "x", "y", {s}));
}

TEST_CASE("constant series still renders (padded degenerate range)") {
  const Series s{"flat", {0, 1, 2}, {5, 5, 5}};
  const std::string svg = render_line_chart("t", "x", "y", {s});
  const auto pts = polyline_points(svg);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].second == pts[1].second);
}

TEST_CASE("bad input rejected") {
  CHECK_THROWS_AS(render_line_chart("t", "x", "y", {}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      render_line_chart("t", "x", "y", {Series{"s", {1, 2}, {1}}}),
      std::invalid_argument);
  CHECK_THROWS_AS(render_line_chart("t", "x", "y", {Series{"s", {}, {}}}),
                  std::invalid_argument);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(
      render_line_chart("t", "x", "y", {Series{"s", {1, 2}, {1, nan}}}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      render_line_chart("t", "x", "y", {Series{"s", {1}, {1}}}, 10, 10),
      std::invalid_argument);
}
