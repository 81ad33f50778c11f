#include "multipath/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace multipath {

double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return 100.0 * inter / uni;
}

Box foveal_expand(const Box& b, double factor) {
  if (factor < 1.0) {
    throw std::invalid_argument("foveal_expand: factor must be >= 1");
  }
  const double hw = 0.5 * factor * b.width();
  const double hh = 0.5 * factor * b.height();
  return Box{b.cx() - hw, b.cy() - hh, b.cx() + hw, b.cy() + hh};
}

RegressionTarget encode_bbox(const Box& proposal, const Box& gt) {
  RegressionTarget t;
  t.tx = (gt.cx() - proposal.cx()) / proposal.width();
  t.ty = (gt.cy() - proposal.cy()) / proposal.height();
  t.tw = std::log(gt.width() / proposal.width());
  t.th = std::log(gt.height() / proposal.height());
  return t;
}

Box decode_bbox(const Box& proposal, const RegressionTarget& t) {
  const double cx = proposal.cx() + t.tx * proposal.width();
  const double cy = proposal.cy() + t.ty * proposal.height();
  const double w = std::exp(t.tw) * proposal.width();
  const double h = std::exp(t.th) * proposal.height();
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box hflip_box(const Box& b, double image_width) {
  return Box{image_width - b.x2, b.y1, image_width - b.x1, b.y2};
}

std::optional<Box> clip_box(const Box& b, double width, double height) {
  Box c{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
        std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
  if (!c.valid()) return std::nullopt;
  return c;
}

}  // namespace multipath
