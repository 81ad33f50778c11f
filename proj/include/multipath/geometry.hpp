#pragma once

#include <optional>

namespace multipath {

// Axis-aligned box in continuous pixel coordinates. Valid boxes have
// x2 > x1 and y2 > y1; coordinates may be negative (foveal expansion is
// allowed to run off the image until clipping).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

// Box regression deltas: center offsets normalized by the proposal size and
// log-space size ratios.
struct RegressionTarget {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

// Intersection over union on the 0..100 scale.
double iou(const Box& a, const Box& b);

// Scale width and height by `factor` about the box center. The result is not
// clipped to any image. Throws std::invalid_argument when factor < 1.
Box foveal_expand(const Box& b, double factor);

RegressionTarget encode_bbox(const Box& proposal, const Box& gt);
Box decode_bbox(const Box& proposal, const RegressionTarget& t);

// Mirror about the vertical centerline of an image of the given width.
Box hflip_box(const Box& b, double image_width);

// Clamp to [0,width] x [0,height]. Returns nullopt when the box does not
// intersect the image; the caller drops such proposals.
std::optional<Box> clip_box(const Box& b, double width, double height);

}  // namespace multipath
