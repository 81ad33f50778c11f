#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "multipath/geometry.hpp"

using namespace multipath;

namespace {

// Brute-force IoU on the integer grid: counts unit cells covered by each
// integer-coordinate box. Independent oracle for the closed-form version.
double iou_rasterized(const Box& a, const Box& b) {
  const int lox = static_cast<int>(std::min(a.x1, b.x1));
  const int loy = static_cast<int>(std::min(a.y1, b.y1));
  const int hix = static_cast<int>(std::max(a.x2, b.x2));
  const int hiy = static_cast<int>(std::max(a.y2, b.y2));
  auto covers = [](const Box& bx, int x, int y) {
    return x >= bx.x1 && x + 1 <= bx.x2 && y >= bx.y1 && y + 1 <= bx.y2;
  };
  long inter = 0, uni = 0;
  for (int y = loy; y < hiy; ++y) {
    for (int x = lox; x < hix; ++x) {
      const bool ia = covers(a, x, y);
      const bool ib = covers(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : 100.0 * static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("iou basic values") {
  Box b{2, 3, 11, 17};
  CHECK(iou(b, b) == doctest::Approx(100.0));
  CHECK(iou(Box{0, 0, 10, 10}, Box{20, 20, 30, 30}) == 0.0);
  // Touching edges have zero intersection area.
  CHECK(iou(Box{0, 0, 10, 10}, Box{10, 0, 20, 10}) == 0.0);
  CHECK(iou(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}) ==
        doctest::Approx(100.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou matches integer-grid rasterization") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> lo(0, 20), ext(1, 15);
  for (int i = 0; i < 500; ++i) {
    const double ax = lo(rng), ay = lo(rng);
    const double bx = lo(rng), by = lo(rng);
    Box a{ax, ay, ax + ext(rng), ay + ext(rng)};
    Box b{bx, by, bx + ext(rng), by + ext(rng)};
    CHECK(iou(a, b) == doctest::Approx(iou_rasterized(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("iou symmetry and joint transform invariance") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 50.0), e(0.5, 30.0);
  for (int i = 0; i < 200; ++i) {
    Box a{u(rng), u(rng), 0, 0};
    a.x2 = a.x1 + e(rng);
    a.y2 = a.y1 + e(rng);
    Box b{u(rng), u(rng), 0, 0};
    b.x2 = b.x1 + e(rng);
    b.y2 = b.y1 + e(rng);
    const double v = iou(a, b);
    CHECK(iou(b, a) == doctest::Approx(v).epsilon(1e-12));
    const double dx = u(rng) - 25.0, dy = u(rng) - 25.0, s = 0.25 + u(rng) / 20.0;
    auto moved = [&](const Box& x) {
      return Box{s * (x.x1 + dx), s * (x.y1 + dy), s * (x.x2 + dx),
                 s * (x.y2 + dy)};
    };
    CHECK(iou(moved(a), moved(b)) == doctest::Approx(v).epsilon(1e-9));
  }
}

TEST_CASE("foveal_expand") {
  Box b{10, 10, 20, 20};
  const Box same = foveal_expand(b, 1.0);
  CHECK(same.x1 == b.x1);
  CHECK(same.y1 == b.y1);
  CHECK(same.x2 == b.x2);
  CHECK(same.y2 == b.y2);

  const Box twice = foveal_expand(b, 2.0);
  CHECK(twice.x1 == doctest::Approx(5.0));
  CHECK(twice.y1 == doctest::Approx(5.0));
  CHECK(twice.x2 == doctest::Approx(25.0));
  CHECK(twice.y2 == doctest::Approx(25.0));

  const Box wide = foveal_expand(Box{0, 0, 4, 8}, 4.0);
  CHECK(wide.x1 == doctest::Approx(-6.0));
  CHECK(wide.y1 == doctest::Approx(-12.0));
  CHECK(wide.x2 == doctest::Approx(10.0));
  CHECK(wide.y2 == doctest::Approx(20.0));

  CHECK_THROWS_AS(foveal_expand(b, 0.99), std::invalid_argument);
}

TEST_CASE("foveal_expand preserves center and aspect") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 40.0), e(0.5, 20.0),
      f(1.0, 6.0);
  for (int i = 0; i < 200; ++i) {
    Box b{u(rng), u(rng), 0, 0};
    b.x2 = b.x1 + e(rng);
    b.y2 = b.y1 + e(rng);
    const double factor = f(rng);
    const Box o = foveal_expand(b, factor);
    CHECK(o.cx() == doctest::Approx(b.cx()).epsilon(1e-12));
    CHECK(o.cy() == doctest::Approx(b.cy()).epsilon(1e-12));
    CHECK(o.width() / o.height() ==
          doctest::Approx(b.width() / b.height()).epsilon(1e-12));
    CHECK(o.width() == doctest::Approx(factor * b.width()).epsilon(1e-12));
  }
}

TEST_CASE("encode/decode deltas") {
  Box b{3, 4, 9, 20};
  const RegressionTarget self = encode_bbox(b, b);
  CHECK(self.tx == doctest::Approx(0.0));
  CHECK(self.ty == doctest::Approx(0.0));
  CHECK(self.tw == doctest::Approx(0.0));
  CHECK(self.th == doctest::Approx(0.0));

  const Box back = decode_bbox(b, RegressionTarget{});
  CHECK(back.x1 == doctest::Approx(b.x1));
  CHECK(back.y2 == doctest::Approx(b.y2));

  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-20.0, 60.0), e(0.25, 30.0);
  for (int i = 0; i < 1000; ++i) {
    Box p{u(rng), u(rng), 0, 0};
    p.x2 = p.x1 + e(rng);
    p.y2 = p.y1 + e(rng);
    Box g{u(rng), u(rng), 0, 0};
    g.x2 = g.x1 + e(rng);
    g.y2 = g.y1 + e(rng);
    const Box r = decode_bbox(p, encode_bbox(p, g));
    CHECK(std::abs(r.x1 - g.x1) < 1e-9);
    CHECK(std::abs(r.y1 - g.y1) < 1e-9);
    CHECK(std::abs(r.x2 - g.x2) < 1e-9);
    CHECK(std::abs(r.y2 - g.y2) < 1e-9);
  }
}

TEST_CASE("hflip_box") {
  const Box f = hflip_box(Box{0, 0, 10, 10}, 100.0);
  CHECK(f.x1 == doctest::Approx(90.0));
  CHECK(f.y1 == doctest::Approx(0.0));
  CHECK(f.x2 == doctest::Approx(100.0));
  CHECK(f.y2 == doctest::Approx(10.0));

  const Box b{12.5, 3.0, 47.25, 9.0};
  const Box twice = hflip_box(hflip_box(b, 64.0), 64.0);
  CHECK(twice.x1 == doctest::Approx(b.x1));
  CHECK(twice.x2 == doctest::Approx(b.x2));

  const Box centered{40, 5, 60, 15};
  const Box c = hflip_box(centered, 100.0);
  CHECK(c.x1 == doctest::Approx(centered.x1));
  CHECK(c.x2 == doctest::Approx(centered.x2));
}

TEST_CASE("clip_box") {
  const Box in{2, 3, 10, 12};
  auto same = clip_box(in, 16, 16);
  REQUIRE(same.has_value());
  CHECK(same->x1 == in.x1);
  CHECK(same->y2 == in.y2);

  auto clipped = clip_box(Box{-6, -12, 10, 20}, 16, 16);
  REQUIRE(clipped.has_value());
  CHECK(clipped->x1 == 0.0);
  CHECK(clipped->y1 == 0.0);
  CHECK(clipped->x2 == 10.0);
  CHECK(clipped->y2 == 16.0);

  CHECK_FALSE(clip_box(Box{20, 20, 30, 30}, 16, 16).has_value());
  CHECK_FALSE(clip_box(Box{-5, 0, 0, 10}, 16, 16).has_value());
}
