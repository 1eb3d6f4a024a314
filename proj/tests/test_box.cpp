#include <cmath>

#include "doctest.h"
#include "padet/box.hpp"
#include "padet/rng.hpp"

using namespace padet;

namespace {

Box random_box(Rng& rng) {
  return {rng.uniform(-20.0, 120.0), rng.uniform(-20.0, 120.0), rng.uniform(0.5, 80.0),
          rng.uniform(0.5, 80.0)};
}

}  // namespace

TEST_CASE("iou basics") {
  const Box a{1, 1, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));

  const Box far{100, 100, 2, 2};
  CHECK(iou(a, far) == 0.0);

  // side-by-side unit overlap: intersection 2, union 6
  const Box b{2, 1, 2, 2};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(b, a) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("iou is symmetric, bounded, and 1 only for identical boxes") {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    if (ab == 1.0) {
      CHECK(a.cx == b.cx);
      CHECK(a.cy == b.cy);
      CHECK(a.w == b.w);
      CHECK(a.h == b.h);
    }
  }
}

TEST_CASE("encode maps a box onto itself as zeros") {
  const Box b{13, 7, 5, 9};
  const BoxDelta d = encode(b, b);
  CHECK(d.dx == 0.0);
  CHECK(d.dy == 0.0);
  CHECK(d.dw == 0.0);
  CHECK(d.dh == 0.0);
}

TEST_CASE("encode evaluates the parameterization directly") {
  const Box b{10, 10, 20, 20};
  const Box g{12, 14, 40, 10};
  const BoxDelta d = encode(g, b);
  CHECK(d.dx == doctest::Approx(0.1));
  CHECK(d.dy == doctest::Approx(0.2));
  CHECK(d.dw == doctest::Approx(std::log(2.0)));
  CHECK(d.dh == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("decode inverts the worked encode example") {
  const Box b{10, 10, 20, 20};
  const Box g = decode({0.1, 0.2, std::log(2.0), -std::log(2.0)}, b);
  CHECK(g.cx == doctest::Approx(12.0));
  CHECK(g.cy == doctest::Approx(14.0));
  CHECK(g.w == doctest::Approx(40.0));
  CHECK(g.h == doctest::Approx(10.0));

  const Box same = decode({0, 0, 0, 0}, b);
  CHECK(same.cx == b.cx);
  CHECK(same.w == b.w);
}

TEST_CASE("encode/decode roundtrip on random pairs") {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const Box b = random_box(rng);
    const Box g = random_box(rng);
    const Box back = decode(encode(g, b), b);
    CHECK(std::abs(back.cx - g.cx) <= 1e-9 * std::max(1.0, std::abs(g.cx)));
    CHECK(std::abs(back.cy - g.cy) <= 1e-9 * std::max(1.0, std::abs(g.cy)));
    CHECK(std::abs(back.w - g.w) <= 1e-9 * g.w);
    CHECK(std::abs(back.h - g.h) <= 1e-9 * g.h);

    const BoxDelta d{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2),
                     rng.uniform(-2, 2)};
    const BoxDelta d2 = encode(decode(d, b), b);
    CHECK(std::abs(d2.dx - d.dx) <= 1e-9 * std::max(1.0, std::abs(d.dx)));
    CHECK(std::abs(d2.dw - d.dw) <= 1e-9 * std::max(1.0, std::abs(d.dw)));
  }
}

TEST_CASE("clip_delta fixes zero and saturates at half a stride") {
  const Box b{0, 0, 16, 16};
  const BoxDelta zero = clip_delta({0, 0, 0.3, -0.7}, b, 8, 8);
  CHECK(zero.dx == 0.0);
  CHECK(zero.dy == 0.0);
  CHECK(zero.dw == 0.3);  // size components pass through
  CHECK(zero.dh == -0.7);

  const BoxDelta sat = clip_delta({1e9, -1e9, 0, 0}, b, 8, 8);
  CHECK(sat.dx == doctest::Approx(8.0 / (2.0 * 16.0)));
  CHECK(sat.dy == doctest::Approx(-0.25));
  // decoded displacement approaches but never reaches half the stride
  CHECK(b.w * sat.dx == doctest::Approx(4.0));
  CHECK(b.w * sat.dx <= 4.0);
}

TEST_CASE("post-clip center displacement stays strictly within half a stride") {
  // tanh reaches 1.0 exactly in doubles near |x| ~ 19, so the strict bound is
  // checked on the range where the saturation is still resolvable, and the
  // non-strict bound everywhere
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) {
    const Box b{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 80),
                rng.uniform(1, 80)};
    const double cx = rng.uniform(1, 32);
    const double cy = rng.uniform(1, 32);
    const BoxDelta raw{rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(-3, 3),
                       rng.uniform(-3, 3)};
    const BoxDelta clipped = clip_delta(raw, b, cx, cy);
    const Box adj = decode(clipped, b);
    CHECK(std::abs(adj.cx - b.cx) < cx / 2.0);
    CHECK(std::abs(adj.cy - b.cy) < cy / 2.0);

    const BoxDelta extreme = clip_delta({1e12, -1e12, 0, 0}, b, cx, cy);
    const Box adj2 = decode(extreme, b);
    CHECK(std::abs(adj2.cx - b.cx) <= cx / 2.0 * (1.0 + 1e-12));
    CHECK(std::abs(adj2.cy - b.cy) <= cy / 2.0 * (1.0 + 1e-12));
  }
}

TEST_CASE("clamp_box keeps boxes inside the image") {
  const Box b{-5, 60, 20, 40};
  const Box c = clamp_box(b, 64, 64);
  CHECK(c.x_min() >= 0.0);
  CHECK(c.y_max() <= 64.0);
  CHECK(c.w > 0.0);
  CHECK(c.h > 0.0);
}
