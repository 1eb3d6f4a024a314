#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "padet/anchors.hpp"
#include "padet/rng.hpp"
#include "ref/oracles.hpp"

using namespace padet;

namespace {

const std::vector<double> kMultipliers{1.0, std::pow(2.0, 1.0 / 3.0),
                                       std::pow(2.0, 2.0 / 3.0)};

Box random_box(Rng& rng, double span = 100.0) {
  return {rng.uniform(0, span), rng.uniform(0, span), rng.uniform(4, 60),
          rng.uniform(4, 60)};
}

}  // namespace

TEST_CASE("stride-8 grid over a 64x64 image carries 192 scaled boxes") {
  auto grids = generate_default_boxes({8}, 64, 64, kMultipliers);
  REQUIRE(grids.size() == 1);
  const auto& g = grids[0];
  CHECK(g.grid_h == 8);
  CHECK(g.grid_w == 8);
  CHECK(g.anchors_per_cell() == 3);
  CHECK(static_cast<int>(g.boxes.size()) == 192);
  // sides are 4*stride times the scale set
  CHECK(g.boxes[0].w == doctest::Approx(32.0));
  CHECK(g.boxes[1].w == doctest::Approx(40.3174735960));
  CHECK(g.boxes[2].w == doctest::Approx(50.7968346620));
  for (const auto& b : g.boxes) CHECK(b.w == doctest::Approx(b.h));
  // cell (0,0) is centered half a stride in
  CHECK(g.boxes[0].cx == doctest::Approx(4.0));
  CHECK(g.boxes[0].cy == doctest::Approx(4.0));
  // cell-major then anchor ordering: box (i=0, j=1, a=0)
  CHECK(g.boxes[3].cx == doctest::Approx(12.0));
  CHECK(g.boxes[3].cy == doctest::Approx(4.0));
}

TEST_CASE("single-cell grid centers its box at half the stride") {
  auto grids = generate_default_boxes({16}, 16, 16, {1.0});
  REQUIRE(grids.size() == 1);
  REQUIRE(grids[0].boxes.size() == 1);
  CHECK(grids[0].boxes[0].cx == doctest::Approx(8.0));
  CHECK(grids[0].boxes[0].cy == doctest::Approx(8.0));
  CHECK(grids[0].boxes[0].w == doctest::Approx(64.0));
}

TEST_CASE("the 512 configuration yields 16320 boxes") {
  auto grids = generate_default_boxes({8, 16, 32, 64}, 512, 512, kMultipliers);
  int total = 0;
  for (const auto& g : grids) total += g.num_boxes();
  CHECK(total == 16320);
}

TEST_CASE("non-divisible image sizes are rejected") {
  CHECK_THROWS_AS(generate_default_boxes({8, 16, 32}, 100, 100, kMultipliers),
                  std::invalid_argument);
}

TEST_CASE("an anchor identical to a gt becomes positive with zero target") {
  const std::vector<Box> anchors{{10, 10, 8, 8}, {40, 40, 8, 8}};
  const std::vector<GtBox> gts{{{10, 10, 8, 8}, 2}};
  const auto res = match(anchors, gts);
  REQUIRE(res.size() == 2);
  CHECK(res[0].label == MatchResult::Label::positive);
  CHECK(res[0].class_id == 2);
  CHECK(res[0].matched_gt == 0);
  CHECK(res[0].target.dx == 0.0);
  CHECK(res[0].target.dw == 0.0);
  CHECK(res[1].label == MatchResult::Label::negative);
}

TEST_CASE("an anchor below the threshold stays negative") {
  // IoU = 0.4 exactly: areas 10x10 vs shifted overlap
  const Box anchor{5, 5, 10, 10};
  const Box gt{5, 5 + 10.0 * 3.0 / 7.0, 10, 10};
  CHECK(iou(anchor, gt) == doctest::Approx(4.0 / 10.0).epsilon(1e-9));
  const auto res = match({anchor}, {{gt, 0}});
  CHECK(res[0].label == MatchResult::Label::negative);
}

TEST_CASE("empty gt list leaves everything negative") {
  const std::vector<Box> anchors{{10, 10, 8, 8}, {40, 40, 8, 8}};
  const auto res = match(anchors, {});
  for (const auto& m : res) CHECK(m.label == MatchResult::Label::negative);
}

TEST_CASE("match agrees with the exhaustive oracle on random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> anchors;
    for (int i = 0; i < 200; ++i) anchors.push_back(random_box(rng));
    std::vector<GtBox> gts;
    const int n_gts = rng.uniform_int(1, 5);
    for (int j = 0; j < n_gts; ++j) gts.push_back({random_box(rng), rng.uniform_int(0, 2)});

    const auto got = match(anchors, gts);
    const auto want = ref::match_bruteforce(anchors, gts, 0.5);
    for (size_t i = 0; i < anchors.size(); ++i) {
      if (want[i] < 0) {
        CHECK(got[i].label == MatchResult::Label::negative);
      } else {
        CHECK(got[i].label == MatchResult::Label::positive);
        CHECK(got[i].matched_gt == want[i]);
        const BoxDelta expect = encode(gts[want[i]].box, anchors[i]);
        CHECK(got[i].target.dx == doctest::Approx(expect.dx));
        CHECK(got[i].target.dh == doctest::Approx(expect.dh));
      }
    }
  }
}

TEST_CASE("matching is deterministic and permutation-consistent") {
  Rng rng(83);
  std::vector<Box> anchors;
  for (int i = 0; i < 100; ++i) anchors.push_back(random_box(rng));
  std::vector<GtBox> gts{{random_box(rng), 0}, {random_box(rng), 1}, {random_box(rng), 2}};

  const auto a = match(anchors, gts);
  const auto b = match(anchors, gts);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].matched_gt == b[i].matched_gt);
  }

  std::vector<GtBox> shuffled{gts[2], gts[0], gts[1]};
  const auto c = match(anchors, shuffled);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].label == MatchResult::Label::positive) ==
          (c[i].label == MatchResult::Label::positive));
    if (a[i].label == MatchResult::Label::positive) {
      CHECK(a[i].class_id == c[i].class_id);
    }
  }
}

TEST_CASE("every gt whose best anchor IoU clears the threshold gets a positive") {
  // holds for non-overlapping gts; overlapping gts can shadow each other's
  // anchors under pure argmax assignment (the bipartite flag covers that)
  Rng rng(89);
  auto grids = generate_default_boxes({8, 16}, 64, 64, kMultipliers);
  std::vector<Box> anchors;
  for (const auto& g : grids) anchors.insert(anchors.end(), g.boxes.begin(), g.boxes.end());
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GtBox> gts;
    for (int attempt = 0; attempt < 50 && gts.size() < 3; ++attempt) {
      const Box candidate{rng.uniform(10, 54), rng.uniform(10, 54), rng.uniform(8, 50),
                          rng.uniform(8, 50)};
      bool disjoint = true;
      for (const auto& g : gts) {
        if (iou(candidate, g.box) > 0.0) disjoint = false;
      }
      if (disjoint) gts.push_back({candidate, 0});
    }
    const auto res = match(anchors, gts);
    for (size_t j = 0; j < gts.size(); ++j) {
      double best = 0.0;
      for (const auto& a : anchors) best = std::max(best, iou(a, gts[j].box));
      if (best > 0.5) {
        bool found = false;
        for (const auto& m : res) {
          if (m.label == MatchResult::Label::positive &&
              m.matched_gt == static_cast<int>(j)) {
            found = true;
            break;
          }
        }
        CHECK(found);
      }
    }
  }
}

TEST_CASE("the bipartite flag forces each gt's best anchor positive") {
  // gt overlaps its best anchor at only 0.45, below threshold
  const std::vector<Box> anchors{{10, 10, 10, 10}, {50, 50, 10, 10}};
  const Box gt{10, 10 + 10.0 * (1.0 - 0.45) / (1.0 + 0.45), 10, 10};
  REQUIRE(iou(anchors[0], gt) > 0.4);
  REQUIRE(iou(anchors[0], gt) < 0.5);
  const auto plain = match(anchors, {{gt, 1}});
  CHECK(plain[0].label == MatchResult::Label::negative);
  const auto forced = match(anchors, {{gt, 1}}, 0.5, true);
  CHECK(forced[0].label == MatchResult::Label::positive);
  CHECK(forced[0].class_id == 1);
}

TEST_CASE("hard negative mining keeps the 1:3 budget of highest losses") {
  std::vector<MatchResult> matches(12);
  matches[0].label = MatchResult::Label::positive;
  matches[1].label = MatchResult::Label::positive;
  std::vector<double> losses(12, 0.0);
  // negatives at indices 2..11 with10 distinct losses
  for (int i = 2; i < 12; ++i) losses[i] = 0.1 * i;
  const auto mined = mine_hard_negatives(matches, losses, 3.0);
  int kept = 0;
  for (int i = 2; i < 12; ++i) {
    if (mined[i].label == MatchResult::Label::negative) ++kept;
  }
  CHECK(kept == 6);
  // the six largest losses are indices 6..11
  for (int i = 6; i < 12; ++i) CHECK(mined[i].label == MatchResult::Label::negative);
  for (int i = 2; i < 6; ++i) CHECK(mined[i].label == MatchResult::Label::discarded);
  CHECK(mined[0].label == MatchResult::Label::positive);
}

TEST_CASE("zero positives keep zero negatives") {
  std::vector<MatchResult> matches(8);
  std::vector<double> losses(8, 1.0);
  const auto mined = mine_hard_negatives(matches, losses, 3.0);
  for (const auto& m : mined) CHECK(m.label == MatchResult::Label::discarded);
}

TEST_CASE("mining agrees with the sorting oracle") {
  Rng rng(97);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(5, 60);
    std::vector<MatchResult> matches(n);
    std::vector<double> losses(n);
    for (int i = 0; i < n; ++i) {
      losses[i] = rng.uniform(0.0, 4.0);
      if (rng.bernoulli(0.15)) matches[i].label = MatchResult::Label::positive;
    }
    const auto mined = mine_hard_negatives(matches, losses, 3.0);
    const auto want = ref::mine_bruteforce(matches, losses, 3.0);
    std::vector<int> got;
    for (int i = 0; i < n; ++i) {
      if (matches[i].label == MatchResult::Label::negative &&
          mined[i].label == MatchResult::Label::negative) {
        got.push_back(i);
      }
    }
    CHECK(got == want);
  }
}

TEST_CASE("mining rejects a negative ratio and misaligned lists") {
  std::vector<MatchResult> matches(3);
  std::vector<double> losses(3, 0.0);
  CHECK_THROWS_AS(mine_hard_negatives(matches, losses, -1.0), std::invalid_argument);
  losses.pop_back();
  CHECK_THROWS_AS(mine_hard_negatives(matches, losses, 3.0), std::invalid_argument);
}
