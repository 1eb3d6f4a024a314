#include <cmath>

#include "doctest.h"
#include "padet/loss.hpp"
#include "padet/rng.hpp"

using namespace padet;

TEST_CASE("smooth_l1 branches and additivity") {
  const std::vector<double> zero{0.0};
  CHECK(smooth_l1(std::vector<double>{0.5}, zero) == doctest::Approx(0.125));
  CHECK(smooth_l1(std::vector<double>{2.0}, zero) == doctest::Approx(1.5));
  CHECK(smooth_l1(std::vector<double>{0.5, 2.0}, std::vector<double>{0.0, 0.0}) ==
        doctest::Approx(1.625));
  CHECK(smooth_l1(std::vector<double>{-2.0}, zero) == doctest::Approx(1.5));
  CHECK_THROWS_AS(smooth_l1(std::vector<double>{1.0, 2.0}, zero), std::invalid_argument);
}

TEST_CASE("softmax cross entropy is stable and correct") {
  const std::vector<double> logits{1.0, 2.0, 3.0};
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z);
  CHECK(softmax_cross_entropy(logits, 2) == doctest::Approx(-std::log(std::exp(3.0) / sum)));
  // huge logits must not overflow
  const std::vector<double> big{1000.0, 999.0};
  CHECK(std::isfinite(softmax_cross_entropy(big, 0)));
  CHECK_THROWS_AS(softmax_cross_entropy(big, 5), std::invalid_argument);
}

namespace {

std::vector<MatchResult> tiny_matches() {
  std::vector<MatchResult> m(4);
  m[0].label = MatchResult::Label::positive;
  m[0].class_id = 1;
  m[0].target = {0.1, -0.2, 0.05, 0.0};
  m[1].label = MatchResult::Label::negative;
  m[2].label = MatchResult::Label::discarded;
  m[3].label = MatchResult::Label::negative;
  return m;
}

}  // namespace

TEST_CASE("process loss is exactly zero without positives") {
  std::vector<MatchResult> m(3);  // all negative
  std::vector<std::vector<double>> logits(3, {0.3, -0.2, 0.4});
  std::vector<std::array<double, 4>> deltas(3, {0, 0, 0, 0});
  const auto out = process_loss(m, logits, deltas);
  CHECK(out.cls_loss == 0.0);
  CHECK(out.reg_loss == 0.0);
  CHECK(out.n_pos == 0);
}

TEST_CASE("a perfect positive contributes near-zero loss") {
  std::vector<MatchResult> m(1);
  m[0].label = MatchResult::Label::positive;
  m[0].class_id = 0;  // logit index 1 after the background slot
  m[0].target = {0.25, -0.5, 0.1, 0.2};
  std::vector<std::vector<double>> logits{{-100.0, 100.0, -100.0}};
  std::vector<std::array<double, 4>> deltas{{0.25, -0.5, 0.1, 0.2}};
  const auto out = process_loss(m, logits, deltas);
  CHECK(out.n_pos == 1);
  CHECK(out.cls_loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.reg_loss == 0.0);
}

TEST_CASE("process loss matches a scalar recomputation of the formula") {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(2, 12);
    const int classes = 4;
    std::vector<MatchResult> m(n);
    std::vector<std::vector<double>> logits(n);
    std::vector<std::array<double, 4>> deltas(n);
    for (int i = 0; i < n; ++i) {
      const double r = rng.uniform();
      m[i].label = r < 0.3   ? MatchResult::Label::positive
                   : r < 0.8 ? MatchResult::Label::negative
                             : MatchResult::Label::discarded;
      m[i].class_id = rng.uniform_int(0, classes - 2);
      m[i].target = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                     rng.uniform(-1, 1)};
      logits[i].resize(classes);
      for (double& z : logits[i]) z = rng.uniform(-2, 2);
      for (double& d : deltas[i]) d = rng.uniform(-2, 2);
    }
    const auto out = process_loss(m, logits, deltas);

    int n_pos = 0;
    double cls = 0.0, reg = 0.0;
    for (int i = 0; i < n; ++i) {
      if (m[i].label == MatchResult::Label::positive) ++n_pos;
    }
    if (n_pos == 0) {
      CHECK(out.cls_loss == 0.0);
      CHECK(out.reg_loss == 0.0);
      continue;
    }
    for (int i = 0; i < n; ++i) {
      if (m[i].label == MatchResult::Label::discarded) continue;
      const int target = m[i].label == MatchResult::Label::positive ? m[i].class_id + 1 : 0;
      double mx = logits[i][0];
      for (double z : logits[i]) mx = std::max(mx, z);
      double s = 0.0;
      for (double z : logits[i]) s += std::exp(z - mx);
      cls += mx + std::log(s) - logits[i][target];
      if (m[i].label == MatchResult::Label::positive) {
        const double t[4] = {m[i].target.dx, m[i].target.dy, m[i].target.dw,
                             m[i].target.dh};
        for (int j = 0; j < 4; ++j) {
          const double d = deltas[i][j] - t[j];
          reg += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
        }
      }
    }
    CHECK(out.cls_loss == doctest::Approx(cls / n_pos).epsilon(1e-10));
    CHECK(out.reg_loss == doctest::Approx(reg / n_pos).epsilon(1e-10));
    CHECK(out.n_pos == n_pos);
  }
}

TEST_CASE("raising the true-class logit strictly lowers the cls loss") {
  auto m = tiny_matches();
  std::vector<std::vector<double>> logits(4, {0.2, -0.1, 0.4});
  std::vector<std::array<double, 4>> deltas(4, {0.1, -0.2, 0.05, 0.0});
  const double base = process_loss(m, logits, deltas).cls_loss;
  logits[0][2] += 1.0;  // positive with class_id 1 -> logit index 2
  const double boosted = process_loss(m, logits, deltas).cls_loss;
  CHECK(boosted < base);
}

TEST_CASE("warmup schedule endpoints and interpolation") {
  LrSchedule s;
  s.base_lr = 4e-3;
  s.warmup_start = 1e-6;
  s.warmup_epochs = 5;
  s.steps_per_epoch = 100;
  s.milestone_epochs = {150, 200};

  CHECK(lr_at(0, s) == 1e-6);
  CHECK(lr_at(500, s) == 4e-3);  // end of epoch 5
  CHECK(lr_at(250, s) == doctest::Approx((1e-6 + 4e-3) / 2.0));  // epoch 2.5

  // monotone non-decreasing during warmup
  for (int t = 1; t <= 500; ++t) CHECK(lr_at(t, s) >= lr_at(t - 1, s));
  // constant at base until the first milestone, then divided by 10
  CHECK(lr_at(501, s) == 4e-3);
  CHECK(lr_at(150 * 100, s) == doctest::Approx(4e-4));
  CHECK(lr_at(200 * 100, s) == doctest::Approx(4e-5));
  // non-increasing after warmup
  double prev = lr_at(500, s);
  for (int epoch = 5; epoch <= 210; ++epoch) {
    const double lr = lr_at(static_cast<std::int64_t>(epoch) * 100, s);
    CHECK(lr <= prev);
    prev = lr;
  }
}
