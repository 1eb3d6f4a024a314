#include <cmath>

#include "doctest.h"
#include "padet/autograd.hpp"
#include "padet/rng.hpp"
#include "ref/oracles.hpp"

using namespace padet;

namespace {

TensorRef random_tensor(Shape4 s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = make_tensor(s);
  for (double& v : t->v) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> bias_of(const TensorRef& b) { return b ? b->v : std::vector<double>{}; }

}  // namespace

TEST_CASE("conv2d of ones has the filter sum at the center") {
  auto x = make_tensor({1, 1, 3, 3});
  auto w = make_tensor({1, 1, 3, 3});
  auto b = make_tensor({1, 1, 1, 1});
  for (double& v : x->v) v = 1.0;
  for (double& v : w->v) v = 1.0;
  auto y = conv2d(nullptr, x, w, b, 1, 1, 1);
  CHECK(y->shape == Shape4{1, 1, 3, 3});
  CHECK(y->at(0, 0, 1, 1) == doctest::Approx(9.0));
  CHECK(y->at(0, 0, 0, 0) == doctest::Approx(4.0));
}

TEST_CASE("1x1 convolution with unit weight is the identity") {
  Rng rng(3);
  auto x = random_tensor({2, 1, 4, 5}, rng);
  auto w = make_tensor({1, 1, 1, 1});
  w->v[0] = 1.0;
  auto b = make_tensor({1, 1, 1, 1});
  auto y = conv2d(nullptr, x, w, b);
  REQUIRE(y->shape == x->shape);
  for (size_t i = 0; i < x->v.size(); ++i) CHECK(y->v[i] == doctest::Approx(x->v[i]));
}

TEST_CASE("dilated conv2d matches the seven-loop reference") {
  Rng rng(17);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({1, 4, 1, 1}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      for (int dil : {1, 2}) {
        if (8 + 2 * pad < dil * 2 + 1) continue;
        auto y = conv2d(nullptr, x, w, b, stride, pad, dil);
        Tensor want = ref::naive_conv2d(*x, *w, b->v, stride, pad, dil);
        REQUIRE(y->shape == want.shape);
        for (size_t i = 0; i < y->v.size(); ++i) {
          CHECK(y->v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes with a diagnostic naming both") {
  auto x = make_tensor({1, 2, 4, 4});
  auto w = make_tensor({1, 3, 3, 3});
  try {
    conv2d(nullptr, x, w, nullptr, 1, 1, 1);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("1x2x4x4") != std::string::npos);
    CHECK(msg.find("1x3x3x3") != std::string::npos);
  }
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto x1 = random_tensor({1, 2, 6, 6}, rng);
    auto x2 = random_tensor({1, 2, 6, 6}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    const double a = rng.uniform(-2.0, 2.0);
    const double bscale = rng.uniform(-2.0, 2.0);
    auto mix = make_tensor(x1->shape);
    for (size_t i = 0; i < mix->v.size(); ++i) {
      mix->v[i] = a * x1->v[i] + bscale * x2->v[i];
    }
    auto y_mix = conv2d(nullptr, mix, w, nullptr, 1, 1, 1);
    auto y1 = conv2d(nullptr, x1, w, nullptr, 1, 1, 1);
    auto y2 = conv2d(nullptr, x2, w, nullptr, 1, 1, 1);
    for (size_t i = 0; i < y_mix->v.size(); ++i) {
      CHECK(y_mix->v[i] ==
            doctest::Approx(a * y1->v[i] + bscale * y2->v[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("offseted convolution with zero offsets reduces to conv2d") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = trial % 2 == 0 ? 3 : 1;
    const int cin = rng.uniform_int(1, 3);
    const int cout = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(3, 7);
    const int w = rng.uniform_int(3, 7);
    auto x = random_tensor({2, cin, h, w}, rng);
    auto wt = random_tensor({cout, cin, k, k}, rng);
    auto b = random_tensor({1, cout, 1, 1}, rng);
    OffsetField off = OffsetField::zeros(2, k, 2, h, w);
    auto got = offset_conv2d(nullptr, x, wt, b, off, 1);
    auto want = conv2d(nullptr, x, wt, b, 1, k / 2, 1);
    REQUIRE(got->shape == want->shape);
    for (size_t i = 0; i < got->v.size(); ++i) {
      CHECK(std::abs(got->v[i] - want->v[i]) < 1e-12);
    }
  }
}

TEST_CASE("offseted 1x1 convolution shifts onto interpolated values") {
  // one row 0,1,2,...; a +0.5 x-offset samples halfway between neighbors
  auto x = make_tensor({1, 1, 1, 6});
  for (int i = 0; i < 6; ++i) x->at(0, 0, 0, i) = i;
  auto w = make_tensor({1, 1, 1, 1});
  w->v[0] = 1.0;
  OffsetField off = OffsetField::zeros(1, 1, 1, 1, 6);
  for (int i = 0; i < 6; ++i) off.t->at(0, 1, 0, i) = 0.5;
  auto y = offset_conv2d(nullptr, x, w, nullptr, off, 0);
  for (int i = 0; i < 5; ++i) CHECK(y->at(0, 0, 0, i) == doctest::Approx(i + 0.5));
  // last sample reaches x = 5.5: only the left neighbor is inside
  CHECK(y->at(0, 0, 0, 5) == doctest::Approx(5.0 * 0.5));
}

TEST_CASE("offseted convolution matches the gather-then-dot reference") {
  Rng rng(41);
  for (int trial = 0; trial < 8; ++trial) {
    const int k = 3;
    const int cin = rng.uniform_int(1, 3);
    const int cout = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(4, 7);
    const int w = rng.uniform_int(4, 7);
    const int anchors = rng.uniform_int(1, 3);
    const int a = rng.uniform_int(0, anchors - 1);
    auto x = random_tensor({2, cin, h, w}, rng);
    auto wt = random_tensor({cout, cin, k, k}, rng);
    auto b = random_tensor({1, cout, 1, 1}, rng);
    OffsetField off = OffsetField::zeros(2, k, anchors, h, w);
    for (double& v : off.t->v) v = rng.uniform(-2.5, 2.5);
    auto got = offset_conv2d(nullptr, x, wt, b, off, a);
    Tensor want = ref::naive_offset_conv2d(*x, *wt, bias_of(b), off, a);
    for (size_t i = 0; i < got->v.size(); ++i) {
      CHECK(got->v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("offset_conv2d validates the offset channel count") {
  auto x = make_tensor({1, 1, 4, 4});
  auto w = make_tensor({1, 1, 3, 3});
  OffsetField off = OffsetField::zeros(1, 3, 2, 4, 4);
  off.anchors = 3;  // tensor no longer holds 2*K*A channels
  CHECK_THROWS_AS(offset_conv2d(nullptr, x, w, nullptr, off, 0), std::invalid_argument);
  OffsetField wrong_k = OffsetField::zeros(1, 5, 1, 4, 4);
  CHECK_THROWS_AS(offset_conv2d(nullptr, x, w, nullptr, wrong_k, 0),
                  std::invalid_argument);
}

TEST_CASE("gradient of sum(conv(x, ones)) is the box-filter response") {
  auto x = make_tensor({1, 1, 4, 4});
  for (double& v : x->v) v = 0.5;
  auto w = make_tensor({1, 1, 3, 3});
  for (double& v : w->v) v = 1.0;
  Tape tape;
  auto y = conv2d(&tape, x, w, nullptr, 1, 1, 1);
  auto loss = reduce_sum(&tape, y);
  tape.backward(loss);
  // dL/dx counts how many output windows cover each input cell
  CHECK(x->g[x->index(0, 0, 1, 1)] == doctest::Approx(9.0));
  CHECK(x->g[x->index(0, 0, 0, 0)] == doctest::Approx(4.0));
  CHECK(x->g[x->index(0, 0, 0, 1)] == doctest::Approx(6.0));
}

TEST_CASE("backward twice without a new forward is rejected") {
  auto x = make_tensor({1, 1, 2, 2});
  Tape tape;
  auto loss = reduce_sum(&tape, x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("backward requires a scalar loss") {
  auto x = make_tensor({1, 1, 2, 2});
  Tape tape;
  auto y = relu(&tape, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

namespace {

// Two-layer toy net: conv -> batch norm -> relu -> conv, with a gathered
// cross-entropy plus Smooth-L1 objective.
struct ToyNet {
  TensorRef x, w1, b1, gamma, beta, w2, b2;
  std::vector<double> run_mean, run_var;
  std::vector<ClsEntry> cls_entries;
  std::vector<RegEntry> reg_entries;

  explicit ToyNet(Rng& rng) {
    x = random_tensor({2, 2, 6, 6}, rng);
    w1 = random_tensor({3, 2, 3, 3}, rng, -0.6, 0.6);
    b1 = random_tensor({1, 3, 1, 1}, rng, -0.2, 0.2);
    gamma = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
    beta = random_tensor({1, 3, 1, 1}, rng, -0.3, 0.3);
    w2 = random_tensor({8, 3, 3, 3}, rng, -0.6, 0.6);
    b2 = random_tensor({1, 8, 1, 1}, rng, -0.2, 0.2);
    run_mean.assign(3, 0.0);
    run_var.assign(3, 1.0);
    cls_entries = {{0, 0, 1, 2, 4, 2}, {1, 0, 3, 3, 4, 0}, {0, 4, 2, 1, 4, 3}};
    reg_entries = {{0, 4, 1, 1, {0.3, -0.2, 0.5, 1.4}, true, 0.7, 0.4},
                   {1, 0, 2, 4, {-1.5, 0.2, 0.0, 2.0}, false, 0.0, 0.0}};
  }

  double forward(Tape* tape) {
    auto h1 = conv2d(tape, x, w1, b1, 1, 1, 1);
    auto bn = batch_norm(tape, h1, gamma, beta, run_mean, run_var, true);
    auto act = relu(tape, bn);
    auto h2 = conv2d(tape, act, w2, b2, 1, 1, 1);
    auto ce = softmax_ce_sum(tape, h2, cls_entries);
    auto sl = smooth_l1_sum(tape, h2, reg_entries);
    auto loss = scale(tape, add(tape, ce, sl), 0.5);
    if (tape) {
      tape->backward(loss);
      return loss->v[0];
    }
    return loss->v[0];
  }
};

void check_param_fd(ToyNet& net, const TensorRef& param, double tol = 1e-4) {
  std::vector<double> analytic = param->g;
  auto f = [&]() { return net.forward(nullptr); };
  std::vector<double> fd = ref::fd_gradient(f, param->v);
  CHECK(ref::max_rel_err(analytic, fd) < tol);
}

}  // namespace

TEST_CASE("every parameter of the toy net passes the finite-difference check") {
  Rng rng(59);
  ToyNet net(rng);
  Tape tape;
  net.forward(&tape);
  for (const TensorRef& p :
       {net.x, net.w1, net.b1, net.gamma, net.beta, net.w2, net.b2}) {
    check_param_fd(net, p);
  }
}

TEST_CASE("offseted convolution gradients pass finite differences") {
  Rng rng(61);
  auto x = random_tensor({1, 2, 5, 5}, rng);
  auto w = random_tensor({4, 2, 3, 3}, rng, -0.6, 0.6);
  auto b = random_tensor({1, 4, 1, 1}, rng, -0.2, 0.2);
  OffsetField off = OffsetField::zeros(1, 3, 1, 5, 5);
  for (double& v : off.t->v) v = rng.uniform(-1.3, 1.3);

  std::vector<RegEntry> regs = {{0, 0, 2, 2, {0.2, -0.4, 0.8, 0.1}, false, 0, 0}};
  std::vector<ClsEntry> cls = {{0, 0, 1, 3, 2, 1}};
  auto run = [&](Tape* tape) {
    auto y = offset_conv2d(tape, x, w, b, off, 0, true);
    auto ce = softmax_ce_sum(tape, y, cls);
    auto sl = smooth_l1_sum(tape, y, regs);
    auto loss = add(tape, ce, sl);
    if (tape) tape->backward(loss);
    return loss->v[0];
  };
  Tape tape;
  run(&tape);
  auto f = [&]() { return run(nullptr); };
  for (const TensorRef& p : {x, w, b}) {
    std::vector<double> analytic = p->g;
    std::vector<double> fd = ref::fd_gradient(f, p->v);
    CHECK(ref::max_rel_err(analytic, fd) < 1e-4);
  }
  // offsets too, since offset gradients were requested
  std::vector<double> analytic = off.t->g;
  std::vector<double> fd = ref::fd_gradient(f, off.t->v);
  CHECK(ref::max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("offseted convolution on a 1x1 kernel has exact offset gradients") {
  Rng rng(67);
  auto x = random_tensor({1, 1, 4, 4}, rng);
  auto w = make_tensor({1, 1, 1, 1});
  w->v[0] = 1.3;
  OffsetField off = OffsetField::zeros(1, 1, 1, 4, 4);
  for (double& v : off.t->v) v = rng.uniform(0.1, 0.4);
  auto run = [&](Tape* tape) {
    auto y = offset_conv2d(tape, x, w, nullptr, off, 0, true);
    auto loss = reduce_sum(tape, y);
    if (tape) tape->backward(loss);
    return loss->v[0];
  };
  Tape tape;
  run(&tape);
  auto f = [&]() { return run(nullptr); };
  std::vector<double> analytic = off.t->g;
  std::vector<double> fd = ref::fd_gradient(f, off.t->v);
  CHECK(ref::max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("sgd with zero momentum takes a plain gradient step") {
  auto p = std::make_shared<Parameter>("p", Shape4{1, 1, 1, 2});
  p->tensor->v = {1.0, -2.0};
  p->tensor->ensure_grad();
  p->tensor->g = {0.5, -1.0};
  sgd_step({p}, 0.1, 0.0, 0.0);
  CHECK(p->tensor->v[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(p->tensor->v[1] == doctest::Approx(-2.0 + 0.1 * 1.0));
  CHECK(!p->tensor->has_grad());
}

TEST_CASE("sgd with zero gradient and zero decay is a fixed point") {
  auto p = std::make_shared<Parameter>("p", Shape4{1, 1, 1, 2});
  p->tensor->v = {3.0, 4.0};
  p->tensor->ensure_grad();
  sgd_step({p}, 0.5, 0.9, 0.0);
  CHECK(p->tensor->v[0] == 3.0);
  CHECK(p->tensor->v[1] == 4.0);
}

TEST_CASE("sgd momentum follows the scalar recurrence") {
  auto p = std::make_shared<Parameter>("p", Shape4{1, 1, 1, 1});
  const double lr = 0.05, mom = 0.9, wd = 0.0005;
  const double g1 = 0.7, g2 = -0.3;
  double pv = 2.0, v = 0.0;
  p->tensor->v = {pv};

  p->tensor->ensure_grad();
  p->tensor->g = {g1};
  sgd_step({p}, lr, mom, wd);
  v = mom * v + g1 + wd * pv;
  pv -= lr * v;
  CHECK(std::abs(p->tensor->v[0] - pv) < 1e-12);

  p->tensor->ensure_grad();
  p->tensor->g = {g2};
  sgd_step({p}, lr, mom, wd);
  v = mom * v + g2 + wd * pv;
  pv -= lr * v;
  CHECK(std::abs(p->tensor->v[0] - pv) < 1e-12);
}

TEST_CASE("sgd rejects parameters without gradients by name") {
  auto p = std::make_shared<Parameter>("head.propose.reg.weight", Shape4{1, 1, 1, 1});
  try {
    sgd_step({p}, 0.1, 0.9, 0.0);
    FAIL("expected missing-grad error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("head.propose.reg.weight") != std::string::npos);
  }
}

TEST_CASE("channel slice and concat invert each other") {
  Rng rng(71);
  auto w = random_tensor({6, 2, 3, 3}, rng);
  auto lo = slice_out_channels(nullptr, w, 0, 2);
  auto hi = slice_out_channels(nullptr, w, 2, 4);
  CHECK(lo->shape == Shape4{2, 2, 3, 3});
  CHECK(hi->shape == Shape4{4, 2, 3, 3});
  for (int i = 0; i < 2 * 2 * 9; ++i) CHECK(lo->v[i] == w->v[i]);

  auto a = random_tensor({2, 3, 4, 4}, rng);
  auto bb = random_tensor({2, 2, 4, 4}, rng);
  auto cat = concat_channels(nullptr, {a, bb});
  CHECK(cat->shape == Shape4{2, 5, 4, 4});
  CHECK(cat->at(1, 3, 2, 2) == bb->at(1, 0, 2, 2));
  CHECK(cat->at(0, 1, 1, 1) == a->at(0, 1, 1, 1));
}

TEST_CASE("upsample_nearest_2x replicates each value into a 2x2 block") {
  auto x = make_tensor({1, 1, 2, 2});
  x->v = {1.0, 2.0, 3.0, 4.0};
  auto y = upsample_nearest_2x(nullptr, x);
  CHECK(y->shape == Shape4{1, 1, 4, 4});
  CHECK(y->at(0, 0, 0, 0) == 1.0);
  CHECK(y->at(0, 0, 0, 1) == 1.0);
  CHECK(y->at(0, 0, 1, 1) == 1.0);
  CHECK(y->at(0, 0, 0, 2) == 2.0);
  CHECK(y->at(0, 0, 3, 3) == 4.0);
  CHECK(y->at(0, 0, 2, 1) == 3.0);
}
