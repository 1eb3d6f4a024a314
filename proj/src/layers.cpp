#include "padet/layers.hpp"

#include <cmath>

namespace padet {

ConvBlock::ConvBlock(const std::string& name, int cin, int cout, int k, int stride_,
                     int pad_, int dilation_, bool bn, bool relu,
                     std::vector<ParamRef>& registry)
    : stride(stride_), pad(pad_), dilation(dilation_), has_bn(bn), has_relu(relu) {
  w = std::make_shared<Parameter>(name + ".weight", Shape4{cout, cin, k, k});
  registry.push_back(w);
  if (bn) {
    bn_gamma = std::make_shared<Parameter>(name + ".bn.gamma", Shape4{1, cout, 1, 1});
    bn_beta = std::make_shared<Parameter>(name + ".bn.beta", Shape4{1, cout, 1, 1});
    registry.push_back(bn_gamma);
    registry.push_back(bn_beta);
    bn_mean.assign(cout, 0.0);
    bn_var.assign(cout, 1.0);
  } else {
    b = std::make_shared<Parameter>(name + ".bias", Shape4{1, cout, 1, 1});
    registry.push_back(b);
  }
}

TensorRef ConvBlock::forward(Tape* tape, const TensorRef& x, bool training) {
  TensorRef y = conv2d(tape, x, w->tensor, b ? b->tensor : nullptr, stride, pad, dilation);
  if (has_bn) {
    y = batch_norm(tape, y, bn_gamma->tensor, bn_beta->tensor, bn_mean, bn_var, training);
  }
  if (has_relu) y = relu(tape, y);
  return y;
}

void ConvBlock::init_gaussian(Rng& rng, double stddev) {
  for (double& v : w->tensor->v) v = rng.normal(0.0, stddev);
  if (b) {
    for (double& v : b->tensor->v) v = 0.0;
  }
  if (has_bn) {
    for (double& v : bn_gamma->tensor->v) v = 1.0;
    for (double& v : bn_beta->tensor->v) v = 0.0;
  }
}

void ConvBlock::init_he(Rng& rng) {
  const Shape4 s = w->tensor->shape;
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  init_gaussian(rng, std::sqrt(2.0 / fan_in));
}

}  // namespace padet
