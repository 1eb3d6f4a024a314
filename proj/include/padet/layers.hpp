#pragma once

#include <string>
#include <vector>

#include "padet/autograd.hpp"
#include "padet/rng.hpp"

namespace padet {

// Convolution with optional batch norm and ReLU. Parameters register
// themselves into the model-wide list at construction.
struct ConvBlock {
  ParamRef w;
  ParamRef b;  // omitted when batch norm supplies the shift
  ParamRef bn_gamma, bn_beta;
  std::vector<double> bn_mean, bn_var;
  int stride = 1, pad = 0, dilation = 1;
  bool has_bn = false, has_relu = false;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int cin, int cout, int k, int stride_, int pad_,
            int dilation_, bool bn, bool relu, std::vector<ParamRef>& registry);

  TensorRef forward(Tape* tape, const TensorRef& x, bool training);

  // Gaussian weights with the given stddev, zero bias, identity batch norm.
  void init_gaussian(Rng& rng, double stddev);
  // He initialization for ReLU stacks.
  void init_he(Rng& rng);
};

}  // namespace padet
