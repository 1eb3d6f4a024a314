#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "padet/tensor.hpp"

namespace padet {

// Recorded-tape reverse mode. Ops append a backward closure while computing
// their forward value; backward() replays the closures in reverse, then
// clears the tape. A second backward without a new forward is rejected.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  void backward(const TensorRef& loss);
  // Drops the recorded forward without backpropagating (zero-loss steps).
  void abandon() { steps_.clear(); }
  size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// Learnable tensor plus SGD momentum state. Names are unique within a model.
struct Parameter {
  std::string name;
  TensorRef tensor;
  std::vector<double> momentum;

  Parameter(std::string n, Shape4 s)
      : name(std::move(n)),
        tensor(make_tensor(s)),
        momentum(static_cast<size_t>(s.numel()), 0.0) {}
};

using ParamRef = std::shared_ptr<Parameter>;

// v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v.
// Grads are consumed (deallocated); a parameter with no grad is rejected.
void sgd_step(const std::vector<ParamRef>& params, double lr, double momentum,
              double weight_decay);

// All ops run eagerly; pass tape == nullptr for a pure forward pass.

TensorRef conv2d(Tape* tape, const TensorRef& input, const TensorRef& weight,
                 const TensorRef& bias, int stride = 1, int pad = 0, int dilation = 1);

// Eq-style offseted convolution: stride 1, pad k/2, sampling points displaced
// by the anchor's offsets and read with bilinear interpolation.
// `offset_grads` additionally backpropagates into the offset field.
TensorRef offset_conv2d(Tape* tape, const TensorRef& input, const TensorRef& weight,
                        const TensorRef& bias, const OffsetField& offsets,
                        int anchor_index, bool offset_grads = false);

TensorRef relu(Tape* tape, const TensorRef& x);
TensorRef add(Tape* tape, const TensorRef& a, const TensorRef& b);
TensorRef scale(Tape* tape, const TensorRef& x, double k);
TensorRef upsample_nearest_2x(Tape* tape, const TensorRef& x);
TensorRef reduce_sum(Tape* tape, const TensorRef& x);

// Contiguous output-channel block of a (Cout,Cin,k,k) weight, as its own tensor.
TensorRef slice_out_channels(Tape* tape, const TensorRef& w, int begin, int count);
// Channel block of a (1,C,1,1) bias vector.
TensorRef slice_bias(Tape* tape, const TensorRef& b, int begin, int count);
// Concatenation along the channel axis; inputs share (N,H,W).
TensorRef concat_channels(Tape* tape, const std::vector<TensorRef>& parts);

// Batch normalization over (N,H,W) per channel. Training mode normalizes by
// batch statistics and updates the running buffers in place; eval mode uses
// the running buffers.
TensorRef batch_norm(Tape* tape, const TensorRef& x, const TensorRef& gamma,
                     const TensorRef& beta, std::vector<double>& running_mean,
                     std::vector<double>& running_var, bool training,
                     double momentum = 0.1, double eps = 1e-5);

// One classification site inside a logits map: `num_classes` consecutive
// channels starting at `ch` of image n at (y, x), with integer target.
struct ClsEntry {
  int n = 0, ch = 0, y = 0, x = 0;
  int num_classes = 0;
  int target = 0;
};

// Sum of softmax cross-entropy losses over the gathered entries.
TensorRef softmax_ce_sum(Tape* tape, const TensorRef& logits,
                         const std::vector<ClsEntry>& entries);

// One regression site: four consecutive channels (dx,dy,dw,dh) starting at
// `ch` of image n at (y, x). When `clip` is set the center components pass
// through tanh scaled by (sx, sy) before the Smooth-L1 against `target`.
struct RegEntry {
  int n = 0, ch = 0, y = 0, x = 0;
  std::array<double, 4> target{};
  bool clip = false;
  double sx = 0.0, sy = 0.0;
};

TensorRef smooth_l1_sum(Tape* tape, const TensorRef& deltas,
                        const std::vector<RegEntry>& entries);

}  // namespace padet
