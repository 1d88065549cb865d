#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geoadapt/rng.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::nn {

// Layouts: activations [B,H,W,C], conv weights [kh,kw,Cin,Cout], bias [Cout].
// Convolutions use ceil-mode "same" padding: out = ceil(in/stride), zero
// padded, split evenly with the extra row/column at the bottom/right. For
// even inputs this keeps stride-2 k4 windows mirror-symmetric, so flipping
// the input exactly flips the output.

struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  Tensor w;  // [k,k,in,out]
  Tensor b;  // [out]

  Conv2d() = default;
  Conv2d(int in, int out, int k, int s);

  /// He fan-in initialization (normal, stddev sqrt(2/fan_in)), zero biases.
  void init(Rng& rng);

  std::size_t param_count() const { return w.size() + b.size(); }
};

struct Conv2dGrads {
  Tensor dw;
  Tensor db;
};

Tensor conv2d_forward(const Conv2d& layer, const Tensor& x);

/// Any of dx / grads may be null when the caller does not need them.
void conv2d_backward(const Conv2d& layer, const Tensor& x, const Tensor& dy, Tensor* dx,
                     Conv2dGrads* grads);

Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope);

/// Bilinear x2 upsample with half-pixel sampling (out (i+0.5)/2 - 0.5),
/// edge-clamped. Linear, so the backward pass is the exact transpose.
Tensor upsample2x_forward(const Tensor& x);
Tensor upsample2x_backward(const Tensor& dy, int in_h, int in_w);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels_backward(const Tensor& dy, int a_channels, Tensor* da, Tensor* db);

inline int conv_out_dim(int in, int stride) { return (in + stride - 1) / stride; }

}  // namespace geoadapt::nn
