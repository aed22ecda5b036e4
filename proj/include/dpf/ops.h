#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpf/tensor.h"

namespace dpf {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// Spatial output extent of a convolution/pooling window sweep.
std::int64_t conv_output_size(std::int64_t in, int kernel, int stride, int padding,
                              int dilation);

/// Cross-correlation with zero padding. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options = {});

/// Max pooling with -inf padding. Backward routes to the first maximum in
/// row-major window order.
Tensor maxpool2d(const Tensor& input, int kernel, int stride, int padding);

/// Samples `feature` (N,C,H,W) at fractional coordinates `points` (N,2,Ho,Wo),
/// channel 0 holding y and channel 1 holding x. Neighbours outside the feature
/// extent contribute zero. Output is (N,C,Ho,Wo).
Tensor bilinear_sample(const Tensor& feature, const Tensor& points);

/// Deformable convolution (no modulation), stride 1. `offset` is
/// (N, 2*k*k, Ho, Wo) with (dy, dx) pairs per kernel tap in row-major tap order.
Tensor deform_conv2d(const Tensor& input, const Tensor& offset, const Tensor& weight,
                     const Tensor& bias, int padding, int dilation = 1);

/// Identity forward; the result is detached from the tape.
Tensor stop_gradient(const Tensor& input);

/// Identity forward; multiplies the incoming gradient by `factor` on backward.
Tensor scale_grad(const Tensor& input, double factor);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor concat_channels(std::span<const Tensor> parts);
Tensor nearest_upsample2x(const Tensor& input);
/// (M,K,1,1) x (K,N,1,1) -> (M,N,1,1).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x (N,Din,1,1), weight (Dout,Din,1,1), bias (1,Dout,1,1) or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Normalizes along the channel axis: v / max(|v|, eps).
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization. In training mode the running statistics
/// are updated in place (unbiased variance), in eval mode they are used.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, BatchNormOptions options);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over H and W: (N,C,H,W) -> (N,C,1,1).
Tensor spatial_mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Picks flat elements; result is (indices.size(),1,1,1).
Tensor gather(const Tensor& x, std::span<const std::int64_t> indices);

/// Summed binary cross-entropy of probabilities against targets in [0,1].
/// Probabilities are clamped to [eps, 1-eps]; clamped entries pass no gradient.
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets, double eps = 1e-7);

}  // namespace dpf
