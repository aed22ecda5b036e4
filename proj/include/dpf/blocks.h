#pragma once

#include <array>
#include <memory>

#include "dpf/nn.h"

namespace dpf {

using Dilations = std::array<int, 3>;
inline constexpr Dilations kDefaultDilations = {1, 2, 3};

/// Spatial extent covered by one k x k kernel at dilation d: d*(k-1)+1.
/// A single 3x3 layer at d = 2 spans 5x5; 7x7 needs a preceding 3x3 layer.
constexpr int dilated_kernel_span(int kernel, int dilation) {
  return dilation * (kernel - 1) + 1;
}

/// Trident dilated convolution: one k x k weight applied at three dilation
/// rates, the three branch outputs averaged, then a shared batch norm and SiLU.
/// Spatial size is preserved (padding d*(k-1)/2 per branch).
class TDConv : public Module {
 public:
  TDConv(std::int64_t in_ch, std::int64_t out_ch, int kernel, Dilations dilations, Rng& rng,
         DType dtype);
  Tensor forward(const Tensor& x);

  Conv2d& conv() { return *conv_; }
  BatchNorm2d& bn() { return *bn_; }
  const Dilations& dilations() const { return dilations_; }
  void set_dilations(Dilations d) { dilations_ = d; }

 private:
  Conv2d* conv_;
  BatchNorm2d* bn_;
  Dilations dilations_;
};

/// Intermediate maps of an SPPF-style forward, exposed for inspection.
struct SppfTrace {
  Tensor reduced;
  std::array<Tensor, 3> pooled;
  Tensor out;
};

/// Spatial pyramid pooling, fast variant: input conv to out/2 channels, three
/// serial k x k stride-1 max pools, concat (identity, pool1, pool2, pool3),
/// 1x1 output conv. `input_kernel` lets the input conv be wider than 1x1.
class Sppf : public Module {
 public:
  Sppf(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, DType dtype, int pool_kernel = 5,
       int input_kernel = 1);
  Tensor forward(const Tensor& x) { return forward_traced(x).out; }
  SppfTrace forward_traced(const Tensor& x);

  ConvBlock& input_block() { return *cv1_; }
  ConvBlock& output_block() { return *cv2_; }
  int pool_kernel() const { return pool_kernel_; }

 private:
  ConvBlock* cv1_;
  ConvBlock* cv2_;
  int pool_kernel_;
};

/// SPPF whose input conv is a 3x3 TDConv. Same shape contract as Sppf.
class TdSppf : public Module {
 public:
  TdSppf(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, DType dtype,
         Dilations dilations = kDefaultDilations, int pool_kernel = 5);
  Tensor forward(const Tensor& x) { return forward_traced(x).out; }
  SppfTrace forward_traced(const Tensor& x);

  TDConv& input_block() { return *cv1_; }
  ConvBlock& output_block() { return *cv2_; }

 private:
  TDConv* cv1_;
  ConvBlock* cv2_;
  int pool_kernel_;
};

/// Learning-rate multiplier of every offset predictor. Offset gradients sum
/// over all input and output channels and grow quickly at full rate.
inline constexpr double kOffsetLrScale = 0.1;

/// Deformable convolution v1: a zero-initialised conv predicts (dy, dx) for
/// every kernel tap at every output location; the main weights are applied to
/// the bilinearly sampled displaced taps. Odd kernel, stride 1, "same" padding.
class DeformConv : public Module {
 public:
  DeformConv(std::int64_t in_ch, std::int64_t out_ch, int kernel, bool with_bias, Rng& rng,
             DType dtype);
  Tensor forward(const Tensor& x);

  Conv2d& offset() { return *offset_; }
  Conv2d& conv() { return *conv_; }

 private:
  Conv2d* offset_;
  Conv2d* conv_;
};

/// Shared by DeformConv and the neck's fuse blocks.
Tensor deformable_forward(const Tensor& x, const Conv2d& offset_predictor, const Conv2d& main);

/// Fusion node of the neck: 3x3 conv (deformable or plain) -> BN -> SiLU.
/// Parameter names: "offset.*" (deformable only), "conv.weight", "bn.*".
class FuseBlock : public Module {
 public:
  FuseBlock(std::int64_t in_ch, std::int64_t out_ch, bool deformable, Rng& rng, DType dtype);
  Tensor forward(const Tensor& x);
  bool deformable() const { return offset_ != nullptr; }
  Conv2d* offset() { return offset_; }

 private:
  Conv2d* offset_ = nullptr;
  Conv2d* conv_;
  BatchNorm2d* bn_;
};

struct NeckConfig {
  std::array<std::int64_t, 3> in_channels{};  // C3, C4, C5
  std::int64_t width = 64;
  bool tdconv = true;
  bool tdsppf = true;
  bool deformable = true;
  Dilations dilations = kDefaultDilations;
  /// Input conv kernel of the plain SPPF used when tdsppf is off.
  int sppf_input_kernel = 1;
};

struct PyramidOutputs {
  Tensor p3;
  Tensor p4;
  Tensor p5;
};

/// Path-aggregation neck: lateral 1x1 convs, a top-down path (upsample,
/// concat, fuse), a bottom-up path (stride-2 conv, concat, fuse), TDConv
/// post-blocks producing P3 and P4, and TDSPPF producing P5. Every fuse node
/// is deformable when `deformable` is set; the other flags fall back to plain
/// 3x3 conv blocks and SPPF respectively.
class PathAggregationNeck : public Module {
 public:
  PathAggregationNeck(const NeckConfig& config, Rng& rng, DType dtype);
  PyramidOutputs forward(const Tensor& c3, const Tensor& c4, const Tensor& c5);

  const NeckConfig& config() const { return config_; }
  /// Every fuse block, top-down first.
  std::array<FuseBlock*, 4> fuse_blocks() const { return fuse_; }
  /// Overrides the dilation rates of every TDConv in the neck (P3/P4 posts and
  /// the TDSPPF input conv).
  void set_dilations(Dilations d);

 private:
  NeckConfig config_;
  ConvBlock* lat3_;
  ConvBlock* lat4_;
  ConvBlock* lat5_;
  std::array<FuseBlock*, 4> fuse_{};
  ConvBlock* down0_;
  ConvBlock* down1_;
  TDConv* td_p3_ = nullptr;
  TDConv* td_p4_ = nullptr;
  ConvBlock* post_p3_ = nullptr;
  ConvBlock* post_p4_ = nullptr;
  TdSppf* tdsppf_ = nullptr;
  Sppf* sppf_ = nullptr;
};

}  // namespace dpf
