#include "dpf/blocks.h"

#include <stdexcept>
#include <string>

namespace dpf {
namespace {

void require_odd(int kernel, const char* what) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument(std::string(what) + ": kernel must be odd, got " +
                                std::to_string(kernel));
  }
}

void require_channels(const Tensor& x, std::int64_t expected, const char* what) {
  if (x.shape().c != expected) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) +
                     " input channels, got " + std::to_string(x.shape().c));
  }
}

void require_spatial(const Tensor& x, const char* what) {
  if (x.shape().h < 1 || x.shape().w < 1) {
    throw ShapeError(std::string(what) + ": empty spatial extent");
  }
}

std::array<Tensor, 3> serial_pools(const Tensor& x, int k) {
  const int pad = k / 2;
  Tensor p1 = maxpool2d(x, k, 1, pad);
  Tensor p2 = maxpool2d(p1, k, 1, pad);
  Tensor p3 = maxpool2d(p2, k, 1, pad);
  return {p1, p2, p3};
}

}  // namespace

TDConv::TDConv(std::int64_t in_ch, std::int64_t out_ch, int kernel, Dilations dilations, Rng& rng,
               DType dtype)
    : dilations_(dilations) {
  require_odd(kernel, "TDConv");
  for (int d : dilations) {
    if (d < 1) throw std::invalid_argument("TDConv: dilation must be >= 1");
  }
  conv_ = register_module("conv", std::make_unique<Conv2d>(ConvSpec{in_ch, out_ch, kernel, 1, 1},
                                                           false, rng, dtype));
  bn_ = register_module("bn", std::make_unique<BatchNorm2d>(out_ch, dtype));
}

Tensor TDConv::forward(const Tensor& x) {
  require_channels(x, conv_->spec().in_ch, "TDConv");
  Tensor acc = conv_->forward_dilated(x, dilations_[0]);
  acc = add(acc, conv_->forward_dilated(x, dilations_[1]));
  acc = add(acc, conv_->forward_dilated(x, dilations_[2]));
  return silu(bn_->forward(scale(acc, 1.0 / 3.0)));
}

Sppf::Sppf(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, DType dtype, int pool_kernel,
           int input_kernel)
    : pool_kernel_(pool_kernel) {
  require_odd(pool_kernel, "SPPF pool");
  require_odd(input_kernel, "SPPF input conv");
  const std::int64_t hidden = out_ch / 2;
  if (hidden < 1) throw std::invalid_argument("SPPF: out_ch must be >= 2");
  cv1_ = register_module(
      "cv1", std::make_unique<ConvBlock>(ConvSpec{in_ch, hidden, input_kernel, 1, 1}, rng, dtype));
  cv2_ = register_module(
      "cv2", std::make_unique<ConvBlock>(ConvSpec{4 * hidden, out_ch, 1, 1, 1}, rng, dtype));
}

SppfTrace Sppf::forward_traced(const Tensor& x) {
  require_spatial(x, "SPPF");
  require_channels(x, cv1_->conv().spec().in_ch, "SPPF");
  SppfTrace t;
  t.reduced = cv1_->forward(x);
  t.pooled = serial_pools(t.reduced, pool_kernel_);
  const Tensor parts[] = {t.reduced, t.pooled[0], t.pooled[1], t.pooled[2]};
  t.out = cv2_->forward(concat_channels(parts));
  return t;
}

TdSppf::TdSppf(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, DType dtype, Dilations dilations,
               int pool_kernel)
    : pool_kernel_(pool_kernel) {
  require_odd(pool_kernel, "TDSPPF pool");
  const std::int64_t hidden = out_ch / 2;
  if (hidden < 1) throw std::invalid_argument("TDSPPF: out_ch must be >= 2");
  cv1_ = register_module("cv1", std::make_unique<TDConv>(in_ch, hidden, 3, dilations, rng, dtype));
  cv2_ = register_module(
      "cv2", std::make_unique<ConvBlock>(ConvSpec{4 * hidden, out_ch, 1, 1, 1}, rng, dtype));
}

SppfTrace TdSppf::forward_traced(const Tensor& x) {
  require_spatial(x, "TDSPPF");
  SppfTrace t;
  t.reduced = cv1_->forward(x);
  t.pooled = serial_pools(t.reduced, pool_kernel_);
  const Tensor parts[] = {t.reduced, t.pooled[0], t.pooled[1], t.pooled[2]};
  t.out = cv2_->forward(concat_channels(parts));
  return t;
}

Tensor deformable_forward(const Tensor& x, const Conv2d& offset_predictor, const Conv2d& main) {
  require_channels(x, main.spec().in_ch, "deformable conv");
  const int k = main.spec().kernel;
  Tensor offsets = offset_predictor.forward(x);
  return deform_conv2d(x, offsets, main.weight(), main.bias(), (k - 1) / 2);
}

namespace {

std::unique_ptr<Conv2d> make_offset_predictor(std::int64_t in_ch, int kernel, Rng& rng,
                                              DType dtype) {
  auto conv = std::make_unique<Conv2d>(
      ConvSpec{in_ch, 2 * static_cast<std::int64_t>(kernel) * kernel, kernel, 1, 1}, true, rng,
      dtype);
  conv->weight().copy_values_from(Tensor::zeros(conv->weight().shape(), dtype));
  conv->bias().copy_values_from(Tensor::zeros(conv->bias().shape(), dtype));
  conv->set_lr_scale(kOffsetLrScale);
  return conv;
}

}  // namespace

DeformConv::DeformConv(std::int64_t in_ch, std::int64_t out_ch, int kernel, bool with_bias,
                       Rng& rng, DType dtype) {
  require_odd(kernel, "DeformConv");
  offset_ = register_module("offset", make_offset_predictor(in_ch, kernel, rng, dtype));
  conv_ = register_module(
      "conv", std::make_unique<Conv2d>(ConvSpec{in_ch, out_ch, kernel, 1, 1}, with_bias, rng, dtype));
}

Tensor DeformConv::forward(const Tensor& x) { return deformable_forward(x, *offset_, *conv_); }

FuseBlock::FuseBlock(std::int64_t in_ch, std::int64_t out_ch, bool deformable, Rng& rng,
                     DType dtype) {
  if (deformable) offset_ = register_module("offset", make_offset_predictor(in_ch, 3, rng, dtype));
  conv_ = register_module(
      "conv", std::make_unique<Conv2d>(ConvSpec{in_ch, out_ch, 3, 1, 1}, false, rng, dtype));
  bn_ = register_module("bn", std::make_unique<BatchNorm2d>(out_ch, dtype));
}

Tensor FuseBlock::forward(const Tensor& x) {
  Tensor y = offset_ ? deformable_forward(x, *offset_, *conv_) : conv_->forward(x);
  return silu(bn_->forward(y));
}

PathAggregationNeck::PathAggregationNeck(const NeckConfig& config, Rng& rng, DType dtype)
    : config_(config) {
  const std::int64_t w = config.width;
  if (w < 2) throw std::invalid_argument("neck width must be >= 2");
  auto block = [&](const char* name, std::int64_t in, int k, int stride) {
    return register_module(name, std::make_unique<ConvBlock>(ConvSpec{in, w, k, stride, 1}, rng,
                                                             dtype));
  };
  auto fuse = [&](const char* name) {
    return register_module(name, std::make_unique<FuseBlock>(2 * w, w, config.deformable, rng,
                                                             dtype));
  };
  lat3_ = block("lat3", config.in_channels[0], 1, 1);
  lat4_ = block("lat4", config.in_channels[1], 1, 1);
  lat5_ = block("lat5", config.in_channels[2], 1, 1);
  fuse_[0] = fuse("fuse_up0");
  fuse_[1] = fuse("fuse_up1");
  down0_ = block("down0", w, 3, 2);
  fuse_[2] = fuse("fuse_down0");
  down1_ = block("down1", w, 3, 2);
  fuse_[3] = fuse("fuse_down1");
  if (config.tdconv) {
    td_p3_ = register_module("td_p3", std::make_unique<TDConv>(w, w, 3, config.dilations, rng, dtype));
    td_p4_ = register_module("td_p4", std::make_unique<TDConv>(w, w, 3, config.dilations, rng, dtype));
  } else {
    post_p3_ = block("post_p3", w, 3, 1);
    post_p4_ = block("post_p4", w, 3, 1);
  }
  if (config.tdsppf) {
    tdsppf_ = register_module("tdsppf",
                              std::make_unique<TdSppf>(w, w, rng, dtype, config.dilations));
  } else {
    sppf_ = register_module("sppf", std::make_unique<Sppf>(w, w, rng, dtype, 5,
                                                           config.sppf_input_kernel));
  }
}

void PathAggregationNeck::set_dilations(Dilations d) {
  config_.dilations = d;
  if (td_p3_) td_p3_->set_dilations(d);
  if (td_p4_) td_p4_->set_dilations(d);
  if (tdsppf_) tdsppf_->input_block().set_dilations(d);
}

PyramidOutputs PathAggregationNeck::forward(const Tensor& c3, const Tensor& c4, const Tensor& c5) {
  const Shape s3 = c3.shape(), s4 = c4.shape(), s5 = c5.shape();
  if (s3.n != s4.n || s4.n != s5.n) throw ShapeError("neck: batch sizes differ");
  if (s3.h != 2 * s4.h || s3.w != 2 * s4.w || s4.h != 2 * s5.h || s4.w != 2 * s5.w) {
    throw ShapeError("neck: inputs must form a 2x pyramid, got " + s3.str() + ", " + s4.str() +
                     ", " + s5.str());
  }
  require_channels(c3, config_.in_channels[0], "neck C3");
  require_channels(c4, config_.in_channels[1], "neck C4");
  require_channels(c5, config_.in_channels[2], "neck C5");

  auto cat = [](const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return concat_channels(parts);
  };
  const Tensor l5 = lat5_->forward(c5);
  const Tensor l4 = lat4_->forward(c4);
  const Tensor l3 = lat3_->forward(c3);
  const Tensor f4 = fuse_[0]->forward(cat(nearest_upsample2x(l5), l4));
  const Tensor n3 = fuse_[1]->forward(cat(nearest_upsample2x(f4), l3));
  const Tensor n4 = fuse_[2]->forward(cat(down0_->forward(n3), f4));
  const Tensor n5 = fuse_[3]->forward(cat(down1_->forward(n4), l5));

  PyramidOutputs out;
  out.p3 = td_p3_ ? td_p3_->forward(n3) : post_p3_->forward(n3);
  out.p4 = td_p4_ ? td_p4_->forward(n4) : post_p4_->forward(n4);
  out.p5 = tdsppf_ ? tdsppf_->forward(n5) : sppf_->forward(n5);
  return out;
}

}  // namespace dpf
