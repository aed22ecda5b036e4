#include "dpf/nn.h"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace dpf {

Tensor Module::register_parameter(std::string name, Tensor tensor, bool trainable) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
  tensor.set_requires_grad(trainable);
  params_.push_back({std::move(name), tensor, trainable});
  return tensor;
}

void Module::add_child(std::string name, std::unique_ptr<Module> module) {
  for (const auto& c : children_) {
    if (c.first == name) throw std::invalid_argument("duplicate submodule name '" + name + "'");
  }
  module->train(training_);
  children_.emplace_back(std::move(name), std::move(module));
}

void Module::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  for (const auto& p : params_) out.push_back({prefix + p.name, p.tensor, p.trainable, p.lr_scale});
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

std::vector<Parameter> Module::parameters() const {
  std::vector<Parameter> out;
  collect("", out);
  std::unordered_set<std::string> names;
  for (const auto& p : out) {
    if (!names.insert(p.name).second) {
      throw std::logic_error("parameter name '" + p.name + "' is not unique");
    }
  }
  return out;
}

std::vector<Parameter> Module::trainable_parameters() const {
  std::vector<Parameter> out;
  for (auto& p : parameters()) {
    if (p.trainable) out.push_back(std::move(p));
  }
  return out;
}

std::int64_t Module::parameter_count(bool trainable_only) const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) {
    if (!trainable_only || p.trainable) total += p.tensor.numel();
  }
  return total;
}

void Module::set_lr_scale(double scale) {
  if (!(scale >= 0)) throw std::invalid_argument("set_lr_scale: scale must be >= 0");
  for (auto& p : params_) p.lr_scale = scale;
  for (auto& [name, child] : children_) child->set_lr_scale(scale);
}

void Module::zero_grad() {
  for (Parameter& p : parameters()) p.tensor.zero_grad();
}

void Module::train(bool on) {
  training_ = on;
  for (auto& c : children_) c.second->train(on);
}

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng, DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values(shape, v, dtype);
}

Conv2d::Conv2d(const ConvSpec& spec, bool with_bias, Rng& rng, DType dtype) : spec_(spec) {
  if (spec.in_ch < 1 || spec.out_ch < 1 || spec.kernel < 1 || spec.stride < 1 ||
      spec.dilation < 1) {
    throw std::invalid_argument("Conv2d: invalid configuration");
  }
  const std::int64_t fan_in = spec.in_ch * spec.kernel * spec.kernel;
  weight_ = register_parameter(
      "weight", kaiming_uniform({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel}, fan_in,
                                rng, dtype));
  if (with_bias) bias_ = register_parameter("bias", Tensor::zeros({1, spec.out_ch, 1, 1}, dtype));
}

Tensor Conv2d::forward(const Tensor& x) const { return forward_dilated(x, spec_.dilation); }

Tensor Conv2d::forward_dilated(const Tensor& x, int dilation) const {
  Conv2dOptions o;
  o.stride = spec_.stride;
  o.dilation = dilation;
  o.padding = dilation * (spec_.kernel - 1) / 2;
  return conv2d(x, weight_, bias_, o);
}

BatchNorm2d::BatchNorm2d(std::int64_t channels, DType dtype) {
  const Shape s{1, channels, 1, 1};
  weight_ = register_parameter("weight", Tensor::full(s, 1.0, dtype));
  bias_ = register_parameter("bias", Tensor::zeros(s, dtype));
  running_mean_ = register_parameter("running_mean", Tensor::zeros(s, dtype), false);
  running_var_ = register_parameter("running_var", Tensor::full(s, 1.0, dtype), false);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  BatchNormOptions o;
  o.training = training();
  return batchnorm2d(x, weight_, bias_, running_mean_, running_var_, o);
}

ConvBlock::ConvBlock(const ConvSpec& spec, Rng& rng, DType dtype) : spec_(spec) {
  conv_ = register_module("conv", std::make_unique<Conv2d>(spec, false, rng, dtype));
  bn_ = register_module("bn", std::make_unique<BatchNorm2d>(spec.out_ch, dtype));
}

Tensor ConvBlock::forward(const Tensor& x) { return silu(bn_->forward(conv_->forward(x))); }

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, DType dtype) {
  weight_ = register_parameter("weight", kaiming_uniform({out, in, 1, 1}, in, rng, dtype));
  bias_ = register_parameter("bias", Tensor::zeros({1, out, 1, 1}, dtype));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight_, bias_); }

Tensor find_parameter(const Module& module, const std::string& name) {
  for (const auto& p : module.parameters()) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

}  // namespace dpf
