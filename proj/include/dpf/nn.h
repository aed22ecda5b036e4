#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpf/ops.h"
#include "dpf/random.h"
#include "dpf/tensor.h"

namespace dpf {

/// A named tensor owned by a module. Non-trainable entries hold running
/// statistics and travel through checkpoints alongside the weights.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  /// Multiplies the optimizer learning rate for this entry.
  double lr_scale = 1.0;
};

class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// Every parameter in the subtree, depth-first in registration order, with
  /// dotted path names. Throws if two entries resolve to the same name.
  std::vector<Parameter> parameters() const;
  std::vector<Parameter> trainable_parameters() const;
  std::int64_t parameter_count(bool trainable_only = true) const;

  /// Drops the gradients of every parameter in the subtree.
  void zero_grad();

  /// Sets the learning-rate multiplier of every parameter in the subtree.
  void set_lr_scale(double scale);

  void train(bool on = true);
  void eval() { train(false); }
  bool training() const { return training_; }

 protected:
  Tensor register_parameter(std::string name, Tensor tensor, bool trainable = true);

  template <typename M>
  M* register_module(std::string name, std::unique_ptr<M> module) {
    M* raw = module.get();
    add_child(std::move(name), std::move(module));
    return raw;
  }

 private:
  void add_child(std::string name, std::unique_ptr<Module> module);
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;

  std::vector<Parameter> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
  bool training_ = true;
};

/// Kaiming-uniform initialisation, bound sqrt(6 / fan_in).
Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng, DType dtype);

struct ConvSpec {
  std::int64_t in_ch = 0;
  std::int64_t out_ch = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
};

class Conv2d : public Module {
 public:
  Conv2d(const ConvSpec& spec, bool with_bias, Rng& rng, DType dtype);
  Tensor forward(const Tensor& x) const;
  /// Runs the shared weights at a different dilation with matching "same" padding.
  Tensor forward_dilated(const Tensor& x, int dilation) const;

  const ConvSpec& spec() const { return spec_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Tensor weight_;
  Tensor bias_;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d(std::int64_t channels, DType dtype);
  Tensor forward(const Tensor& x);

 private:
  Tensor weight_;
  Tensor bias_;
  Tensor running_mean_;
  Tensor running_var_;
};

/// conv (no bias) -> batch norm -> SiLU, "same" padding for stride 1.
class ConvBlock : public Module {
 public:
  ConvBlock(const ConvSpec& spec, Rng& rng, DType dtype);
  Tensor forward(const Tensor& x);

  Conv2d& conv() { return *conv_; }
  BatchNorm2d& bn() { return *bn_; }
  std::int64_t out_channels() const { return spec_.out_ch; }

 private:
  ConvSpec spec_;
  Conv2d* conv_;
  BatchNorm2d* bn_;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in, std::int64_t out, Rng& rng, DType dtype);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor weight_;
  Tensor bias_;
};

/// Finds a parameter by full dotted name; throws std::out_of_range if absent.
Tensor find_parameter(const Module& module, const std::string& name);

}  // namespace dpf
