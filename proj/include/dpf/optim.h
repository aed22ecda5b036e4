#pragma once

#include <vector>

#include "dpf/nn.h"

namespace dpf {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.937;
  double weight_decay = 0.0;
};

/// Heavy-ball SGD: v <- momentum*v + g (+ wd*w); w <- w - lr*v.
class Sgd {
 public:
  Sgd(std::vector<Parameter> params, SgdOptions options);
  /// Throws std::invalid_argument naming the first trainable parameter
  /// without a gradient.
  void step();
  void zero_grad();
  SgdOptions& options() { return options_; }

 private:
  std::vector<Parameter> params_;
  std::vector<std::vector<double>> velocity_;
  SgdOptions options_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Parameter> params, AdamOptions options);
  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

}  // namespace dpf
