#include "dpf/optim.h"

#include <cmath>
#include <stdexcept>

namespace dpf {

namespace {

void require_grads(const std::vector<Parameter>& params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw std::invalid_argument("optimizer step: parameter '" + p.name +
                                  "' has no gradient");
    }
  }
}

template <typename F>
void update(Parameter& p, F&& f) {
  Tensor& t = p.tensor;
  const Tensor g = t.grad();
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto w = t.data<T>();
    const auto gv = g.data<T>();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = static_cast<T>(f(i, static_cast<double>(w[i]), static_cast<double>(gv[i])));
    }
  });
}

std::vector<Parameter> only_trainable(std::vector<Parameter> params) {
  std::vector<Parameter> out;
  for (auto& p : params) {
    if (p.trainable) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

Sgd::Sgd(std::vector<Parameter> params, SgdOptions options)
    : params_(only_trainable(std::move(params))), options_(options) {
  for (const auto& p : params_) {
    velocity_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

void Sgd::step() {
  require_grads(params_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& vel = velocity_[k];
    const double lr = options_.lr * params_[k].lr_scale;
    update(params_[k], [&](std::size_t i, double w, double g) {
      g += options_.weight_decay * w;
      vel[i] = options_.momentum * vel[i] + g;
      return w - lr * vel[i];
    });
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Adam::Adam(std::vector<Parameter> params, AdamOptions options)
    : params_(only_trainable(std::move(params))), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

void Adam::step() {
  require_grads(params_);
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& m = m_[k];
    auto& v = v_[k];
    const double lr = options_.lr * params_[k].lr_scale;
    update(params_[k], [&](std::size_t i, double w, double g) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      return w - lr * mh / (std::sqrt(vh) + options_.eps);
    });
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace dpf
