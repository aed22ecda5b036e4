#include "dpf/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpf/random.h"

namespace dpf {

double finite_diff_check_leaves(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                                const FiniteDiffOptions& options) {
  for (const Tensor& t : leaves) {
    if (t.dtype() != DType::kF64) {
      throw std::invalid_argument("finite_diff_check requires f64 tensors");
    }
  }
  std::vector<Tensor> work = leaves;
  std::vector<bool> had_flag;
  for (Tensor& t : work) {
    had_flag.push_back(t.requires_grad());
    t.zero_grad();
    t.set_requires_grad(true);
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : work) analytic.push_back(t.grad_values());

  Rng rng(options.seed);
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < work.size(); ++k) {
    Tensor& t = work[k];
    auto data = t.data<double>();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > options.max_coords) {
      for (std::size_t i = 0; i < options.max_coords; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords);
    }
    for (std::size_t idx : coords) {
      const double orig = data[idx];
      data[idx] = orig + options.step;
      const double up = f().item();
      data[idx] = orig - options.step;
      const double down = f().item();
      data[idx] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (std::size_t k = 0; k < work.size(); ++k) {
    work[k].zero_grad();
    work[k].set_requires_grad(had_flag[k]);
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& t,
                         const FiniteDiffOptions& options) {
  Tensor x = t.clone();
  return finite_diff_check_leaves([&] { return f(x); }, {x}, options);
}

}  // namespace dpf
