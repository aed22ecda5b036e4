#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpf/tensor.h"

namespace dpf {

struct FiniteDiffOptions {
  double step = 1e-5;
  /// Coordinates checked per tensor; all of them when the tensor is smaller.
  std::size_t max_coords = 64;
  std::uint64_t seed = 0;
};

/// Max over sampled coordinates of
///   |analytic - central difference| / max(|analytic|, |numeric|, 1e-8).
/// `f` must be deterministic and scalar valued; `t` must be f64.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& t,
                         const FiniteDiffOptions& options = {});

/// Same measure over several leaf tensors that `f` closes over (typically
/// module parameters). The tensors' values are perturbed in place and
/// restored; their gradients are cleared before and after.
double finite_diff_check_leaves(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                                const FiniteDiffOptions& options = {});

}  // namespace dpf
