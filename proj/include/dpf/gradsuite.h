#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dpf {

struct GradcheckEntry {
  std::string op;
  /// Worst relative error over every case and coordinate checked for `op`.
  double worst = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  /// Negative control: the conv2d cases scale their backward by 1.5.
  bool corrupt_conv_backward = false;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  /// One entry per differentiable op and loss, in a fixed order.
  std::vector<GradcheckEntry> entries;
  bool passed() const;
};

/// Central finite differences in f64 over every differentiable op and both
/// loss stacks. Identity-forward gradient manipulators (stop_gradient,
/// scale_grad) are excluded: their backward disagrees with differences by design.
GradcheckReport run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace dpf
