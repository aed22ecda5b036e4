#pragma once

#include <cmath>
#include <vector>

#include "dpf/ops.h"
#include "dpf/random.h"
#include "dpf/tensor.h"

namespace dpf::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, DType dtype = DType::kF64, double lo = -1.0,
                            double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, dtype);
}

/// Distinct values spaced well apart, shuffled; keeps max-pool away from ties.
inline Tensor distinct_tensor(Shape shape, Rng& rng) {
  const auto n = static_cast<std::size_t>(shape.numel());
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i) * 0.01 - 0.5;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor::from_values(shape, v, DType::kF64);
}

/// Six nested loops, straight from the definition of a strided, dilated,
/// zero-padded cross-correlation.
inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                      int pad, int dil, Shape* out_shape) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::int64_t k = ws.h;
  const std::int64_t ho = (xs.h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const std::int64_t wo = (xs.w + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  *out_shape = {xs.n, ws.n, ho, wo};
  std::vector<double> out(static_cast<std::size_t>(out_shape->numel()), 0.0);
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t co = 0; co < ws.n; ++co)
      for (std::int64_t oh = 0; oh < ho; ++oh)
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          double acc = b.defined() ? b.at(co) : 0.0;
          for (std::int64_t ci = 0; ci < xs.c; ++ci)
            for (std::int64_t i = 0; i < k; ++i)
              for (std::int64_t j = 0; j < k; ++j) {
                const std::int64_t ih = oh * stride - pad + i * dil;
                const std::int64_t iw = ow * stride - pad + j * dil;
                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                acc += x.at(n, ci, ih, iw) * w.at(co, ci, i, j);
              }
          out[static_cast<std::size_t>(((n * ws.n + co) * ho + oh) * wo + ow)] = acc;
        }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

/// Weighted sum with fixed pseudo-random weights: a scalar probe whose
/// gradient is generic (unlike a plain sum, which cancels symmetric terms).
inline Tensor probe(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w = random_tensor(t.shape(), rng, t.dtype(), 0.5, 1.5);
  return sum(mul(t, w));
}

}  // namespace dpf::testing
