#include "dpf/gradsuite.h"

#include <algorithm>
#include <functional>

#include "dpf/gradcheck.h"
#include "dpf/losses.h"
#include "dpf/ops.h"
#include "dpf/random.h"

namespace dpf {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

namespace {

constexpr DType kF64 = DType::kF64;

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, kF64);
}

/// Well separated, shuffled values: no max-pool ties.
Tensor distinct(Shape shape, Rng& rng) {
  const auto n = static_cast<std::size_t>(shape.numel());
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i) * 0.01 - 0.5;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor::from_values(shape, v, kF64);
}

/// Integer part plus a fraction in [0.2, 0.8]: away from bilinear kinks.
Tensor off_grid(Shape shape, Rng& rng, int lo, int hi) {
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  const auto choices = static_cast<std::uint64_t>(hi - lo + 1);
  for (double& x : v) x = static_cast<double>(lo) + static_cast<double>(rng.below(choices)) + rng.uniform(0.2, 0.8);
  return Tensor::from_values(shape, v, kF64);
}

/// Rows of (cx, cy, w, h) with positive extents.
Tensor boxes(std::int64_t rows, Rng& rng) {
  std::vector<double> v;
  for (std::int64_t i = 0; i < rows; ++i) {
    v.push_back(rng.uniform(0.3, 0.7));
    v.push_back(rng.uniform(0.3, 0.7));
    v.push_back(rng.uniform(0.1, 0.5));
    v.push_back(rng.uniform(0.1, 0.5));
  }
  return Tensor::from_values({rows, 4, 1, 1}, v, kF64);
}

/// Fixed positive weights make the scalar probe's gradient generic.
Tensor probe(const Tensor& t) {
  Rng rng(99);
  return sum(mul(t, uniform(t.shape(), rng, 0.5, 1.5)));
}

struct Case {
  std::string op;
  std::function<double(Rng&)> run;
};

}  // namespace

GradcheckReport run_gradcheck_suite(const GradcheckOptions& options) {
  const FiniteDiffOptions fd{1e-5, 64, options.seed};
  auto leaves = [&](const std::function<Tensor()>& f, const std::vector<Tensor>& ts) {
    return finite_diff_check_leaves(f, ts, fd);
  };
  auto unary = [&](Tensor (*op)(const Tensor&)) {
    return [&, op](Rng& rng) {
      Tensor a = uniform({2, 3, 2, 2}, rng, -2.0, 2.0);
      return leaves([&] { return probe(op(a)); }, {a});
    };
  };

  const std::vector<Case> cases = {
      {"conv2d",
       [&](Rng& rng) {
         double worst = 0;
         for (int dil = 1; dil <= 3; ++dil) {
           for (int stride = 1; stride <= 2; ++stride) {
             Tensor x = uniform({2, 2, 7, 7}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({1, 3, 1, 1}, rng);
             const Conv2dOptions o{.stride = stride, .padding = dil, .dilation = dil};
             auto f = [&] {
               Tensor y = conv2d(x, w, b, o);
               if (options.corrupt_conv_backward) y = scale_grad(y, 1.5);
               return probe(y);
             };
             worst = std::max(worst, leaves(f, {x, w, b}));
           }
         }
         return worst;
       }},
      {"maxpool2d",
       [&](Rng& rng) {
         Tensor x = distinct({1, 2, 6, 6}, rng);
         return std::max(leaves([&] { return probe(maxpool2d(x, 3, 1, 1)); }, {x}),
                         leaves([&] { return probe(maxpool2d(x, 2, 2, 0)); }, {x}));
       }},
      {"bilinear_sample",
       [&](Rng& rng) {
         Tensor f = uniform({1, 3, 5, 5}, rng), p = off_grid({1, 2, 3, 3}, rng, -1, 4);
         return leaves([&] { return probe(bilinear_sample(f, p)); }, {f, p});
       }},
      {"deform_conv2d",
       [&](Rng& rng) {
         double worst = 0;
         for (int dil = 1; dil <= 2; ++dil) {
           Tensor x = uniform({1, 2, 6, 6}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({1, 3, 1, 1}, rng);
           Tensor off = off_grid({1, 18, 6, 6}, rng, -1, 0);
           worst = std::max(worst, leaves([&] { return probe(deform_conv2d(x, off, w, b, dil, dil)); }, {x, off, w, b}));
         }
         return worst;
       }},
      {"batchnorm2d",
       [&](Rng& rng) {
         double worst = 0;
         for (bool training : {true, false}) {
           Tensor x = uniform({3, 2, 3, 3}, rng), g = uniform({1, 2, 1, 1}, rng, 0.5, 1.5), be = uniform({1, 2, 1, 1}, rng);
           Tensor rm = uniform({1, 2, 1, 1}, rng), rv = uniform({1, 2, 1, 1}, rng, 0.5, 2.0);
           auto f = [&] {
             Tensor m = rm.clone(), v = rv.clone();
             return probe(batchnorm2d(x, g, be, m, v, {.training = training}));
           };
           worst = std::max(worst, leaves(f, {x, g, be}));
         }
         return worst;
       }},
      {"silu", unary(silu)},
      {"sigmoid", unary(sigmoid)},
      {"l2_normalize", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(l2_normalize(a)); }, {a});
       }},
      {"add", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(add(a, b)); }, {a, b});
       }},
      {"sub", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(sub(a, b)); }, {a, b});
       }},
      {"mul", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(mul(a, b)); }, {a, b});
       }},
      {"scale", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(scale(a, -2.5)); }, {a});
       }},
      {"add_scalar", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(add_scalar(a, 3.0)); }, {a});
       }},
      {"concat_channels", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng), b = uniform({2, 1, 2, 2}, rng);
         return leaves([&] { return probe(concat_channels(std::vector<Tensor>{a, b})); }, {a, b});
       }},
      {"nearest_upsample2x", [&](Rng& rng) {
         Tensor a = uniform({1, 2, 3, 3}, rng);
         return leaves([&] { return probe(nearest_upsample2x(a)); }, {a});
       }},
      {"matmul", [&](Rng& rng) {
         Tensor a = uniform({3, 4, 1, 1}, rng), b = uniform({4, 2, 1, 1}, rng);
         return leaves([&] { return probe(matmul(a, b)); }, {a, b});
       }},
      {"linear", [&](Rng& rng) {
         Tensor x = uniform({3, 4, 1, 1}, rng), w = uniform({2, 4, 1, 1}, rng), b = uniform({1, 2, 1, 1}, rng);
         return leaves([&] { return probe(linear(x, w, b)); }, {x, w, b});
       }},
      {"sum", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return sum(mul(a, a)); }, {a});
       }},
      {"mean", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return mean(mul(a, a)); }, {a});
       }},
      {"spatial_mean", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 3, 2}, rng);
         return leaves([&] { return probe(spatial_mean(a)); }, {a});
       }},
      {"reshape", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         return leaves([&] { return probe(reshape(a, {1, 24, 1, 1})); }, {a});
       }},
      {"gather", [&](Rng& rng) {
         Tensor a = uniform({2, 3, 2, 2}, rng);
         const std::vector<std::int64_t> idx = {5, 0, 23, 5, 11};
         return leaves([&] { return probe(gather(a, idx)); }, {a});
       }},
      {"binary_cross_entropy", [&](Rng& rng) {
         Tensor p = uniform({2, 3, 2, 2}, rng, 0.05, 0.95), t = uniform({2, 3, 2, 2}, rng, 0.0, 1.0);
         return leaves([&] { return binary_cross_entropy(p, t); }, {p});
       }},
      {"eiou_loss_sum", [&](Rng& rng) {
         Tensor p = boxes(6, rng), t = boxes(6, rng);
         return leaves([&] { return eiou_loss_sum(p, t); }, {p, t});
       }},
      {"confidence_loss", [&](Rng& rng) {
         Tensor p = uniform({12, 1, 1, 1}, rng, 0.05, 0.95);
         std::vector<double> ind(12);
         for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = i % 3 == 0 ? 1.0 : 0.0;
         Tensor t = Tensor::from_values({12, 1, 1, 1}, ind, kF64);
         return leaves([&] { return confidence_loss(p, t); }, {p});
       }},
      {"classification_loss", [&](Rng& rng) {
         Tensor p = uniform({4, 9, 1, 1}, rng, 0.05, 0.95), t = uniform({4, 9, 1, 1}, rng, 0.0, 1.0);
         return leaves([&] { return classification_loss(p, t); }, {p});
       }},
      {"total_loss", [&](Rng& rng) {
         Tensor a = uniform({1, 1, 1, 1}, rng), b = uniform({1, 1, 1, 1}, rng), c = uniform({1, 1, 1, 1}, rng);
         return leaves([&] { return total_loss(a, b, c, {2.0, 0.5, 1.5}).total; }, {a, b, c});
       }},
      {"neg_cosine", [&](Rng& rng) {
         Tensor p = uniform({4, 6, 1, 1}, rng), z = uniform({4, 6, 1, 1}, rng);
         return leaves([&] { return neg_cosine(p, z); }, {p, z});
       }},
      {"simsiam_loss", [&](Rng& rng) {
         // Targets are stop-gradient by contract; only the predictor outputs
         // carry a true derivative.
         Tensor pa = uniform({4, 6, 1, 1}, rng), pb = uniform({4, 6, 1, 1}, rng);
         Tensor za = uniform({4, 6, 1, 1}, rng), zb = uniform({4, 6, 1, 1}, rng);
         return leaves([&] { return simsiam_loss(pa, pb, za, zb); }, {pa, pb});
       }},
  };

  GradcheckReport report;
  Rng rng(mix_seed(options.seed, 0x67726164));
  for (const Case& c : cases) {
    GradcheckEntry e;
    e.op = c.op;
    e.worst = c.run(rng);
    e.passed = e.worst < options.tolerance;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace dpf
