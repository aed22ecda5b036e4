#include "dpf/losses.h"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dpf/ops.h"

namespace dpf {
namespace {

/// Forward-mode dual number carrying N partial derivatives.
template <std::size_t N>
struct Dual {
  double v = 0;
  std::array<double, N> d{};

  static Dual variable(double value, std::size_t index) {
    Dual x{value, {}};
    x.d[index] = 1.0;
    return x;
  }
  friend Dual operator+(Dual a, const Dual& b) {
    a.v += b.v;
    for (std::size_t i = 0; i < N; ++i) a.d[i] += b.d[i];
    return a;
  }
  friend Dual operator-(Dual a, const Dual& b) {
    a.v -= b.v;
    for (std::size_t i = 0; i < N; ++i) a.d[i] -= b.d[i];
    return a;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r{a.v * b.v, {}};
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r{a.v / b.v, {}};
    for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) / b.v;
    return r;
  }
  friend Dual operator*(double s, Dual a) {
    a.v *= s;
    for (auto& x : a.d) x *= s;
    return a;
  }
  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
};

double value_of(double x) { return x; }
template <std::size_t N>
double value_of(const Dual<N>& x) {
  return x.v;
}

template <typename T>
T tmin(const T& a, const T& b) {
  return b < a ? b : a;
}
template <typename T>
T tmax(const T& a, const T& b) {
  return a < b ? b : a;
}

template <typename T>
T zero_like() {
  return T{};
}

template <typename T>
struct GenericBox {
  T cx, cy, w, h;
};

template <typename T>
T generic_iou(const GenericBox<T>& a, const GenericBox<T>& b) {
  const T ax0 = a.cx - 0.5 * a.w, ax1 = a.cx + 0.5 * a.w;
  const T ay0 = a.cy - 0.5 * a.h, ay1 = a.cy + 0.5 * a.h;
  const T bx0 = b.cx - 0.5 * b.w, bx1 = b.cx + 0.5 * b.w;
  const T by0 = b.cy - 0.5 * b.h, by1 = b.cy + 0.5 * b.h;
  const T iw = tmax(tmin(ax1, bx1) - tmax(ax0, bx0), zero_like<T>());
  const T ih = tmax(tmin(ay1, by1) - tmax(ay0, by0), zero_like<T>());
  const T inter = iw * ih;
  // Areas from the same corner extents as the overlap, so identical boxes give exactly 1.
  const T uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  if (value_of(uni) <= 0.0) return zero_like<T>();
  return inter / uni;
}

template <typename T>
T safe_ratio(const T& num, const T& den) {
  if (value_of(den) < kBoxEps) return zero_like<T>();
  return num / den;
}

template <typename T>
T generic_eiou(const GenericBox<T>& p, const GenericBox<T>& g) {
  const T cw = tmax(p.cx + 0.5 * p.w, g.cx + 0.5 * g.w) - tmin(p.cx - 0.5 * p.w, g.cx - 0.5 * g.w);
  const T ch = tmax(p.cy + 0.5 * p.h, g.cy + 0.5 * g.h) - tmin(p.cy - 0.5 * p.h, g.cy - 0.5 * g.h);
  const T dx = p.cx - g.cx, dy = p.cy - g.cy;
  const T dw = p.w - g.w, dh = p.h - g.h;
  return generic_iou(p, g) - safe_ratio(dx * dx + dy * dy, cw * cw + ch * ch) -
         safe_ratio(dw * dw, cw * cw) - safe_ratio(dh * dh, ch * ch);
}

GenericBox<double> plain(const Box& b) { return {b.cx, b.cy, b.w, b.h}; }

void check_box_rows(const Tensor& t, const char* what) {
  const Shape s = t.shape();
  if (s.c != 4 || s.h != 1 || s.w != 1) {
    throw ShapeError(std::string("eiou_loss_sum: ") + what + " must be (S,4,1,1), got " + s.str());
  }
}

}  // namespace

double iou(const Box& a, const Box& b) { return generic_iou(plain(a), plain(b)); }

double eiou(const Box& pred, const Box& target) { return generic_eiou(plain(pred), plain(target)); }

double regression_loss(const MatchSet& matches) {
  double total = 0.0;
  for (const auto& [p, t] : matches) total += eiou_loss(p, t);
  return total;
}

Tensor eiou_loss_sum(const Tensor& pred, const Tensor& target) {
  check_box_rows(pred, "pred");
  check_box_rows(target, "target");
  if (pred.shape() != target.shape()) {
    throw ShapeError("eiou_loss_sum: pred " + pred.shape().str() + " vs target " +
                     target.shape().str());
  }
  if (pred.dtype() != target.dtype()) throw std::invalid_argument("eiou_loss_sum: dtype mismatch");
  const std::int64_t rows = pred.shape().n;
  const std::vector<double> pv = pred.values();
  const std::vector<double> tv = target.values();

  using D = Dual<8>;
  std::vector<std::array<double, 8>> partials(static_cast<std::size_t>(rows));
  double loss = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    std::array<D, 8> x;
    for (std::size_t k = 0; k < 4; ++k) {
      x[k] = D::variable(pv[static_cast<std::size_t>(i * 4) + k], k);
      x[k + 4] = D::variable(tv[static_cast<std::size_t>(i * 4) + k], k + 4);
    }
    const D e = generic_eiou(GenericBox<D>{x[0], x[1], x[2], x[3]},
                             GenericBox<D>{x[4], x[5], x[6], x[7]});
    loss += 1.0 - e.v;
    for (std::size_t k = 0; k < 8; ++k) partials[static_cast<std::size_t>(i)][k] = -e.d[k];
  }

  const DType dtype = pred.dtype();
  return detail::make_result(
      {1, 1, 1, 1}, dtype, detail::make_buffer(dtype, 1, loss), "eiou_loss_sum", {pred, target},
      [partials, pred, target, dtype](const Buffer& g, const detail::Node::Emit& emit) {
        const double go = std::visit([](const auto& v) { return static_cast<double>(v[0]); }, g);
        for (std::size_t arg = 0; arg < 2; ++arg) {
          if (!(arg == 0 ? pred : target).requires_grad()) continue;
          Buffer out = detail::make_buffer(dtype, partials.size() * 4);
          std::visit(
              [&](auto& v) {
                for (std::size_t i = 0; i < partials.size(); ++i)
                  for (std::size_t k = 0; k < 4; ++k)
                    v[i * 4 + k] = static_cast<std::decay_t<decltype(v[0])>>(
                        go * partials[i][arg * 4 + k]);
              },
              out);
          emit(arg, out);
        }
      });
}

Tensor neg_cosine(const Tensor& p, const Tensor& z) {
  if (p.shape() != z.shape()) {
    throw ShapeError("neg_cosine: " + p.shape().str() + " vs " + z.shape().str());
  }
  const double n = static_cast<double>(p.shape().n);
  return scale(sum(mul(l2_normalize(p), l2_normalize(z))), -1.0 / n);
}

Tensor simsiam_loss(const Tensor& pa, const Tensor& pb, const Tensor& za, const Tensor& zb,
                    bool stop_targets) {
  for (const Tensor* t : {&pb, &za, &zb}) {
    if (t->shape() != pa.shape()) {
      throw ShapeError("simsiam_loss: " + pa.shape().str() + " vs " + t->shape().str());
    }
  }
  const Tensor tb = stop_targets ? stop_gradient(zb) : zb;
  const Tensor ta = stop_targets ? stop_gradient(za) : za;
  return add(scale(neg_cosine(pa, tb), 0.5), scale(neg_cosine(pb, ta), 0.5));
}

Tensor confidence_loss(const Tensor& pred_conf, const Tensor& target_conf) {
  if (pred_conf.shape() != target_conf.shape()) {
    throw ShapeError("confidence_loss: " + pred_conf.shape().str() + " vs " +
                     target_conf.shape().str());
  }
  for (double t : target_conf.values()) {
    if (t != 0.0 && t != 1.0) {
      throw std::invalid_argument("confidence_loss: target must be 0 or 1, got " +
                                  std::to_string(t));
    }
  }
  return binary_cross_entropy(pred_conf, target_conf, kProbEps);
}

Tensor classification_loss(const Tensor& pred_probs, const Tensor& target_probs) {
  if (pred_probs.shape() != target_probs.shape()) {
    throw ShapeError("classification_loss: " + pred_probs.shape().str() + " vs " +
                     target_probs.shape().str());
  }
  return binary_cross_entropy(pred_probs, target_probs, kProbEps);
}

LossBreakdown total_loss(const Tensor& l_re, const Tensor& l_co, const Tensor& l_cl,
                         const LossWeights& weights) {
  auto weighted = [](const Tensor& t, double w) { return w == 1.0 ? t : scale(t, w); };
  LossBreakdown b{l_re, l_co, l_cl, {}};
  b.total = add(add(weighted(l_re, weights.re), weighted(l_co, weights.co)),
                weighted(l_cl, weights.cl));
  return b;
}

}  // namespace dpf
