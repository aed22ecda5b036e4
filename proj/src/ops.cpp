#include "dpf/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.h"

namespace dpf {

using detail::make_buffer;
using detail::make_result;
using detail::Node;

namespace {

template <typename T>
const std::vector<T>& vec(const Buffer& b) {
  return std::get<std::vector<T>>(b);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                      " vs " + b.shape().str());
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch " +
                                      dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
}

void check_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch " +
                                      dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
}

std::size_t usize(std::int64_t v) { return static_cast<std::size_t>(v); }

// Unfolds one image (C,H,W) into columns (C*k*k, Ho*Wo).
template <typename T>
void im2col(const T* img, std::int64_t c_in, std::int64_t h, std::int64_t w, int k,
            const Conv2dOptions& o, std::int64_t ho, std::int64_t wo, T* col) {
  const std::int64_t p = ho * wo;
  for (std::int64_t c = 0; c < c_in; ++c) {
    const T* plane = img + c * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * p;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * o.stride - o.padding + ki * o.dilation;
          T* dst = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + ih * w;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t iw = ow * o.stride - o.padding + kj * o.dilation;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::int64_t c_in, std::int64_t h, std::int64_t w, int k,
            const Conv2dOptions& o, std::int64_t ho, std::int64_t wo, T* img) {
  const std::int64_t p = ho * wo;
  for (std::int64_t c = 0; c < c_in; ++c) {
    T* plane = img + c * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * p;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * o.stride - o.padding + ki * o.dilation;
          if (ih < 0 || ih >= h) continue;
          const T* src = row + oh * wo;
          T* dst = plane + ih * w;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t iw = ow * o.stride - o.padding + kj * o.dilation;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Bilinear interpolation weights of one sampling point with zero contribution
// from out-of-range neighbours. Index -1 marks an absent neighbour.
template <typename T>
struct BilinearTap {
  std::int64_t index[4];
  T weight[4];
  T d_dy[4];
  T d_dx[4];
};

template <typename T>
BilinearTap<T> bilinear_tap(T y, T x, std::int64_t h, std::int64_t w) {
  BilinearTap<T> tap{};
  for (int i = 0; i < 4; ++i) tap.index[i] = -1;
  if (!(y > T(-2) && y < T(h + 1) && x > T(-2) && x < T(w + 1))) return tap;
  const T yf = std::floor(y);
  const T xf = std::floor(x);
  const auto y0 = static_cast<std::int64_t>(yf);
  const auto x0 = static_cast<std::int64_t>(xf);
  const T ly = y - yf;
  const T lx = x - xf;
  const T hy = T(1) - ly;
  const T hx = T(1) - lx;
  const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const T wts[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  const T dys[4] = {-hx, -lx, hx, lx};
  const T dxs[4] = {-hy, hy, -ly, ly};
  for (int i = 0; i < 4; ++i) {
    if (ys[i] >= 0 && ys[i] < h && xs[i] >= 0 && xs[i] < w) {
      tap.index[i] = ys[i] * w + xs[i];
      tap.weight[i] = wts[i];
      tap.d_dy[i] = dys[i];
      tap.d_dx[i] = dxs[i];
    }
  }
  return tap;
}

template <typename T>
T tap_value(const BilinearTap<T>& tap, const T* plane) {
  T v = 0;
  for (int i = 0; i < 4; ++i) {
    if (tap.index[i] >= 0) v += tap.weight[i] * plane[tap.index[i]];
  }
  return v;
}

template <typename T, typename F>
Tensor unary_op(const Tensor& x, const char* name, F&& fwd_and_deriv) {
  // fwd_and_deriv(x) returns {f(x), f'(x)}; the derivative is recomputed on
  // backward from the saved input.
  const auto& xs = x.data<T>();
  Buffer out = make_buffer(x.dtype(), xs.size());
  auto& o = std::get<std::vector<T>>(out);
  for (std::size_t i = 0; i < xs.size(); ++i) o[i] = fwd_and_deriv(xs[i]).first;
  return make_result(x.shape(), x.dtype(), std::move(out), name, {x},
                     [x, f = fwd_and_deriv](const Buffer& g, const Node::Emit& emit) {
                       const auto& gv = vec<T>(g);
                       const auto xs = x.data<T>();
                       Buffer gx = make_buffer(x.dtype(), xs.size());
                       auto& gxv = std::get<std::vector<T>>(gx);
                       for (std::size_t i = 0; i < xs.size(); ++i) {
                         gxv[i] = gv[i] * f(xs[i]).second;
                       }
                       emit(0, gx);
                     });
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, int kernel, int stride, int padding,
                              int dilation) {
  const std::int64_t span = static_cast<std::int64_t>(dilation) * (kernel - 1) + 1;
  const std::int64_t numer = in + 2 * static_cast<std::int64_t>(padding) - span;
  if (numer < 0) return 0;
  return numer / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions o) {
  require(input.defined() && weight.defined(), "conv2d: undefined operand");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require(o.stride >= 1 && o.dilation >= 1 && o.padding >= 0,
          "conv2d: stride and dilation must be >= 1 and padding >= 0");
  require(ws.h == ws.w && ws.h >= 1,
          "conv2d: weight must be square (C_out,C_in,k,k), got " + ws.str());
  require(is.c == ws.c, "conv2d: input " + is.str() + " has " + std::to_string(is.c) +
                            " channels but weight " + ws.str() + " expects " +
                            std::to_string(ws.c));
  check_dtype(input, weight, "conv2d");
  if (bias.defined()) {
    require(bias.numel() == ws.n, "conv2d: bias " + bias.shape().str() +
                                      " does not match weight " + ws.str());
    check_dtype(input, bias, "conv2d");
  }
  const int k = static_cast<int>(ws.h);
  const std::int64_t ho = conv_output_size(is.h, k, o.stride, o.padding, o.dilation);
  const std::int64_t wo = conv_output_size(is.w, k, o.stride, o.padding, o.dilation);
  require(ho > 0 && wo > 0, "conv2d: non-positive output size for input " + is.str() +
                                " and weight " + ws.str());
  const Shape out_shape{is.n, ws.n, ho, wo};
  const std::int64_t kk = ws.c * k * k;
  const std::int64_t p = ho * wo;
  const bool direct = (k == 1 && o.stride == 1 && o.padding == 0);

  return dispatch(input.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const T* x = input.data<T>().data();
    const T* wt = weight.data<T>().data();
    Buffer out = make_buffer(input.dtype(), usize(out_shape.numel()));
    T* y = std::get<std::vector<T>>(out).data();
    std::vector<T> col(direct ? 0 : usize(kk * p));
    for (std::int64_t n = 0; n < is.n; ++n) {
      const T* img = x + n * is.c * is.h * is.w;
      const T* cols = img;
      if (!direct) {
        im2col(img, is.c, is.h, is.w, k, o, ho, wo, col.data());
        cols = col.data();
      }
      T* yn = y + n * ws.n * p;
      detail::gemm_nn(wt, cols, yn, ws.n, p, kk, false);
      if (bias.defined()) {
        const T* b = bias.data<T>().data();
        for (std::int64_t co = 0; co < ws.n; ++co) {
          T* row = yn + co * p;
          for (std::int64_t i = 0; i < p; ++i) row[i] += b[co];
        }
      }
    }
    return make_result(
        out_shape, input.dtype(), std::move(out), "conv2d", {input, weight, bias},
        [input, weight, bias, o, k, ho, wo, kk, p, direct](const Buffer& g,
                                                           const Node::Emit& emit) {
          const Shape& is = input.shape();
          const Shape& ws = weight.shape();
          const auto& gy = vec<T>(g);
          const T* x = input.data<T>().data();
          const T* wt = weight.data<T>().data();
          const bool need_x = input.requires_grad();
          const bool need_w = weight.requires_grad();
          Buffer gx = make_buffer(input.dtype(), need_x ? usize(is.numel()) : 0);
          Buffer gw = make_buffer(input.dtype(), need_w ? usize(ws.numel()) : 0);
          auto& gxv = std::get<std::vector<T>>(gx);
          auto& gwv = std::get<std::vector<T>>(gw);
          std::vector<T> col(direct ? 0 : usize(kk * p));
          std::vector<T> gcol(need_x && !direct ? usize(kk * p) : 0);
          for (std::int64_t n = 0; n < is.n; ++n) {
            const T* gyn = gy.data() + n * ws.n * p;
            const T* img = x + n * is.c * is.h * is.w;
            if (need_w) {
              const T* cols = img;
              if (!direct) {
                im2col(img, is.c, is.h, is.w, k, o, ho, wo, col.data());
                cols = col.data();
              }
              detail::gemm_nt(gyn, cols, gwv.data(), ws.n, kk, p, true);
            }
            if (need_x) {
              T* gxn = gxv.data() + n * is.c * is.h * is.w;
              if (direct) {
                detail::gemm_tn(wt, gyn, gxn, kk, p, ws.n, false);
              } else {
                detail::gemm_tn(wt, gyn, gcol.data(), kk, p, ws.n, false);
                col2im(gcol.data(), is.c, is.h, is.w, k, o, ho, wo, gxn);
              }
            }
          }
          if (need_x) emit(0, gx);
          if (need_w) emit(1, gw);
          if (bias.defined() && bias.requires_grad()) {
            Buffer gb = make_buffer(input.dtype(), usize(ws.n));
            auto& gbv = std::get<std::vector<T>>(gb);
            for (std::int64_t n = 0; n < is.n; ++n) {
              for (std::int64_t co = 0; co < ws.n; ++co) {
                const T* row = gy.data() + (n * ws.n + co) * p;
                T acc = 0;
                for (std::int64_t i = 0; i < p; ++i) acc += row[i];
                gbv[usize(co)] += acc;
              }
            }
            emit(2, gb);
          }
        });
  });
}

Tensor maxpool2d(const Tensor& input, int kernel, int stride, int padding) {
  require(input.defined(), "maxpool2d: undefined operand");
  require(kernel >= 1 && stride >= 1 && padding >= 0,
          "maxpool2d: kernel and stride must be >= 1, padding >= 0");
  require(2 * padding <= kernel, "maxpool2d: padding must be at most half the kernel");
  const Shape& is = input.shape();
  const std::int64_t ho = conv_output_size(is.h, kernel, stride, padding, 1);
  const std::int64_t wo = conv_output_size(is.w, kernel, stride, padding, 1);
  require(ho > 0 && wo > 0, "maxpool2d: non-positive output size for input " + is.str());
  const Shape out_shape{is.n, is.c, ho, wo};
  return dispatch(input.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const T* x = input.data<T>().data();
    Buffer out = make_buffer(input.dtype(), usize(out_shape.numel()));
    T* y = std::get<std::vector<T>>(out).data();
    std::vector<std::int64_t> argmax(usize(out_shape.numel()));
    for (std::int64_t plane = 0; plane < is.n * is.c; ++plane) {
      const T* src = x + plane * is.h * is.w;
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int ki = 0; ki < kernel; ++ki) {
            const std::int64_t ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= is.h) continue;
            for (int kj = 0; kj < kernel; ++kj) {
              const std::int64_t iw = ow * stride - padding + kj;
              if (iw < 0 || iw >= is.w) continue;
              const T v = src[ih * is.w + iw];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = ih * is.w + iw;
              }
            }
          }
          const std::int64_t o = (plane * ho + oh) * wo + ow;
          y[o] = best;
          argmax[usize(o)] = plane * is.h * is.w + best_idx;
        }
      }
    }
    const std::int64_t in_numel = is.numel();
    return make_result(out_shape, input.dtype(), std::move(out), "maxpool2d", {input},
                       [argmax = std::move(argmax), in_numel, dt = input.dtype()](
                           const Buffer& g, const Node::Emit& emit) {
                         const auto& gy = vec<T>(g);
                         Buffer gx = make_buffer(dt, usize(in_numel));
                         auto& gxv = std::get<std::vector<T>>(gx);
                         for (std::size_t i = 0; i < gy.size(); ++i) {
                           gxv[usize(argmax[i])] += gy[i];
                         }
                         emit(0, gx);
                       });
  });
}

Tensor bilinear_sample(const Tensor& feature, const Tensor& points) {
  require(feature.defined() && points.defined(), "bilinear_sample: undefined operand");
  const Shape& fs = feature.shape();
  const Shape& ps = points.shape();
  require(ps.n == fs.n && ps.c == 2,
          "bilinear_sample: points must be (N,2,Ho,Wo) matching feature " + fs.str() +
              ", got " + ps.str());
  check_dtype(feature, points, "bilinear_sample");
  const Shape out_shape{fs.n, fs.c, ps.h, ps.w};
  return dispatch(feature.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const T* f = feature.data<T>().data();
    const T* pt = points.data<T>().data();
    const std::int64_t q = ps.h * ps.w;
    Buffer out = make_buffer(feature.dtype(), usize(out_shape.numel()));
    T* y = std::get<std::vector<T>>(out).data();
    for (std::int64_t n = 0; n < fs.n; ++n) {
      for (std::int64_t i = 0; i < q; ++i) {
        const auto tap = bilinear_tap<T>(pt[(n * 2) * q + i], pt[(n * 2 + 1) * q + i], fs.h,
                                         fs.w);
        for (std::int64_t c = 0; c < fs.c; ++c) {
          y[(n * fs.c + c) * q + i] = tap_value(tap, f + (n * fs.c + c) * fs.h * fs.w);
        }
      }
    }
    return make_result(
        out_shape, feature.dtype(), std::move(out), "bilinear_sample", {feature, points},
        [feature, points](const Buffer& g, const Node::Emit& emit) {
          const Shape& fs = feature.shape();
          const Shape& ps = points.shape();
          const std::int64_t q = ps.h * ps.w;
          const auto& gy = vec<T>(g);
          const T* f = feature.data<T>().data();
          const T* pt = points.data<T>().data();
          Buffer gf = make_buffer(feature.dtype(), usize(fs.numel()));
          Buffer gp = make_buffer(feature.dtype(), usize(ps.numel()));
          auto& gfv = std::get<std::vector<T>>(gf);
          auto& gpv = std::get<std::vector<T>>(gp);
          for (std::int64_t n = 0; n < fs.n; ++n) {
            for (std::int64_t i = 0; i < q; ++i) {
              const auto tap = bilinear_tap<T>(pt[(n * 2) * q + i], pt[(n * 2 + 1) * q + i],
                                               fs.h, fs.w);
              T gy_acc = 0;
              T gx_acc = 0;
              for (std::int64_t c = 0; c < fs.c; ++c) {
                const T go = gy[usize((n * fs.c + c) * q + i)];
                const std::int64_t base = (n * fs.c + c) * fs.h * fs.w;
                for (int t = 0; t < 4; ++t) {
                  if (tap.index[t] < 0) continue;
                  gfv[usize(base + tap.index[t])] += go * tap.weight[t];
                  gy_acc += go * tap.d_dy[t] * f[base + tap.index[t]];
                  gx_acc += go * tap.d_dx[t] * f[base + tap.index[t]];
                }
              }
              gpv[usize((n * 2) * q + i)] += gy_acc;
              gpv[usize((n * 2 + 1) * q + i)] += gx_acc;
            }
          }
          if (feature.requires_grad()) emit(0, gf);
          if (points.requires_grad()) emit(1, gp);
        });
  });
}

Tensor deform_conv2d(const Tensor& input, const Tensor& offset, const Tensor& weight,
                     const Tensor& bias, int padding, int dilation) {
  require(input.defined() && offset.defined() && weight.defined(),
          "deform_conv2d: undefined operand");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require(ws.h == ws.w && ws.h >= 1,
          "deform_conv2d: weight must be square (C_out,C_in,k,k), got " + ws.str());
  require(is.c == ws.c, "deform_conv2d: input " + is.str() + " does not match weight " +
                            ws.str());
  require(padding >= 0 && dilation >= 1, "deform_conv2d: invalid padding/dilation");
  check_dtype(input, weight, "deform_conv2d");
  check_dtype(input, offset, "deform_conv2d");
  const int k = static_cast<int>(ws.h);
  const std::int64_t taps = static_cast<std::int64_t>(k) * k;
  const std::int64_t ho = conv_output_size(is.h, k, 1, padding, dilation);
  const std::int64_t wo = conv_output_size(is.w, k, 1, padding, dilation);
  require(ho > 0 && wo > 0, "deform_conv2d: non-positive output size");
  require(offset.shape() == Shape{is.n, 2 * taps, ho, wo},
          "deform_conv2d: offset must be " + Shape{is.n, 2 * taps, ho, wo}.str() + ", got " +
              offset.shape().str());
  if (bias.defined()) {
    require(bias.numel() == ws.n, "deform_conv2d: bias does not match weight");
    check_dtype(input, bias, "deform_conv2d");
  }
  const Shape out_shape{is.n, ws.n, ho, wo};
  const std::int64_t p = ho * wo;
  const std::int64_t kk = ws.c * taps;

  return dispatch(input.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    // Taps depend only on (image, kernel tap, output position), not on channel.
    auto build_taps = [=](const T* off, std::vector<BilinearTap<T>>& out_taps) {
      out_taps.resize(usize(taps * p));
      for (std::int64_t t = 0; t < taps; ++t) {
        const int ki = static_cast<int>(t / k);
        const int kj = static_cast<int>(t % k);
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t i = oh * wo + ow;
            const T yy = T(oh - padding + ki * dilation) + off[(2 * t) * p + i];
            const T xx = T(ow - padding + kj * dilation) + off[(2 * t + 1) * p + i];
            out_taps[usize(t * p + i)] = bilinear_tap<T>(yy, xx, is.h, is.w);
          }
        }
      }
    };
    auto fill_columns = [=](const T* img, const std::vector<BilinearTap<T>>& tp, T* col) {
      for (std::int64_t c = 0; c < is.c; ++c) {
        const T* plane = img + c * is.h * is.w;
        for (std::int64_t t = 0; t < taps; ++t) {
          T* row = col + (c * taps + t) * p;
          const BilinearTap<T>* tt = tp.data() + t * p;
          for (std::int64_t i = 0; i < p; ++i) row[i] = tap_value(tt[i], plane);
        }
      }
    };

    const T* x = input.data<T>().data();
    const T* off = offset.data<T>().data();
    const T* wt = weight.data<T>().data();
    Buffer out = make_buffer(input.dtype(), usize(out_shape.numel()));
    T* y = std::get<std::vector<T>>(out).data();
    std::vector<T> col(usize(kk * p));
    std::vector<BilinearTap<T>> tp;
    for (std::int64_t n = 0; n < is.n; ++n) {
      build_taps(off + n * 2 * taps * p, tp);
      fill_columns(x + n * is.c * is.h * is.w, tp, col.data());
      T* yn = y + n * ws.n * p;
      detail::gemm_nn(wt, col.data(), yn, ws.n, p, kk, false);
      if (bias.defined()) {
        const T* b = bias.data<T>().data();
        for (std::int64_t co = 0; co < ws.n; ++co) {
          for (std::int64_t i = 0; i < p; ++i) yn[co * p + i] += b[co];
        }
      }
    }
    return make_result(
        out_shape, input.dtype(), std::move(out), "deform_conv2d",
        {input, offset, weight, bias},
        [input, offset, weight, bias, build_taps, fill_columns, taps, p, kk](
            const Buffer& g, const Node::Emit& emit) {
          const Shape& is = input.shape();
          const Shape& ws = weight.shape();
          const auto& gy = vec<T>(g);
          const T* x = input.data<T>().data();
          const T* off = offset.data<T>().data();
          const T* wt = weight.data<T>().data();
          Buffer gx = make_buffer(input.dtype(), usize(is.numel()));
          Buffer goff = make_buffer(input.dtype(), usize(offset.numel()));
          Buffer gw = make_buffer(input.dtype(), usize(ws.numel()));
          auto& gxv = std::get<std::vector<T>>(gx);
          auto& goffv = std::get<std::vector<T>>(goff);
          auto& gwv = std::get<std::vector<T>>(gw);
          std::vector<T> col(usize(kk * p));
          std::vector<T> gcol(usize(kk * p));
          std::vector<BilinearTap<T>> tp;
          for (std::int64_t n = 0; n < is.n; ++n) {
            const T* img = x + n * is.c * is.h * is.w;
            const T* gyn = gy.data() + n * ws.n * p;
            build_taps(off + n * 2 * taps * p, tp);
            if (weight.requires_grad()) {
              fill_columns(img, tp, col.data());
              detail::gemm_nt(gyn, col.data(), gwv.data(), ws.n, kk, p, true);
            }
            detail::gemm_tn(wt, gyn, gcol.data(), kk, p, ws.n, false);
            T* gxn = gxv.data() + n * is.c * is.h * is.w;
            T* goffn = goffv.data() + n * 2 * taps * p;
            for (std::int64_t c = 0; c < is.c; ++c) {
              const T* plane = img + c * is.h * is.w;
              T* gplane = gxn + c * is.h * is.w;
              for (std::int64_t t = 0; t < taps; ++t) {
                const T* grow = gcol.data() + (c * taps + t) * p;
                const BilinearTap<T>* tt = tp.data() + t * p;
                T* gdy = goffn + (2 * t) * p;
                T* gdx = goffn + (2 * t + 1) * p;
                for (std::int64_t i = 0; i < p; ++i) {
                  const T gc = grow[i];
                  if (gc == T(0)) continue;
                  const auto& tap = tt[i];
                  T dy = 0;
                  T dx = 0;
                  for (int q = 0; q < 4; ++q) {
                    if (tap.index[q] < 0) continue;
                    const T v = plane[tap.index[q]];
                    gplane[tap.index[q]] += gc * tap.weight[q];
                    dy += tap.d_dy[q] * v;
                    dx += tap.d_dx[q] * v;
                  }
                  gdy[i] += gc * dy;
                  gdx[i] += gc * dx;
                }
              }
            }
          }
          if (input.requires_grad()) emit(0, gx);
          if (offset.requires_grad()) emit(1, goff);
          if (weight.requires_grad()) emit(2, gw);
          if (bias.defined() && bias.requires_grad()) {
            Buffer gb = make_buffer(input.dtype(), usize(ws.n));
            auto& gbv = std::get<std::vector<T>>(gb);
            for (std::int64_t n = 0; n < is.n; ++n) {
              for (std::int64_t co = 0; co < ws.n; ++co) {
                const T* row = gy.data() + (n * ws.n + co) * p;
                for (std::int64_t i = 0; i < p; ++i) gbv[usize(co)] += row[i];
              }
            }
            emit(3, gb);
          }
        });
  });
}

Tensor stop_gradient(const Tensor& input) {
  Tensor out = input.clone();
  return out;
}

Tensor scale_grad(const Tensor& input, double factor) {
  return dispatch(input.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    return make_result(input.shape(), input.dtype(), Buffer(vec<T>(input.impl()->data)),
                       "scale_grad", {input},
                       [factor](const Buffer& g, const Node::Emit& emit) {
                         Buffer gx = g;
                         for (auto& v : std::get<std::vector<T>>(gx)) v *= static_cast<T>(factor);
                         emit(0, gx);
                       });
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  return dispatch(a.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto av = a.data<T>();
    const auto bv = b.data<T>();
    Buffer out = make_buffer(a.dtype(), av.size());
    auto& o = std::get<std::vector<T>>(out);
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] + bv[i];
    return make_result(a.shape(), a.dtype(), std::move(out), "add", {a, b},
                       [](const Buffer& g, const Node::Emit& emit) {
                         emit(0, g);
                         emit(1, g);
                       });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  return dispatch(a.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto av = a.data<T>();
    const auto bv = b.data<T>();
    Buffer out = make_buffer(a.dtype(), av.size());
    auto& o = std::get<std::vector<T>>(out);
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] - bv[i];
    return make_result(a.shape(), a.dtype(), std::move(out), "sub", {a, b},
                       [](const Buffer& g, const Node::Emit& emit) {
                         emit(0, g);
                         Buffer neg = g;
                         for (auto& v : std::get<std::vector<T>>(neg)) v = -v;
                         emit(1, neg);
                       });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  return dispatch(a.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto av = a.data<T>();
    const auto bv = b.data<T>();
    Buffer out = make_buffer(a.dtype(), av.size());
    auto& o = std::get<std::vector<T>>(out);
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * bv[i];
    return make_result(a.shape(), a.dtype(), std::move(out), "mul", {a, b},
                       [a, b](const Buffer& g, const Node::Emit& emit) {
                         const auto& gv = vec<T>(g);
                         const auto av = a.data<T>();
                         const auto bv = b.data<T>();
                         if (a.requires_grad()) {
                           Buffer ga = make_buffer(a.dtype(), gv.size());
                           auto& gav = std::get<std::vector<T>>(ga);
                           for (std::size_t i = 0; i < gv.size(); ++i) gav[i] = gv[i] * bv[i];
                           emit(0, ga);
                         }
                         if (b.requires_grad()) {
                           Buffer gb = make_buffer(a.dtype(), gv.size());
                           auto& gbv = std::get<std::vector<T>>(gb);
                           for (std::size_t i = 0; i < gv.size(); ++i) gbv[i] = gv[i] * av[i];
                           emit(1, gb);
                         }
                       });
  });
}

Tensor scale(const Tensor& a, double factor) {
  return dispatch(a.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto av = a.data<T>();
    Buffer out = make_buffer(a.dtype(), av.size());
    auto& o = std::get<std::vector<T>>(out);
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * f;
    return make_result(a.shape(), a.dtype(), std::move(out), "scale", {a},
                       [f](const Buffer& g, const Node::Emit& emit) {
                         Buffer ga = g;
                         for (auto& v : std::get<std::vector<T>>(ga)) v *= f;
                         emit(0, ga);
                       });
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  return dispatch(a.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto av = a.data<T>();
    Buffer out = make_buffer(a.dtype(), av.size());
    auto& o = std::get<std::vector<T>>(out);
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] + static_cast<T>(value);
    return make_result(a.shape(), a.dtype(), std::move(out), "add_scalar", {a},
                       [](const Buffer& g, const Node::Emit& emit) { emit(0, g); });
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  std::int64_t channels = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    require(s.n == first.n && s.h == first.h && s.w == first.w,
            "concat_channels: shape mismatch " + first.str() + " vs " + s.str());
    check_dtype(parts[0], t, "concat_channels");
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  const std::int64_t hw = first.h * first.w;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return dispatch(parts[0].dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    Buffer out = make_buffer(parts[0].dtype(), usize(out_shape.numel()));
    auto& o = std::get<std::vector<T>>(out);
    std::int64_t c0 = 0;
    for (const Tensor& t : parts) {
      const auto tv = t.data<T>();
      const std::int64_t c = t.shape().c;
      for (std::int64_t n = 0; n < first.n; ++n) {
        std::copy_n(tv.data() + n * c * hw, c * hw, o.data() + (n * channels + c0) * hw);
      }
      c0 += c;
    }
    std::vector<std::int64_t> widths;
    for (const Tensor& t : parts) widths.push_back(t.shape().c);
    return make_result(
        out_shape, parts[0].dtype(), std::move(out), "concat_channels", inputs,
        [widths, out_shape, hw, dt = parts[0].dtype()](const Buffer& g,
                                                       const Node::Emit& emit) {
          const auto& gv = vec<T>(g);
          std::int64_t c0 = 0;
          for (std::size_t idx = 0; idx < widths.size(); ++idx) {
            const std::int64_t c = widths[idx];
            Buffer gp = make_buffer(dt, usize(out_shape.n * c * hw));
            auto& gpv = std::get<std::vector<T>>(gp);
            for (std::int64_t n = 0; n < out_shape.n; ++n) {
              std::copy_n(gv.data() + (n * out_shape.c + c0) * hw, c * hw,
                          gpv.data() + n * c * hw);
            }
            emit(idx, gp);
            c0 += c;
          }
        });
  });
}

Tensor nearest_upsample2x(const Tensor& input) {
  const Shape& s = input.shape();
  const Shape out_shape{s.n, s.c, s.h * 2, s.w * 2};
  return dispatch(input.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto x = input.data<T>();
    Buffer out = make_buffer(input.dtype(), usize(out_shape.numel()));
    auto& o = std::get<std::vector<T>>(out);
    for (std::int64_t plane = 0; plane < s.n * s.c; ++plane) {
      for (std::int64_t i = 0; i < out_shape.h; ++i) {
        for (std::int64_t j = 0; j < out_shape.w; ++j) {
          o[usize((plane * out_shape.h + i) * out_shape.w + j)] =
              x[usize((plane * s.h + i / 2) * s.w + j / 2)];
        }
      }
    }
    return make_result(out_shape, input.dtype(), std::move(out), "nearest_upsample2x",
                       {input}, [s, out_shape, dt = input.dtype()](const Buffer& g,
                                                                  const Node::Emit& emit) {
                         const auto& gv = vec<T>(g);
                         Buffer gx = make_buffer(dt, usize(s.numel()));
                         auto& gxv = std::get<std::vector<T>>(gx);
                         for (std::int64_t plane = 0; plane < s.n * s.c; ++plane) {
                           for (std::int64_t i = 0; i < out_shape.h; ++i) {
                             for (std::int64_t j = 0; j < out_shape.w; ++j) {
                               gxv[usize((plane * s.h + i / 2) * s.w + j / 2)] +=
                                   gv[usize((plane * out_shape.h + i) * out_shape.w + j)];
                             }
                           }
                         }
                         emit(0, gx);
                       });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.h == 1 && as.w == 1 && bs.h == 1 && bs.w == 1,
          "matmul: operands must be (M,K,1,1) and (K,N,1,1), got " + as.str() + " and " +
              bs.str());
  require(as.c == bs.n, "matmul: inner dimension mismatch " + as.str() + " x " + bs.str());
  check_dtype(a, b, "matmul");
  const std::int64_t m = as.n;
  const std::int64_t kd = as.c;
  const std::int64_t n = bs.c;
  return dispatch(a.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    Buffer out = make_buffer(a.dtype(), usize(m * n));
    detail::gemm_nn(a.data<T>().data(), b.data<T>().data(),
                    std::get<std::vector<T>>(out).data(), m, n, kd, false);
    return make_result({m, n, 1, 1}, a.dtype(), std::move(out), "matmul", {a, b},
                       [a, b, m, n, kd](const Buffer& g, const Node::Emit& emit) {
                         const T* gv = vec<T>(g).data();
                         if (a.requires_grad()) {
                           Buffer ga = make_buffer(a.dtype(), usize(m * kd));
                           detail::gemm_nt(gv, b.data<T>().data(),
                                           std::get<std::vector<T>>(ga).data(), m, kd, n,
                                           false);
                           emit(0, ga);
                         }
                         if (b.requires_grad()) {
                           Buffer gb = make_buffer(a.dtype(), usize(kd * n));
                           detail::gemm_tn(a.data<T>().data(), gv,
                                           std::get<std::vector<T>>(gb).data(), kd, n, m,
                                           false);
                           emit(1, gb);
                         }
                       });
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.h == 1 && xs.w == 1 && ws.h == 1 && ws.w == 1,
          "linear: expected x (N,Din,1,1) and weight (Dout,Din,1,1), got " + xs.str() +
              " and " + ws.str());
  require(xs.c == ws.c, "linear: x " + xs.str() + " does not match weight " + ws.str());
  check_dtype(x, weight, "linear");
  if (bias.defined()) {
    require(bias.numel() == ws.n, "linear: bias " + bias.shape().str() +
                                      " does not match weight " + ws.str());
  }
  const std::int64_t n = xs.n;
  const std::int64_t din = xs.c;
  const std::int64_t dout = ws.n;
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    Buffer out = make_buffer(x.dtype(), usize(n * dout));
    T* y = std::get<std::vector<T>>(out).data();
    detail::gemm_nt(x.data<T>().data(), weight.data<T>().data(), y, n, dout, din, false);
    if (bias.defined()) {
      const T* b = bias.data<T>().data();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < dout; ++j) y[i * dout + j] += b[j];
      }
    }
    return make_result(
        {n, dout, 1, 1}, x.dtype(), std::move(out), "linear", {x, weight, bias},
        [x, weight, bias, n, din, dout](const Buffer& g, const Node::Emit& emit) {
          const T* gv = vec<T>(g).data();
          if (x.requires_grad()) {
            Buffer gx = make_buffer(x.dtype(), usize(n * din));
            detail::gemm_nn(gv, weight.data<T>().data(), std::get<std::vector<T>>(gx).data(),
                            n, din, dout, false);
            emit(0, gx);
          }
          if (weight.requires_grad()) {
            Buffer gw = make_buffer(x.dtype(), usize(dout * din));
            detail::gemm_tn(gv, x.data<T>().data(), std::get<std::vector<T>>(gw).data(), dout,
                            din, n, false);
            emit(1, gw);
          }
          if (bias.defined() && bias.requires_grad()) {
            Buffer gb = make_buffer(x.dtype(), usize(dout));
            auto& gbv = std::get<std::vector<T>>(gb);
            for (std::int64_t i = 0; i < n; ++i) {
              for (std::int64_t j = 0; j < dout; ++j) gbv[usize(j)] += gv[i * dout + j];
            }
            emit(2, gb);
          }
        });
  });
}

Tensor silu(const Tensor& x) {
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    return unary_op<T>(x, "silu", [](T v) {
      const T s = T(1) / (T(1) + std::exp(-v));
      return std::pair<T, T>{v * s, s * (T(1) + v * (T(1) - s))};
    });
  });
}

Tensor sigmoid(const Tensor& x) {
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    return unary_op<T>(x, "sigmoid", [](T v) {
      const T s = T(1) / (T(1) + std::exp(-v));
      return std::pair<T, T>{s, s * (T(1) - s)};
    });
  });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  const Shape s = x.shape();
  const std::int64_t hw = s.h * s.w;
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto xv = x.data<T>();
    Buffer out = make_buffer(x.dtype(), xv.size());
    auto& o = std::get<std::vector<T>>(out);
    std::vector<T> norms(usize(s.n * hw));
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t i = 0; i < hw; ++i) {
        T acc = 0;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const T v = xv[usize((n * s.c + c) * hw + i)];
          acc += v * v;
        }
        const T norm = std::sqrt(acc);
        norms[usize(n * hw + i)] = norm;
        const T denom = std::max(norm, static_cast<T>(eps));
        for (std::int64_t c = 0; c < s.c; ++c) {
          const std::size_t idx = usize((n * s.c + c) * hw + i);
          o[idx] = xv[idx] / denom;
        }
      }
    }
    std::vector<T> y = o;
    return make_result(
        s, x.dtype(), std::move(out), "l2_normalize", {x},
        [s, hw, eps, norms = std::move(norms), y = std::move(y), dt = x.dtype()](
            const Buffer& g, const Node::Emit& emit) {
          const auto& gv = vec<T>(g);
          Buffer gx = make_buffer(dt, gv.size());
          auto& gxv = std::get<std::vector<T>>(gx);
          for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t i = 0; i < hw; ++i) {
              const T norm = norms[usize(n * hw + i)];
              if (norm > static_cast<T>(eps)) {
                T dot = 0;
                for (std::int64_t c = 0; c < s.c; ++c) {
                  const std::size_t idx = usize((n * s.c + c) * hw + i);
                  dot += y[idx] * gv[idx];
                }
                for (std::int64_t c = 0; c < s.c; ++c) {
                  const std::size_t idx = usize((n * s.c + c) * hw + i);
                  gxv[idx] = (gv[idx] - y[idx] * dot) / norm;
                }
              } else {
                for (std::int64_t c = 0; c < s.c; ++c) {
                  const std::size_t idx = usize((n * s.c + c) * hw + i);
                  gxv[idx] = gv[idx] / static_cast<T>(eps);
                }
              }
            }
          }
          emit(0, gx);
        });
  });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, BatchNormOptions opt) {
  const Shape s = x.shape();
  require(gamma.numel() == s.c && beta.numel() == s.c && running_mean.numel() == s.c &&
              running_var.numel() == s.c,
          "batchnorm2d: parameters must have " + std::to_string(s.c) +
              " entries for input " + s.str());
  check_dtype(x, gamma, "batchnorm2d");
  const std::int64_t hw = s.h * s.w;
  const std::int64_t count = s.n * hw;
  require(count > 0, "batchnorm2d: empty input " + s.str());
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto xv = x.data<T>();
    const auto gm = gamma.data<T>();
    const auto bt = beta.data<T>();
    auto rm = running_mean.data<T>();
    auto rv = running_var.data<T>();
    std::vector<T> mu(usize(s.c));
    std::vector<T> inv_std(usize(s.c));
    if (opt.training) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        double acc = 0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* p = xv.data() + (n * s.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
        }
        const double m = acc / static_cast<double>(count);
        double var = 0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* p = xv.data() + (n * s.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double d = p[i] - m;
            var += d * d;
          }
        }
        const double biased = var / static_cast<double>(count);
        const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : biased;
        mu[usize(c)] = static_cast<T>(m);
        inv_std[usize(c)] = static_cast<T>(1.0 / std::sqrt(biased + opt.eps));
        rm[usize(c)] = static_cast<T>((1.0 - opt.momentum) * rm[usize(c)] + opt.momentum * m);
        rv[usize(c)] =
            static_cast<T>((1.0 - opt.momentum) * rv[usize(c)] + opt.momentum * unbiased);
      }
    } else {
      for (std::int64_t c = 0; c < s.c; ++c) {
        mu[usize(c)] = rm[usize(c)];
        inv_std[usize(c)] = static_cast<T>(1.0 / std::sqrt(double(rv[usize(c)]) + opt.eps));
      }
    }
    Buffer out = make_buffer(x.dtype(), xv.size());
    auto& o = std::get<std::vector<T>>(out);
    std::vector<T> xhat(xv.size());
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::size_t base = usize((n * s.c + c) * hw);
        for (std::int64_t i = 0; i < hw; ++i) {
          const T xh = (xv[base + usize(i)] - mu[usize(c)]) * inv_std[usize(c)];
          xhat[base + usize(i)] = xh;
          o[base + usize(i)] = gm[usize(c)] * xh + bt[usize(c)];
        }
      }
    }
    return make_result(
        s, x.dtype(), std::move(out), "batchnorm2d", {x, gamma, beta},
        [x, gamma, beta, s, hw, count, training = opt.training, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const Buffer& g, const Node::Emit& emit) {
          const auto& gv = vec<T>(g);
          const auto gm = gamma.data<T>();
          Buffer gx = make_buffer(x.dtype(), gv.size());
          Buffer gg = make_buffer(x.dtype(), usize(s.c));
          Buffer gb = make_buffer(x.dtype(), usize(s.c));
          auto& gxv = std::get<std::vector<T>>(gx);
          auto& ggv = std::get<std::vector<T>>(gg);
          auto& gbv = std::get<std::vector<T>>(gb);
          for (std::int64_t c = 0; c < s.c; ++c) {
            T sum_g = 0;
            T sum_gx = 0;
            for (std::int64_t n = 0; n < s.n; ++n) {
              const std::size_t base = usize((n * s.c + c) * hw);
              for (std::int64_t i = 0; i < hw; ++i) {
                sum_g += gv[base + usize(i)];
                sum_gx += gv[base + usize(i)] * xhat[base + usize(i)];
              }
            }
            ggv[usize(c)] = sum_gx;
            gbv[usize(c)] = sum_g;
            const T scale_c = gm[usize(c)] * inv_std[usize(c)];
            const T inv_count = T(1) / static_cast<T>(count);
            for (std::int64_t n = 0; n < s.n; ++n) {
              const std::size_t base = usize((n * s.c + c) * hw);
              for (std::int64_t i = 0; i < hw; ++i) {
                const std::size_t idx = base + usize(i);
                if (training) {
                  gxv[idx] = scale_c * (gv[idx] - sum_g * inv_count -
                                        xhat[idx] * sum_gx * inv_count);
                } else {
                  gxv[idx] = scale_c * gv[idx];
                }
              }
            }
          }
          emit(0, gx);
          emit(1, gg);
          emit(2, gb);
        });
  });
}

Tensor sum(const Tensor& x) {
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    T acc = 0;
    for (T v : x.data<T>()) acc += v;
    Buffer out = make_buffer(x.dtype(), 1, static_cast<double>(acc));
    std::get<std::vector<T>>(out)[0] = acc;
    return make_result({1, 1, 1, 1}, x.dtype(), std::move(out), "sum", {x},
                       [n = x.numel(), dt = x.dtype()](const Buffer& g, const Node::Emit& emit) {
                         emit(0, make_buffer(dt, usize(n), static_cast<double>(vec<T>(g)[0])));
                       });
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor spatial_mean(const Tensor& x) {
  const Shape s = x.shape();
  const std::int64_t hw = s.h * s.w;
  require(hw > 0, "spatial_mean: empty spatial extent " + s.str());
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto xv = x.data<T>();
    Buffer out = make_buffer(x.dtype(), usize(s.n * s.c));
    auto& o = std::get<std::vector<T>>(out);
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
      T acc = 0;
      for (std::int64_t i = 0; i < hw; ++i) acc += xv[usize(p * hw + i)];
      o[usize(p)] = acc / static_cast<T>(hw);
    }
    return make_result({s.n, s.c, 1, 1}, x.dtype(), std::move(out), "spatial_mean", {x},
                       [s, hw, dt = x.dtype()](const Buffer& g, const Node::Emit& emit) {
                         const auto& gv = vec<T>(g);
                         Buffer gx = make_buffer(dt, usize(s.numel()));
                         auto& gxv = std::get<std::vector<T>>(gx);
                         for (std::int64_t p = 0; p < s.n * s.c; ++p) {
                           const T v = gv[usize(p)] / static_cast<T>(hw);
                           for (std::int64_t i = 0; i < hw; ++i) gxv[usize(p * hw + i)] = v;
                         }
                         emit(0, gx);
                       });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape.numel() == x.numel(),
          "reshape: cannot view " + x.shape().str() + " as " + shape.str());
  return make_result(shape, x.dtype(), x.impl()->data, "reshape", {x},
                     [](const Buffer& g, const Node::Emit& emit) { emit(0, g); });
}

Tensor gather(const Tensor& x, std::span<const std::int64_t> indices) {
  const std::int64_t total = x.numel();
  for (std::int64_t i : indices) {
    require(i >= 0 && i < total, "gather: index " + std::to_string(i) +
                                     " out of range for " + x.shape().str());
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  const auto count = static_cast<std::int64_t>(idx.size());
  return dispatch(x.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto xv = x.data<T>();
    Buffer out = make_buffer(x.dtype(), idx.size());
    auto& o = std::get<std::vector<T>>(out);
    for (std::size_t i = 0; i < idx.size(); ++i) o[i] = xv[usize(idx[i])];
    return make_result({count, 1, 1, 1}, x.dtype(), std::move(out), "gather", {x},
                       [idx = std::move(idx), total, dt = x.dtype()](const Buffer& g,
                                                                     const Node::Emit& emit) {
                         const auto& gv = vec<T>(g);
                         Buffer gx = make_buffer(dt, usize(total));
                         auto& gxv = std::get<std::vector<T>>(gx);
                         for (std::size_t i = 0; i < idx.size(); ++i) gxv[usize(idx[i])] += gv[i];
                         emit(0, gx);
                       });
  });
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets, double eps) {
  check_same(probs, targets, "binary_cross_entropy");
  return dispatch(probs.dtype(), [&](auto tag) -> Tensor {
    using T = decltype(tag);
    const auto p = probs.data<T>();
    const auto t = targets.data<T>();
    const T lo = static_cast<T>(eps);
    const T hi = static_cast<T>(1.0 - eps);
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pc = std::clamp(p[i], lo, hi);
      acc -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
    }
    Buffer out = make_buffer(probs.dtype(), 1, acc);
    return make_result(
        {1, 1, 1, 1}, probs.dtype(), std::move(out), "binary_cross_entropy", {probs, targets},
        [probs, targets, lo, hi](const Buffer& g, const Node::Emit& emit) {
          const T go = vec<T>(g)[0];
          const auto p = probs.data<T>();
          const auto t = targets.data<T>();
          if (probs.requires_grad()) {
            Buffer gp = make_buffer(probs.dtype(), p.size());
            auto& gpv = std::get<std::vector<T>>(gp);
            for (std::size_t i = 0; i < p.size(); ++i) {
              if (p[i] > lo && p[i] < hi) {
                gpv[i] = go * (-(t[i] / p[i]) + (T(1) - t[i]) / (T(1) - p[i]));
              }
            }
            emit(0, gp);
          }
          if (targets.requires_grad()) {
            Buffer gt = make_buffer(probs.dtype(), p.size());
            auto& gtv = std::get<std::vector<T>>(gt);
            for (std::size_t i = 0; i < p.size(); ++i) {
              const T pc = std::clamp(p[i], lo, hi);
              gtv[i] = go * (-std::log(pc) + std::log(T(1) - pc));
            }
            emit(1, gt);
          }
        });
  });
}

}  // namespace dpf
