#include "dpf/render.h"

#include <algorithm>
#include <cmath>

namespace dpf {

namespace {

std::pair<std::int64_t, std::int64_t> span(double lo, double hi, std::int64_t extent) {
  auto a = static_cast<std::int64_t>(std::lround(lo * static_cast<double>(extent)));
  auto b = static_cast<std::int64_t>(std::lround(hi * static_cast<double>(extent))) - 1;
  a = std::clamp<std::int64_t>(a, 0, extent - 1);
  b = std::clamp<std::int64_t>(b, a, extent - 1);
  return {a, b};
}

}  // namespace

PixelRect to_pixel_rect(const Box& box, std::int64_t width, std::int64_t height) {
  if (width < 1 || height < 1) throw std::invalid_argument("to_pixel_rect: empty image");
  const auto [x0, x1] = span(box.cx - box.w / 2, box.cx + box.w / 2, width);
  const auto [y0, y1] = span(box.cy - box.h / 2, box.cy + box.h / 2, height);
  return {x0, y0, x1, y1};
}

void draw_rect(Tensor& image, const PixelRect& r, const Rgb& color) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("draw_rect: expected (1,3,H,W), got " + s.str());
  if (r.x0 < 0 || r.y0 < 0 || r.x1 >= s.w || r.y1 >= s.h || r.x0 > r.x1 || r.y0 > r.y1) {
    throw std::invalid_argument("draw_rect: rectangle outside the image");
  }
  auto put = [&](std::int64_t y, std::int64_t x) {
    for (std::int64_t c = 0; c < 3; ++c) image.set((c * s.h + y) * s.w + x, color[static_cast<std::size_t>(c)]);
  };
  for (std::int64_t x = r.x0; x <= r.x1; ++x) {
    put(r.y0, x);
    put(r.y1, x);
  }
  for (std::int64_t y = r.y0; y <= r.y1; ++y) {
    put(y, r.x0);
    put(y, r.x1);
  }
}

Rgb class_color(int cls) {
  static constexpr Rgb kPalette[] = {
      {0.0, 1.0, 0.0}, {0.0, 0.6, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}, {0.0, 1.0, 1.0},
      {1.0, 0.6, 0.0}, {0.6, 0.3, 1.0}, {1.0, 1.0, 1.0}, {0.5, 1.0, 0.5},
  };
  constexpr int n = static_cast<int>(std::size(kPalette));
  return kPalette[((cls % n) + n) % n];
}

RenderResult render_detections(const Tensor& image, const std::vector<Detection>& predictions,
                               const std::vector<Annotation>& ground_truth) {
  RenderResult out;
  out.image = image.clone();
  const Shape s = image.shape();
  for (const Detection& d : predictions) {
    out.predicted.push_back(to_pixel_rect(d.box, s.w, s.h));
    draw_rect(out.image, out.predicted.back(), class_color(d.cls));
  }
  for (const Annotation& g : ground_truth) {
    double best = 0;
    for (const Detection& d : predictions) best = std::max(best, iou(d.box, g.box));
    if (best >= kMissIou) continue;
    out.missed.push_back(to_pixel_rect(g.box, s.w, s.h));
    draw_rect(out.image, out.missed.back(), kMissColor);
  }
  return out;
}

}  // namespace dpf
