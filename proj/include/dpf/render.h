#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dpf/data.h"
#include "dpf/metrics.h"

namespace dpf {

using Rgb = std::array<double, 3>;

/// Inclusive pixel bounds. Column x covers [x, x+1) in pixel units.
struct PixelRect {
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const PixelRect&) const = default;
};

/// Edges round to the nearest pixel boundary; the right/bottom edge is the
/// last covered column/row. Clamped to the image, at least one pixel.
PixelRect to_pixel_rect(const Box& box, std::int64_t width, std::int64_t height);

/// One-pixel outline exactly on the rectangle's perimeter. `image` (1,3,H,W).
void draw_rect(Tensor& image, const PixelRect& rect, const Rgb& color);

/// Reserved for missed ground truths.
inline constexpr Rgb kMissColor = {1.0, 0.0, 0.0};
/// Distinct, never red.
Rgb class_color(int cls);

struct RenderResult {
  Tensor image;
  std::vector<PixelRect> predicted;
  /// Ground truths whose IoU with every prediction is below 0.5.
  std::vector<PixelRect> missed;
};

inline constexpr double kMissIou = 0.5;

/// Predictions in class colours, then missed ground truths in red on top.
RenderResult render_detections(const Tensor& image, const std::vector<Detection>& predictions,
                               const std::vector<Annotation>& ground_truth);

}  // namespace dpf
