#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dpf/data.h"
#include "dpf/losses.h"

namespace dpf {

/// A scored prediction. Boxes share the frame of the ground truth they are
/// evaluated against (normalised coordinates throughout this library).
struct Detection {
  Box box;
  int cls = 0;
  double score = 0;
};

/// IoU by counting the centres of a `cell`-spaced grid that fall inside each
/// box. Converges to the analytic value as cell -> 0.
double rasterized_iou_oracle(const Box& a, const Box& b, double cell);

struct PRPoint {
  double recall = 0;
  double precision = 0;
};

struct ApResult {
  double ap = 0;
  /// One point per detection in descending score order.
  std::vector<PRPoint> curve;
  std::size_t num_gt = 0;
  /// Highest recall reached using every detection.
  double max_recall = 0;
};

/// Single-class AP. `detections[i]` and `ground_truth[i]` belong to image i.
/// Detections are processed by descending score (ties: image order, then
/// input order); each takes the highest-IoU ground truth not yet matched in
/// its image and counts as a true positive when that IoU >= threshold. AP is
/// the area under the all-points interpolated precision envelope.
ApResult average_precision(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<std::vector<Box>>& ground_truth,
                           double iou_threshold);

std::vector<double> coco_thresholds();  // 0.50, 0.55, ..., 0.95

struct MetricsReport {
  int num_classes = 0;
  std::size_t images = 0;
  std::size_t targets = 0;
  /// Per class AP at IoU 0.5; meaningful only where `present`.
  std::vector<double> ap50;
  std::vector<bool> present;
  double map50 = 0;
  /// mAR: per threshold, the mean over present classes of the maximum
  /// recall; then averaged over thresholds.
  double mar = 0;
  std::vector<double> thresholds;
  std::vector<double> map_at;
  std::vector<double> mar_at;
};

/// Evaluates per-image predictions against per-image ground truth. Throws
/// std::invalid_argument on any class id outside [0, num_classes) or when the
/// image counts differ.
MetricsReport evaluate(const std::vector<std::vector<Detection>>& predictions,
                       const std::vector<std::vector<Annotation>>& ground_truth, int num_classes);

std::string report_json(const MetricsReport& report, const std::string& model,
                        const std::vector<std::string>& class_names);

/// Table-shaped CSV: model, mAP, then one AP column per class (percent, 6 decimals).
std::string report_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                       const std::vector<std::string>& class_names);

}  // namespace dpf
