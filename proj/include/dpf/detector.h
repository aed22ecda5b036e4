#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "dpf/blocks.h"
#include "dpf/data.h"
#include "dpf/losses.h"
#include "dpf/metrics.h"
#include "dpf/optim.h"

namespace dpf {

/// Which of the three architectural additions are switched on.
struct VariantSpec {
  bool tdconv = false;
  bool tdsppf = false;
  bool dpafpn = false;

  /// baseline, a (TDSPPF), b (DPAFPN), c (TDSPPF + DPAFPN), full (all three).
  static VariantSpec named(const std::string& name);
  std::string name() const;
  /// Human-readable composition, e.g. "TDSPPF+DPAFPN".
  std::string composition() const;
  bool operator==(const VariantSpec&) const = default;
};
const std::vector<std::string>& variant_names();

struct AnchorSize {
  double w = 0;
  double h = 0;
};

/// Three anchors per scale (strides 8, 16, 32), normalised to the image side,
/// sorted by area within each scale and across scales.
struct AnchorSet {
  std::array<std::array<AnchorSize, 3>, 3> scales{};
  const AnchorSize& at(int flat) const { return scales[static_cast<std::size_t>(flat / 3)][static_cast<std::size_t>(flat % 3)]; }
};

/// Log-spaced square anchors covering the generator's default size range.
AnchorSet default_anchors();
/// Seeded k-means over (w, h) of the given boxes. Falls back to the defaults
/// when fewer than nine distinct sizes are available.
AnchorSet kmeans_anchors(const std::vector<Box>& boxes, std::uint64_t seed, int iterations = 50);

struct DetectorConfig {
  VariantSpec variant;
  int num_classes = 9;
  /// Backbone stage widths at strides 4, 8, 16, 32.
  std::array<std::int64_t, 4> stage_widths = {16, 32, 64, 128};
  /// Common channel width of the three neck outputs.
  std::int64_t neck_width = 64;
  AnchorSet anchors = default_anchors();
  Dilations dilations = kDefaultDilations;

  void validate() const;
  std::int64_t head_channels() const { return 3 * (5 + num_classes); }
};

/// Strided conv stack with one residual bottleneck per stage. Emits C3, C4,
/// C5 at strides 8, 16, 32.
class Backbone : public Module {
 public:
  Backbone(const std::array<std::int64_t, 4>& widths, Rng& rng, DType dtype);
  std::array<Tensor, 3> forward(const Tensor& images);
  std::array<std::int64_t, 3> out_channels() const { return {widths_[1], widths_[2], widths_[3]}; }

 private:
  std::array<std::int64_t, 4> widths_;
  ConvBlock* stem_;
  std::array<ConvBlock*, 4> down_{};
  std::array<ConvBlock*, 4> reduce_{};
  std::array<ConvBlock*, 4> expand_{};
};

class Detector : public Module {
 public:
  Detector(const DetectorConfig& config, Rng& rng, DType dtype = DType::kF32);

  /// Raw head maps, (N, 3*(5+K), H/s, W/s) for s = 8, 16, 32. Per anchor the
  /// channels are tx, ty, tw, th, objectness, K class logits.
  std::array<Tensor, 3> forward(const Tensor& images);

  const DetectorConfig& config() const { return config_; }
  Backbone& backbone() { return *backbone_; }
  PathAggregationNeck& neck() { return *neck_; }
  std::array<Conv2d*, 3> heads() const { return heads_; }

 private:
  DetectorConfig config_;
  Backbone* backbone_;
  PathAggregationNeck* neck_;
  std::array<Conv2d*, 3> heads_{};
};

inline constexpr std::array<int, 3> kStrides = {8, 16, 32};
inline constexpr double kMaxAnchorRatio = 4.0;

/// One positive sample: ground truth `gt_index` of image `image` is predicted
/// by anchor `anchor` (0..2) of scale `scale` at cell (gx, gy).
struct Assignment {
  int image = 0;
  int gt_index = 0;
  int scale = 0;
  int anchor = 0;
  int gx = 0;
  int gy = 0;
  Box target;
  int cls = 0;
};

struct AssignmentResult {
  std::vector<Assignment> positives;
  /// Ground truths with no anchor inside the ratio limit, or whose slot was
  /// already taken by an earlier ground truth.
  std::vector<int> unmatched;
};

/// max(w/aw, aw/w, h/ah, ah/h): 1 for a perfect shape match.
double anchor_ratio_score(const Box& box, const AnchorSize& anchor);

/// Best-ratio anchor over all nine (first wins on ties), centre cell only.
AssignmentResult assign_targets(const std::vector<Annotation>& gt, const AnchorSet& anchors,
                                const std::array<int, 3>& grid_sizes, int image = 0);

/// Box predicted by raw logits at one anchor slot, normalised coordinates.
Box decode_box(double tx, double ty, double tw, double th, int gx, int gy, int grid,
               const AnchorSize& anchor);
/// Logits that decode exactly to `target` at the given slot.
std::array<double, 4> encode_box(const Box& target, int gx, int gy, int grid,
                                 const AnchorSize& anchor);

/// Detections of image `n` of the raw head maps; score = sigmoid(obj) *
/// max_c sigmoid(class_c), kept when >= conf_threshold. Boxes clamped to [0,1].
std::vector<Detection> decode_predictions(const std::array<Tensor, 3>& raw, std::int64_t n,
                                          const AnchorSet& anchors, int num_classes,
                                          double conf_threshold);

/// Class-wise greedy suppression; order by score, then larger area, then
/// input position. Boxes overlapping a kept one with IoU > threshold are dropped.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

struct StepStats {
  double l_re = 0;
  double l_co = 0;
  double l_cl = 0;
  double total = 0;
  std::size_t positives = 0;
};

/// Stacks images into one (N,3,H,W) batch; rejects mixed sizes and sides not
/// divisible by 32.
Tensor stack_images(const std::vector<const LabeledImage*>& batch, DType dtype);

/// Loss of one batch: per-image sums of the three terms, averaged over the
/// batch. The returned tensors stay attached to the graph.
LossBreakdown detection_loss(Detector& model, const std::vector<const LabeledImage*>& batch,
                             const LossWeights& weights = {}, std::size_t* positives = nullptr);

/// Forward, loss, backward and one optimizer step.
StepStats train_step(Detector& model, Sgd& optimizer, const std::vector<const LabeledImage*>& batch,
                     const LossWeights& weights = {});

/// Eval-mode forward, decode and NMS for every image, in input order.
std::vector<std::vector<Detection>> predict(Detector& model, const std::vector<const LabeledImage*>& images,
                                            double conf_threshold, double nms_threshold,
                                            std::size_t batch_size = 8);

/// Endless stream of batches: each epoch is a fresh seeded permutation of
/// [0, n); a batch may straddle two epochs.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  /// Completed passes over the data.
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  Rng rng_;
};

/// Linear ramp from base/warmup to base over the first `warmup` steps.
double warmup_lr(double base, std::size_t step, std::size_t warmup);

/// Mean of the `window` values ending at index `end` (inclusive), fewer at the start.
double moving_average(const std::vector<double>& values, std::size_t end, std::size_t window);

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  SgdOptions sgd;
  std::size_t warmup_steps = 50;
  LossWeights weights;
  std::uint64_t seed = 0;
};

using StepCallback = std::function<void(std::size_t step, const StepStats& stats)>;

/// Runs `options.steps` SGD steps over seeded shuffles of `images`; returns
/// the per-step statistics.
std::vector<StepStats> train_detector(Detector& model, const std::vector<const LabeledImage*>& images,
                                      const TrainOptions& options, const StepCallback& on_step = {});

}  // namespace dpf
