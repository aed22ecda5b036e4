#pragma once

#include <utility>
#include <vector>

#include "dpf/tensor.h"

namespace dpf {

/// Axis-aligned box as centre and extent, in whatever frame the caller uses.
struct Box {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;
};

/// (prediction, target) pairs: the positive samples of one image or batch.
using MatchSet = std::vector<std::pair<Box, Box>>;

/// Guard for enclosing-box denominators.
inline constexpr double kBoxEps = 1e-9;

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

/// IoU minus three penalties normalised by the smallest enclosing box:
/// centre distance^2 / diagonal^2, (w - w')^2 / cw^2 and (h - h')^2 / ch^2.
/// A penalty whose denominator vanishes is taken as zero.
double eiou(const Box& pred, const Box& target);
inline double eiou_loss(const Box& pred, const Box& target) { return 1.0 - eiou(pred, target); }

/// Sum of 1 - EIoU over the pairs; 0 for an empty set.
double regression_loss(const MatchSet& matches);

/// Differentiable sum of 1 - EIoU. `pred` and `target` are (S,4,1,1) holding
/// (cx, cy, w, h) per row. Gradients flow into both arguments. S may be 0.
Tensor eiou_loss_sum(const Tensor& pred, const Tensor& target);

/// Per-row negative cosine similarity of (N,D,1,1) tensors, averaged over N.
Tensor neg_cosine(const Tensor& p, const Tensor& z);

/// Symmetric Siamese objective 0.5*D(pA, sg(zB)) + 0.5*D(pB, sg(zA)).
/// `stop_targets = false` lets gradients flow into the targets as well; it
/// exists only to demonstrate why the stop-gradient matters.
Tensor simsiam_loss(const Tensor& pa, const Tensor& pb, const Tensor& za, const Tensor& zb,
                    bool stop_targets = true);

inline constexpr double kProbEps = 1e-7;

/// Summed binary cross-entropy of objectness probabilities against {0,1}
/// indicators, over every predicted box. Throws on any other target value.
Tensor confidence_loss(const Tensor& pred_conf, const Tensor& target_conf);

/// Summed per-class binary cross-entropy, (S,K,1,1) probabilities against
/// targets of the same shape.
Tensor classification_loss(const Tensor& pred_probs, const Tensor& target_probs);

struct LossWeights {
  double re = 1.0;
  double co = 1.0;
  double cl = 1.0;
};

struct LossBreakdown {
  Tensor l_re;
  Tensor l_co;
  Tensor l_cl;
  Tensor total;
};

/// total = re*l_re + co*l_co + cl*l_cl; unit weights give the plain sum.
LossBreakdown total_loss(const Tensor& l_re, const Tensor& l_co, const Tensor& l_cl,
                         const LossWeights& weights = {});

}  // namespace dpf
