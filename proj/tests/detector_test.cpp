#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dpf/detector.h"
#include "dpf/gradcheck.h"
#include "test_util.h"

namespace dpf {
namespace {

using testing::random_tensor;

DetectorConfig tiny_config(const std::string& variant) {
  DetectorConfig c;
  c.variant = VariantSpec::named(variant);
  c.stage_widths = {4, 4, 8, 8};
  c.neck_width = 4;
  c.num_classes = 3;
  return c;
}

std::vector<std::string> names_with_prefix(const Module& m, const std::string& prefix) {
  std::vector<std::string> out;
  for (const Parameter& p : m.parameters()) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.name);
  }
  return out;
}

Box random_box(Rng& rng) {
  return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.02, 0.6), rng.uniform(0.02, 0.6)};
}

void zero_heads(Detector& det) {
  for (Conv2d* h : det.heads()) {
    h->weight().copy_values_from(Tensor::zeros(h->weight().shape(), h->weight().dtype()));
    h->bias().copy_values_from(Tensor::zeros(h->bias().shape(), h->bias().dtype()));
  }
}

TEST(Variant, NamesRoundTripAndCompositions) {
  for (const std::string& n : variant_names()) EXPECT_EQ(VariantSpec::named(n).name(), n);
  EXPECT_EQ(VariantSpec::named("baseline").composition(), "none");
  EXPECT_EQ(VariantSpec::named("a").composition(), "TDSPPF");
  EXPECT_EQ(VariantSpec::named("b").composition(), "DPAFPN");
  EXPECT_EQ(VariantSpec::named("c").composition(), "TDSPPF+DPAFPN");
  EXPECT_EQ(VariantSpec::named("full").composition(), "TDConv+TDSPPF+DPAFPN");
  EXPECT_THROW(VariantSpec::named("yolo"), std::invalid_argument);
}

TEST(Detector, SharedSubtreesKeepTheirNamesAcrossVariants) {
  std::vector<std::string> backbone, heads;
  for (const std::string& v : variant_names()) {
    Rng rng(1);
    Detector det(tiny_config(v), rng);
    const auto b = names_with_prefix(det, "backbone.");
    std::vector<std::string> h = names_with_prefix(det, "head");
    if (backbone.empty()) {
      backbone = b, heads = h;
      ASSERT_FALSE(backbone.empty());
      continue;
    }
    EXPECT_EQ(b, backbone) << v;
    EXPECT_EQ(h, heads) << v;
  }
}

TEST(Detector, HeadShapesAtEachStride) {
  Rng rng(2);
  DetectorConfig c = tiny_config("full");
  Detector det(c, rng);
  const Tensor x = random_tensor({2, 3, 128, 96}, rng, DType::kF32, 0.0, 1.0);
  const auto raw = det.forward(x);
  const std::int64_t ch = 3 * (5 + 3);
  EXPECT_EQ(raw[0].shape(), (Shape{2, ch, 16, 12}));
  EXPECT_EQ(raw[1].shape(), (Shape{2, ch, 8, 6}));
  EXPECT_EQ(raw[2].shape(), (Shape{2, ch, 4, 3}));
}

TEST(Detector, RejectsSidesNotDivisibleBy32) {
  Rng rng(3);
  Detector det(tiny_config("baseline"), rng);
  EXPECT_THROW(det.forward(Tensor::zeros({1, 3, 100, 128})), ShapeError);
  EXPECT_THROW(det.forward(Tensor::zeros({1, 1, 64, 64})), ShapeError);
  LabeledImage odd{"x", Tensor::zeros({1, 3, 48, 48}), {}};
  EXPECT_THROW(stack_images({&odd}, DType::kF32), ShapeError);
}

TEST(Detector, InvalidConfigRejected) {
  Rng rng(4);
  DetectorConfig c = tiny_config("baseline");
  c.num_classes = 0;
  EXPECT_THROW(Detector(c, rng), std::invalid_argument);
  c = tiny_config("baseline");
  c.neck_width = 5;
  EXPECT_THROW(Detector(c, rng), std::invalid_argument);
}

TEST(Detector, OffsetPredictorsTrainAtReducedRate) {
  Rng rng(5);
  Detector det(tiny_config("full"), rng);
  int offsets = 0;
  for (const Parameter& p : det.trainable_parameters()) {
    const bool is_offset = p.name.find(".offset.") != std::string::npos;
    EXPECT_DOUBLE_EQ(p.lr_scale, is_offset ? kOffsetLrScale : 1.0) << p.name;
    offsets += is_offset;
  }
  EXPECT_EQ(offsets, 8);  // weight + bias of four fuse blocks
}

TEST(Anchors, DefaultsArePositiveAndSorted) {
  const AnchorSet a = default_anchors();
  for (int i = 0; i < 9; ++i) {
    EXPECT_GT(a.at(i).w, 0);
    if (i) EXPECT_LE(a.at(i - 1).w * a.at(i - 1).h, a.at(i).w * a.at(i).h);
  }
}

TEST(Anchors, KmeansIsSortedDeterministicAndFitsClusters) {
  // Nine tight clusters; the centres must be recovered.
  Rng rng(6);
  std::vector<Box> boxes;
  std::vector<std::pair<double, double>> truth;
  for (int k = 0; k < 9; ++k) {
    const double w = 0.03 * (k + 1), h = 0.02 * (9 - k) + 0.01 * k;
    truth.emplace_back(w, h);
    for (int i = 0; i < 20; ++i) boxes.push_back({0.5, 0.5, w * (1 + 0.01 * rng.normal()), h * (1 + 0.01 * rng.normal())});
  }
  const AnchorSet a = kmeans_anchors(boxes, 11);
  const AnchorSet b = kmeans_anchors(boxes, 11);
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(a.at(i).w, b.at(i).w);
    if (i) EXPECT_LE(a.at(i - 1).w * a.at(i - 1).h, a.at(i).w * a.at(i).h);
    double best = 1e9;
    for (auto [w, h] : truth) best = std::min(best, std::abs(a.at(i).w - w) + std::abs(a.at(i).h - h));
    EXPECT_LT(best, 0.005) << i;
  }
}

TEST(Anchors, KmeansFallsBackWithTooFewSizes) {
  const std::vector<Box> few(20, Box{0.5, 0.5, 0.1, 0.1});
  const AnchorSet a = kmeans_anchors(few, 0), d = default_anchors();
  for (int i = 0; i < 9; ++i) EXPECT_EQ(a.at(i).w, d.at(i).w);
}

TEST(Assign, ExactAnchorShapeIsChosen) {
  const AnchorSet anchors = default_anchors();
  for (int k = 0; k < 9; ++k) {
    const AnchorSize& an = anchors.at(k);
    const auto r = assign_targets({{{0.4, 0.6, an.w, an.h}, 1}}, anchors, {16, 8, 4});
    ASSERT_EQ(r.positives.size(), 1u);
    EXPECT_EQ(r.positives[0].scale * 3 + r.positives[0].anchor, k);
    EXPECT_DOUBLE_EQ(anchor_ratio_score(r.positives[0].target, an), 1.0);
  }
}

TEST(Assign, EmptyGroundTruthGivesEmptyAssignment) {
  const auto r = assign_targets({}, default_anchors(), {16, 8, 4});
  EXPECT_TRUE(r.positives.empty());
  EXPECT_TRUE(r.unmatched.empty());
}

TEST(Assign, MatchesBruteForceOverAllAnchors) {
  Rng rng(7);
  const AnchorSet anchors = default_anchors();
  const std::array<int, 3> grids = {16, 8, 4};
  for (int trial = 0; trial < 2000; ++trial) {
    const Box b = random_box(rng);
    const auto r = assign_targets({{b, 2}}, anchors, grids);
    // Brute force: every (scale, anchor) pair, strictly smaller score wins.
    int best = -1;
    double best_score = 1e300;
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 3; ++a) {
        const double sc = anchor_ratio_score(b, anchors.scales[s][a]);
        if (sc < best_score) best_score = sc, best = s * 3 + a;
      }
    }
    if (best_score >= kMaxAnchorRatio) {
      EXPECT_TRUE(r.positives.empty());
      EXPECT_EQ(r.unmatched, std::vector<int>{0});
      continue;
    }
    ASSERT_EQ(r.positives.size(), 1u);
    const Assignment& as = r.positives[0];
    EXPECT_EQ(as.scale * 3 + as.anchor, best);
    const int g = grids[as.scale];
    EXPECT_GE(as.gx, 0);
    EXPECT_LT(as.gx, g);
    EXPECT_GE(as.gy, 0);
    EXPECT_LT(as.gy, g);
    // The centre lies in the assigned cell.
    EXPECT_LE(as.gx, b.cx * g);
    EXPECT_LT(b.cx * g, as.gx + 1);
    EXPECT_LE(as.gy, b.cy * g);
    EXPECT_LT(b.cy * g, as.gy + 1);
    EXPECT_EQ(as.cls, 2);
  }
}

TEST(Assign, SecondBoxOnATakenSlotIsUnmatched) {
  const AnchorSet anchors = default_anchors();
  const Box b{0.31, 0.31, anchors.at(4).w, anchors.at(4).h};
  const auto r = assign_targets({{b, 0}, {b, 1}}, anchors, {16, 8, 4});
  ASSERT_EQ(r.positives.size(), 1u);
  EXPECT_EQ(r.positives[0].gt_index, 0);
  EXPECT_EQ(r.unmatched, std::vector<int>{1});
}

TEST(Assign, ShapeFarFromEveryAnchorIsUnmatched) {
  const auto r = assign_targets({{{0.5, 0.5, 0.9, 0.01}, 0}}, default_anchors(), {16, 8, 4});
  EXPECT_TRUE(r.positives.empty());
  EXPECT_EQ(r.unmatched.size(), 1u);
}

TEST(Decode, ZeroLogitsGiveCellCentreAndAnchorSize) {
  const AnchorSize an{0.1, 0.2};
  const Box b = decode_box(0, 0, 0, 0, 3, 5, 8, an);
  EXPECT_DOUBLE_EQ(b.cx, 3.5 / 8);
  EXPECT_DOUBLE_EQ(b.cy, 5.5 / 8);
  EXPECT_DOUBLE_EQ(b.w, 0.1);
  EXPECT_DOUBLE_EQ(b.h, 0.2);
}

TEST(Decode, EncodeInvertsDecodeOnGeneratedScenes) {
  SceneSpec spec;
  spec.image_size = 32;  // labels only; the pixels are irrelevant here
  const AnchorSet anchors = default_anchors();
  std::size_t checked = 0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const LabeledImage img = generate_scene(spec, i);
    for (const Assignment& a : assign_targets(img.labels, anchors, {16, 8, 4}).positives) {
      const int g = 16 >> a.scale;
      const AnchorSize& an = anchors.scales[a.scale][a.anchor];
      const auto t = encode_box(a.target, a.gx, a.gy, g, an);
      const Box d = decode_box(t[0], t[1], t[2], t[3], a.gx, a.gy, g, an);
      EXPECT_NEAR(d.cx, a.target.cx, 1e-5);
      EXPECT_NEAR(d.cy, a.target.cy, 1e-5);
      EXPECT_NEAR(d.w, a.target.w, 1e-5);
      EXPECT_NEAR(d.h, a.target.h, 1e-5);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Decode, UntrainedZeroHeads) {
  Rng rng(8);
  DetectorConfig c = tiny_config("baseline");
  Detector det(c, rng);
  zero_heads(det);
  det.eval();
  NoGradGuard guard;
  const auto raw = det.forward(random_tensor({1, 3, 64, 64}, rng, DType::kF32, 0.0, 1.0));
  EXPECT_TRUE(decode_predictions(raw, 0, c.anchors, c.num_classes, 0.3).empty());
  EXPECT_TRUE(decode_predictions(raw, 0, c.anchors, c.num_classes, 1.0).empty());
  const auto all = decode_predictions(raw, 0, c.anchors, c.num_classes, 0.25);
  EXPECT_EQ(all.size(), 3u * (8 * 8 + 4 * 4 + 2 * 2));
  for (const Detection& d : all) {
    EXPECT_DOUBLE_EQ(d.score, 0.25);
    EXPECT_EQ(d.cls, 0);
    EXPECT_GE(d.box.cx - d.box.w / 2, -1e-12);
    EXPECT_LE(d.box.cx + d.box.w / 2, 1 + 1e-12);
  }
}

// Reference suppression written from the definition: a box survives iff no
// surviving same-class box ranked before it overlaps it by more than thr.
std::vector<Detection> nms_oracle(const std::vector<Detection>& dets, double thr) {
  std::vector<std::size_t> idx(dets.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto before = [&](std::size_t i, std::size_t j) {
    const Detection &a = dets[i], &b = dets[j];
    if (a.score != b.score) return a.score > b.score;
    const double aa = a.box.w * a.box.h, ab = b.box.w * b.box.h;
    if (aa != ab) return aa > ab;
    return i < j;
  };
  // Selection sort keeps the oracle independent of std::stable_sort.
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      if (before(idx[j], idx[i])) std::swap(idx[i], idx[j]);
  std::vector<bool> alive(dets.size(), false);
  std::vector<Detection> out;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    bool ok = true;
    for (std::size_t q = 0; q < r; ++q) {
      const std::size_t j = idx[q];
      if (alive[j] && dets[j].cls == dets[idx[r]].cls && iou(dets[j].box, dets[idx[r]].box) > thr) ok = false;
    }
    alive[idx[r]] = ok;
    if (ok) out.push_back(dets[idx[r]]);
  }
  return out;
}

TEST(Nms, MatchesDefinitionOnRandomSets) {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Detection> dets;
    const int n = 1 + static_cast<int>(rng.below(25));
    for (int i = 0; i < n; ++i) {
      // Coarse scores and sizes force ties.
      Box b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), 0.1 * (1 + rng.below(3)), 0.1 * (1 + rng.below(3))};
      dets.push_back({b, static_cast<int>(rng.below(3)), 0.1 * (1 + rng.below(5))});
    }
    const auto got = nms(dets, 0.45);
    const auto want = nms_oracle(dets, 0.45);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].cls, want[i].cls);
      EXPECT_EQ(got[i].score, want[i].score);
      EXPECT_EQ(got[i].box.cx, want[i].box.cx);
    }
    // Kept set: no same-class pair above the threshold.
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j)
        if (got[i].cls == got[j].cls) EXPECT_LE(iou(got[i].box, got[j].box), 0.45);
  }
}

TEST(Nms, ClassesDoNotSuppressEachOther) {
  const Box b{0.5, 0.5, 0.2, 0.2};
  const auto kept = nms({{b, 0, 0.9}, {b, 1, 0.8}, {b, 0, 0.7}}, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].cls, 0);
  EXPECT_EQ(kept[1].cls, 1);
}

TEST(Nms, EqualScoresPreferTheLargerBox) {
  const auto kept = nms({{{0.5, 0.5, 0.2, 0.2}, 0, 0.5}, {{0.5, 0.5, 0.21, 0.21}, 0, 0.5}}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].box.w, 0.21);
}

class DetectionLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SceneSpec spec;
    spec.image_size = 64;
    spec.num_classes = 3;
    spec.seed = 5;
    for (int i = 0; i < 2; ++i) {
      images_.push_back(generate_scene(spec, static_cast<std::uint64_t>(i)));
      images_.back().image = images_.back().image.to(DType::kF64);
    }
  }
  std::vector<const LabeledImage*> batch() const { return {&images_[0], &images_[1]}; }
  std::vector<LabeledImage> images_;
};

TEST_F(DetectionLossTest, EmptyGroundTruthLeavesOnlyObjectness) {
  for (auto& im : images_) im.labels.clear();
  Rng rng(10);
  Detector det(tiny_config("full"), rng, DType::kF64);
  std::size_t pos = 99;
  const LossBreakdown l = detection_loss(det, batch(), {}, &pos);
  EXPECT_EQ(pos, 0u);
  EXPECT_EQ(l.l_re.item(), 0.0);
  EXPECT_EQ(l.l_cl.item(), 0.0);
  EXPECT_GT(l.l_co.item(), 0.0);
  l.total.backward();  // still a valid graph
}

TEST_F(DetectionLossTest, PositiveCountEqualsAssignmentCount) {
  Rng rng(11);
  DetectorConfig c = tiny_config("baseline");
  Detector det(c, rng, DType::kF64);
  std::size_t expected = 0;
  for (const auto& im : images_) expected += assign_targets(im.labels, c.anchors, {8, 4, 2}).positives.size();
  ASSERT_GT(expected, 0u);
  std::size_t pos = 0;
  detection_loss(det, batch(), {}, &pos);
  EXPECT_EQ(pos, expected);
}

TEST_F(DetectionLossTest, MatchesScalarRecomputationFromRawMaps) {
  Rng rng(12);
  DetectorConfig c = tiny_config("baseline");
  Detector det(c, rng, DType::kF64);
  const LossBreakdown l = detection_loss(det, batch());
  NoGradGuard guard;
  const auto raw = det.forward(stack_images(batch(), DType::kF64));
  // Straight-line recomputation with scalar code.
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  auto bce = [](double p, double t) {
    p = std::clamp(p, 1e-7, 1 - 1e-7);
    return -(t * std::log(p) + (1 - t) * std::log(1 - p));
  };
  double re = 0, co = 0, cl = 0;
  const int k = c.num_classes;
  for (int i = 0; i < 2; ++i) {
    const auto as = assign_targets(images_[static_cast<std::size_t>(i)].labels, c.anchors, {8, 4, 2}, i);
    for (int s = 0; s < 3; ++s) {
      const Tensor& r = raw[static_cast<std::size_t>(s)];
      for (int a = 0; a < 3; ++a)
        for (std::int64_t y = 0; y < r.shape().h; ++y)
          for (std::int64_t x = 0; x < r.shape().w; ++x) {
            bool positive = false;
            for (const Assignment& p : as.positives)
              positive |= p.scale == s && p.anchor == a && p.gx == x && p.gy == y;
            co += bce(sig(r.at(i, a * (5 + k) + 4, y, x)), positive ? 1 : 0);
          }
    }
    for (const Assignment& p : as.positives) {
      const Tensor& r = raw[static_cast<std::size_t>(p.scale)];
      auto at = [&](int ch) { return r.at(i, p.anchor * (5 + k) + ch, p.gy, p.gx); };
      const Box b = decode_box(at(0), at(1), at(2), at(3), p.gx, p.gy, static_cast<int>(r.shape().w),
                               c.anchors.scales[p.scale][p.anchor]);
      re += eiou_loss(b, p.target);
      for (int cc = 0; cc < k; ++cc) cl += bce(sig(at(5 + cc)), cc == p.cls ? 1 : 0);
    }
  }
  EXPECT_NEAR(l.l_re.item(), re / 2, 1e-9);
  EXPECT_NEAR(l.l_co.item(), co / 2, 1e-9);
  EXPECT_NEAR(l.l_cl.item(), cl / 2, 1e-9);
  EXPECT_NEAR(l.total.item(), (re + co + cl) / 2, 1e-9);
}

TEST_F(DetectionLossTest, GradientsMatchFiniteDifferences) {
  for (const std::string v : {"baseline", "full"}) {
    Rng rng(13);
    Detector det(tiny_config(v), rng, DType::kF64);
    // Move the deformable offsets off integer sample positions, where
    // bilinear interpolation has kinks that central differences straddle.
    Rng jitter(14);
    for (const Parameter& p : det.trainable_parameters()) {
      if (p.name.find(".offset.") == std::string::npos) continue;
      for (std::int64_t i = 0; i < p.tensor.numel(); ++i) Tensor(p.tensor).set(i, 0.05 * jitter.normal());
    }
    std::vector<Tensor> leaves;
    for (const Parameter& p : det.trainable_parameters()) leaves.push_back(p.tensor);
    const double err = finite_diff_check_leaves([&] { return detection_loss(det, batch()).total; }, leaves,
                                                {1e-5, 12, 3});
    EXPECT_LT(err, 5e-3) << v;
  }
}

TEST(Training, SamplerCoversEveryItemOncePerEpoch) {
  BatchSampler s(10, 4, 3);
  std::vector<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    const auto b = s.next();
    EXPECT_EQ(b.size(), 4u);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  EXPECT_EQ(s.epoch(), 2u);
  for (int e = 0; e < 2; ++e) {
    std::set<std::size_t> epoch(seen.begin() + e * 10, seen.begin() + (e + 1) * 10);
    EXPECT_EQ(epoch.size(), 10u);
  }
  BatchSampler again(10, 4, 3);
  EXPECT_EQ(again.next(), std::vector<std::size_t>(seen.begin(), seen.begin() + 4));
  EXPECT_THROW(BatchSampler(0, 4, 0), std::invalid_argument);
}

TEST(Training, WarmupAndMovingAverage) {
  EXPECT_DOUBLE_EQ(warmup_lr(0.01, 0, 50), 0.0002);
  EXPECT_DOUBLE_EQ(warmup_lr(0.01, 49, 50), 0.01);
  EXPECT_DOUBLE_EQ(warmup_lr(0.01, 500, 50), 0.01);
  EXPECT_DOUBLE_EQ(warmup_lr(0.01, 0, 0), 0.01);
  const std::vector<double> v = {4, 2, 6, 8};
  EXPECT_DOUBLE_EQ(moving_average(v, 0, 3), 4.0);
  EXPECT_DOUBLE_EQ(moving_average(v, 3, 3), 16.0 / 3);
  EXPECT_THROW(moving_average(v, 4, 3), std::out_of_range);
}

TEST(Training, ShortRunReducesLossOnTinyModel) {
  SceneSpec spec;
  spec.image_size = 64;
  spec.num_classes = 3;
  spec.seed = 21;
  std::vector<LabeledImage> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(generate_scene(spec, static_cast<std::uint64_t>(i)));
  std::vector<const LabeledImage*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  Rng rng(15);
  Detector det(tiny_config("full"), rng);
  TrainOptions opt;
  opt.steps = 60;
  opt.batch_size = 4;
  opt.warmup_steps = 10;
  std::size_t calls = 0;
  const auto hist = train_detector(det, ptrs, opt, [&](std::size_t, const StepStats&) { ++calls; });
  EXPECT_EQ(calls, 60u);
  std::vector<double> totals;
  for (const auto& h : hist) totals.push_back(h.total);
  EXPECT_LT(moving_average(totals, 59, 10), 0.5 * moving_average(totals, 9, 10));
}

TEST(Predict, RestoresModeAndKeepsOrder) {
  SceneSpec spec;
  spec.image_size = 64;
  spec.num_classes = 3;
  std::vector<LabeledImage> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(generate_scene(spec, static_cast<std::uint64_t>(i)));
  Rng rng(16);
  Detector det(tiny_config("baseline"), rng);
  std::vector<const LabeledImage*> ptrs = {&imgs[0], &imgs[1], &imgs[2]};
  const auto all = predict(det, ptrs, 0.0, 0.6, 2);
  EXPECT_TRUE(det.training());
  ASSERT_EQ(all.size(), 3u);
  const auto single = predict(det, {&imgs[2]}, 0.0, 0.6);
  ASSERT_EQ(single[0].size(), all[2].size());
  for (std::size_t i = 0; i < single[0].size(); ++i) EXPECT_NEAR(single[0][i].score, all[2][i].score, 1e-6);
}

}  // namespace
}  // namespace dpf
