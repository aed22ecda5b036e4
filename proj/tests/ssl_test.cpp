#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "dpf/checkpoint.h"
#include "dpf/ssl.h"
#include "test_util.h"

namespace dpf {
namespace {

namespace fs = std::filesystem;
using testing::random_tensor;

SiameseConfig tiny_siamese() {
  SiameseConfig c;
  c.stage_widths = {4, 4, 8, 8};
  c.projector_hidden = 16;
  c.projection_dim = 8;
  c.predictor_hidden = 4;
  return c;
}

Tensor test_image(std::int64_t size = 64, std::uint64_t index = 0) {
  SceneSpec spec;
  spec.image_size = size;
  return generate_scene(spec, index).image;
}

TEST(Augment, IdentitySpecReturnsTheOriginalTwice) {
  const Tensor img = test_image(64);
  const auto [a, b] = augment_pair(img, AugmentationSpec::identity(64), 5);
  EXPECT_EQ(a.values(), img.values());
  EXPECT_EQ(b.values(), img.values());
}

TEST(Augment, IdentitySpecHalvingAveragesPixelQuads) {
  const Tensor img = test_image(64);
  const Tensor v = augment_view(img, AugmentationSpec::identity(32), 1);
  ASSERT_EQ(v.shape(), (Shape{1, 3, 32, 32}));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x = 0; x < 32; ++x) {
        const double want = (img.at(0, c, 2 * y, 2 * x) + img.at(0, c, 2 * y, 2 * x + 1) +
                             img.at(0, c, 2 * y + 1, 2 * x) + img.at(0, c, 2 * y + 1, 2 * x + 1)) / 4;
        EXPECT_NEAR(v.at(0, c, y, x), want, 1e-6);
      }
}

TEST(Augment, DeterministicPerSeedAndIndependentAcrossViews) {
  const Tensor img = test_image(64);
  AugmentationSpec spec;
  spec.target_size = 32;
  const auto p1 = augment_pair(img, spec, 42);
  const auto p2 = augment_pair(img, spec, 42);
  EXPECT_EQ(p1.first.values(), p2.first.values());
  EXPECT_EQ(p1.second.values(), p2.second.values());
  EXPECT_NE(p1.first.values(), p1.second.values());
  EXPECT_NE(augment_pair(img, spec, 43).first.values(), p1.first.values());
}

TEST(Augment, OutputsStayInRangeAtTargetSize) {
  AugmentationSpec spec;
  spec.target_size = 32;
  spec.brightness = 0.9;
  spec.contrast = 0.9;
  spec.color_prob = 1;
  const Tensor img = test_image(64);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor v = augment_view(img, spec, s);
    ASSERT_EQ(v.shape(), (Shape{1, 3, 32, 32}));
    for (double x : v.values()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(Augment, GrayscaleViewHasEqualChannels) {
  AugmentationSpec spec;
  spec.target_size = 32;
  spec.grayscale_prob = 1;
  const Tensor v = augment_view(test_image(64), spec, 3);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x) {
      EXPECT_EQ(v.at(0, 0, y, x), v.at(0, 1, y, x));
      EXPECT_EQ(v.at(0, 1, y, x), v.at(0, 2, y, x));
    }
}

TEST(Augment, FlipOnlyMirrorsColumns) {
  AugmentationSpec spec = AugmentationSpec::identity(64);
  spec.hflip_prob = 1;
  const Tensor img = test_image(64);
  const Tensor v = augment_view(img, spec, 0);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 64; y += 7)
      for (std::int64_t x = 0; x < 64; ++x) EXPECT_EQ(v.at(0, c, y, x), img.at(0, c, y, 63 - x));
}

TEST(Augment, InvalidSpecsRejected) {
  AugmentationSpec s;
  s.crop_scale_min = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.crop_scale_min = 0.9;
  s.crop_scale_max = 0.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.target_size = 100;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.grayscale_prob = 1.5;
  EXPECT_THROW(augment_view(test_image(64), s, 0), std::invalid_argument);
}

class SiameseTest : public ::testing::Test {
 protected:
  SiameseTest() : rng_(1), model_(tiny_siamese(), rng_, DType::kF64) {}
  Tensor batch(std::uint64_t seed) {
    Rng r(seed);
    return random_tensor({4, 3, 32, 32}, r, DType::kF64, 0.0, 1.0);
  }
  Rng rng_;
  SiameseModel model_;
};

TEST_F(SiameseTest, OneEncoderServesBothViews) {
  for (const Parameter& p : model_.parameters()) {
    EXPECT_TRUE(p.name.rfind("backbone.", 0) == 0 || p.name.rfind("projector.", 0) == 0 ||
                p.name.rfind("predictor.", 0) == 0)
        << p.name;
  }
  const Tensor x = batch(2);
  const Tensor z1 = model_.encode(x), z2 = model_.encode(x);
  EXPECT_EQ(z1.values(), z2.values());
  EXPECT_EQ(z1.shape(), (Shape{4, 8, 1, 1}));
  EXPECT_EQ(model_.predict(z1).shape(), z1.shape());
}

TEST_F(SiameseTest, LossIsBoundedAndSymmetric) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor a = batch(10 + s), b = batch(20 + s);
    const double ab = siamese_forward(model_, a, b).loss.item();
    const double ba = siamese_forward(model_, b, a).loss.item();
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, ba, 1e-6);
  }
}

TEST_F(SiameseTest, TargetBranchPassesNoGradientToTheEncoder) {
  const Tensor a = batch(3), b = batch(4);
  const Tensor probe = find_parameter(model_, "backbone.stem.conv.weight");

  model_.zero_grad();
  siamese_forward(model_, a, b).loss.backward();
  const std::vector<double> full = probe.grad_values();

  // Same objective with the targets replaced by plain constants: only the
  // predictor path remains, so the gradients must agree bit for bit.
  model_.zero_grad();
  const Tensor za = model_.encode(a), zb = model_.encode(b);
  const Tensor pa = model_.predict(za), pb = model_.predict(zb);
  const Tensor ca = Tensor::from_values(za.shape(), za.values(), DType::kF64);
  const Tensor cb = Tensor::from_values(zb.shape(), zb.values(), DType::kF64);
  simsiam_loss(pa, pb, ca, cb, false).backward();
  EXPECT_EQ(probe.grad_values(), full);

  // And the targets themselves receive nothing through the loss.
  const Tensor ta = Tensor::from_values(za.shape(), za.values(), DType::kF64);
  const Tensor tb = Tensor::from_values(zb.shape(), zb.values(), DType::kF64);
  Tensor(ta).set_requires_grad(true);
  Tensor(tb).set_requires_grad(true);
  const Tensor qa = Tensor::from_values(pa.shape(), pa.values(), DType::kF64);
  const Tensor qb = Tensor::from_values(pb.shape(), pb.values(), DType::kF64);
  Tensor(qa).set_requires_grad(true);
  simsiam_loss(qa, qb, ta, tb).backward();
  for (const Tensor* t : {&ta, &tb}) {
    if (!t->has_grad()) continue;
    for (double g : t->grad_values()) EXPECT_EQ(g, 0.0);
  }
}

TEST_F(SiameseTest, MismatchedViewsRejected) {
  Rng r(5);
  const Tensor a = batch(6);
  const Tensor b = random_tensor({4, 3, 64, 64}, r, DType::kF64, 0.0, 1.0);
  EXPECT_THROW(siamese_forward(model_, a, b), ShapeError);
  Adam opt(model_.trainable_parameters(), {});
  EXPECT_THROW(pretrain_step(model_, opt, {}), std::invalid_argument);
}

TEST(Collapse, IdenticalRowsGiveZero) {
  const std::vector<double> row = {0.3, -1.2, 2.0, 0.5};
  std::vector<double> v;
  for (int i = 0; i < 6; ++i) v.insert(v.end(), row.begin(), row.end());
  EXPECT_NEAR(collapse_metric(Tensor::from_values({6, 4, 1, 1}, v, DType::kF64)), 0.0, 1e-15);
}

TEST(Collapse, GaussianRowsNearInverseSqrtDim) {
  Rng rng(7);
  std::vector<double> v(512 * 64);
  for (double& x : v) x = rng.normal();
  const double m = collapse_metric(Tensor::from_values({512, 64, 1, 1}, v, DType::kF64));
  EXPECT_NEAR(m, 1.0 / 8, 0.3 / 8);
  EXPECT_DOUBLE_EQ(collapse_floor(64), 0.25 / 8);
  EXPECT_THROW(collapse_metric(Tensor::zeros({1, 4, 1, 1})), std::invalid_argument);
}

TEST(Pretrain, ShortRunLowersLossAndIsReproducible) {
  auto run = [] {
    Rng rng(3);
    SiameseModel m(tiny_siamese(), rng);
    Adam opt(m.trainable_parameters(), {3e-3});
    AugmentationSpec aug;
    aug.target_size = 32;
    std::vector<Tensor> imgs;
    for (std::uint64_t i = 0; i < 8; ++i) imgs.push_back(test_image(64, i));
    BatchSampler sampler(imgs.size(), 4, 1);
    std::vector<double> losses;
    for (std::uint64_t s = 0; s < 60; ++s) {
      std::vector<std::pair<Tensor, Tensor>> views;
      for (std::size_t i : sampler.next()) views.push_back(augment_pair(imgs[i], aug, s * 100 + i));
      losses.push_back(pretrain_step(m, opt, views));
    }
    return losses;
  };
  const auto l1 = run(), l2 = run();
  EXPECT_EQ(l1, l2);
  for (double l : l1) {
    EXPECT_GE(l, -1.0);
    EXPECT_LE(l, 1.0);
  }
  EXPECT_LT(moving_average(l1, 59, 10), moving_average(l1, 9, 10) - 0.05);
}

TEST(Export, BackboneLoadsIntoDetectorByName) {
  Rng rng(9);
  SiameseModel m(tiny_siamese(), rng);
  const fs::path path = fs::temp_directory_path() / "dpf_ssl_export_test.ckpt";
  export_backbone(m, path);
  for (const NamedTensor& t : read_checkpoint(path)) EXPECT_EQ(t.name.rfind("backbone.", 0), 0u) << t.name;

  DetectorConfig dc;
  dc.stage_widths = tiny_siamese().stage_widths;
  dc.neck_width = 4;
  Rng rng2(10);
  Detector det(dc, rng2);
  std::size_t backbone_params = 0;
  for (const Parameter& p : det.parameters()) backbone_params += p.name.rfind("backbone.", 0) == 0;
  LoadOptions lo;
  lo.prefix = "backbone.";
  const LoadReport rep = load_checkpoint(path, det, lo);
  EXPECT_EQ(rep.matched.size(), backbone_params);
  EXPECT_TRUE(rep.unmatched_in_file.empty());
  EXPECT_EQ(find_parameter(det, "backbone.stem.conv.weight").values(),
            find_parameter(m, "backbone.stem.conv.weight").values());
  fs::remove(path);
}

}  // namespace
}  // namespace dpf
