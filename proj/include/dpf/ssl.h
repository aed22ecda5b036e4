#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "dpf/detector.h"

namespace dpf {

struct AugmentationSpec {
  double hflip_prob = 0.5;
  /// Range of the crop area as a fraction of the image area.
  double crop_scale_min = 0.4;
  double crop_scale_max = 1.0;
  /// Side of the square output views; a multiple of 32.
  std::int64_t target_size = 64;
  /// Probability that the colour distortion below is applied at all.
  double color_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  /// Maximum hue rotation as a fraction of a full turn.
  double hue = 0.1;
  double grayscale_prob = 0.2;
  std::uint64_t seed = 0;

  /// Every probability/strength off and crops fixed to the whole image.
  static AugmentationSpec identity(std::int64_t target_size);
  void validate() const;
};

/// One augmented view; deterministic in (image, spec, seed).
Tensor augment_view(const Tensor& image, const AugmentationSpec& spec, std::uint64_t seed);
/// Two independent views drawn with sub-seeds of `seed`.
std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const AugmentationSpec& spec, std::uint64_t seed);

struct SiameseConfig {
  std::array<std::int64_t, 4> stage_widths = {16, 32, 64, 128};
  std::int64_t projector_hidden = 256;
  std::int64_t projection_dim = 128;
  std::int64_t predictor_hidden = 64;
};

/// linear -> batch norm -> SiLU -> linear over (N, D, 1, 1) rows.
class Mlp : public Module {
 public:
  Mlp(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng, DType dtype);
  Tensor forward(const Tensor& x);

 private:
  Linear* fc1_;
  BatchNorm2d* bn_;
  Linear* fc2_;
};

/// Encoder f = backbone + global mean pool + projector; predictor h. The two
/// views run through the same encoder parameters.
class SiameseModel : public Module {
 public:
  SiameseModel(const SiameseConfig& config, Rng& rng, DType dtype = DType::kF32);

  /// z = f(x), (N, projection_dim, 1, 1).
  Tensor encode(const Tensor& images);
  /// p = h(z).
  Tensor predict(const Tensor& z);

  const SiameseConfig& config() const { return config_; }
  Backbone& backbone() { return *backbone_; }

 private:
  SiameseConfig config_;
  Backbone* backbone_;
  Mlp* projector_;
  Mlp* predictor_;
};

struct SiameseOutputs {
  Tensor za, zb, pa, pb;
  Tensor loss;
};

/// Forward pass of both views and the symmetric stop-gradient loss.
SiameseOutputs siamese_forward(SiameseModel& model, const Tensor& xa, const Tensor& xb);

struct PretrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 4;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One Adam update on a batch of views; returns the loss (mean over the batch).
double pretrain_step(SiameseModel& model, Adam& optimizer, const std::vector<std::pair<Tensor, Tensor>>& views);

/// Mean per-dimension standard deviation of the l2-normalised rows of `z`
/// (N, D, 1, 1). About 1/sqrt(D) for spread-out outputs, 0 when collapsed.
double collapse_metric(const Tensor& z);
/// Same measure on the encoder outputs of `images` (eval mode, no graph).
double collapse_metric(SiameseModel& model, const Tensor& images);

/// Below this the outputs count as collapsed: 0.25 / sqrt(D).
double collapse_floor(std::int64_t dim);

/// Writes only the "backbone.*" parameters.
void export_backbone(const SiameseModel& model, const std::filesystem::path& path);

}  // namespace dpf
