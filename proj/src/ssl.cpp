#include "dpf/ssl.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dpf/checkpoint.h"

namespace dpf {

AugmentationSpec AugmentationSpec::identity(std::int64_t target_size) {
  AugmentationSpec s;
  s.hflip_prob = 0;
  s.crop_scale_min = s.crop_scale_max = 1.0;
  s.target_size = target_size;
  s.color_prob = 0;
  s.brightness = s.contrast = s.saturation = s.hue = 0;
  s.grayscale_prob = 0;
  return s;
}

void AugmentationSpec::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string("augmentation: ") + what + " must be in [0,1]");
  };
  prob(hflip_prob, "hflip_prob");
  prob(color_prob, "color_prob");
  prob(grayscale_prob, "grayscale_prob");
  if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1)) {
    throw std::invalid_argument("augmentation: crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (target_size <= 0 || target_size % 32 != 0) {
    throw std::invalid_argument("augmentation: target_size must be a positive multiple of 32");
  }
  for (double v : {brightness, contrast, saturation}) {
    if (!(v >= 0 && v < 1)) throw std::invalid_argument("augmentation: colour strengths must be in [0,1)");
  }
  if (!(hue >= 0 && hue <= 0.5)) throw std::invalid_argument("augmentation: hue must be in [0,0.5]");
}

namespace {

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

Tensor augment_view(const Tensor& image, const AugmentationSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("augment_view: expected (1,3,H,W), got " + s.str());
  Rng rng(mix_seed(spec.seed, seed));
  const std::vector<double> src = image.values();
  const std::int64_t H = s.h, W = s.w, T = spec.target_size;

  // Crop: area fraction and an aspect ratio that keeps the crop inside.
  const double area = rng.uniform(spec.crop_scale_min, spec.crop_scale_max);
  const double lo = std::max(3.0 / 4.0, area), hi = std::min(4.0 / 3.0, 1.0 / area);
  const double ar = std::exp(rng.uniform(std::log(lo), std::log(std::max(lo, hi))));
  const double cw = std::min(1.0, std::sqrt(area * ar)) * static_cast<double>(W);
  const double ch = std::min(1.0, std::sqrt(area / ar)) * static_cast<double>(H);
  const double x0 = rng.uniform() * (static_cast<double>(W) - cw);
  const double y0 = rng.uniform() * (static_cast<double>(H) - ch);
  const bool flip = rng.bernoulli(spec.hflip_prob);

  // Bilinear resize of the crop, sampling at output pixel centres.
  std::vector<double> out(static_cast<std::size_t>(3 * T * T));
  auto px = [&](std::int64_t c, std::int64_t y, std::int64_t x) {
    y = std::clamp<std::int64_t>(y, 0, H - 1);
    x = std::clamp<std::int64_t>(x, 0, W - 1);
    return src[static_cast<std::size_t>((c * H + y) * W + x)];
  };
  for (std::int64_t oy = 0; oy < T; ++oy) {
    const double sy = y0 + (static_cast<double>(oy) + 0.5) * ch / static_cast<double>(T) - 0.5;
    const auto iy = static_cast<std::int64_t>(std::floor(sy));
    const double fy = sy - static_cast<double>(iy);
    for (std::int64_t ox = 0; ox < T; ++ox) {
      const std::int64_t tx = flip ? T - 1 - ox : ox;
      const double sx = x0 + (static_cast<double>(tx) + 0.5) * cw / static_cast<double>(T) - 0.5;
      const auto ix = static_cast<std::int64_t>(std::floor(sx));
      const double fx = sx - static_cast<double>(ix);
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * px(c, iy, ix) + fx * px(c, iy, ix + 1)) +
                         fy * ((1 - fx) * px(c, iy + 1, ix) + fx * px(c, iy + 1, ix + 1));
        out[static_cast<std::size_t>((c * T + oy) * T + ox)] = v;
      }
    }
  }

  const std::size_t plane = static_cast<std::size_t>(T * T);
  double* r = out.data();
  double* g = r + plane;
  double* b = g + plane;
  if (rng.bernoulli(spec.color_prob)) {
    const double bright = rng.uniform(1 - spec.brightness, 1 + spec.brightness);
    const double contrast = rng.uniform(1 - spec.contrast, 1 + spec.contrast);
    const double sat = rng.uniform(1 - spec.saturation, 1 + spec.saturation);
    const double turn = rng.uniform(-spec.hue, spec.hue) * 2 * std::numbers::pi;
    double mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += luma(r[i], g[i], b[i]);
    mean = mean * bright / static_cast<double>(plane);
    // Hue: rotation about the grey axis (Rodrigues with axis (1,1,1)/sqrt 3).
    const double cs = std::cos(turn), sn = std::sin(turn), k = (1 - cs) / 3, q = sn / std::sqrt(3.0);
    const double m[3][3] = {{cs + k, k - q, k + q}, {k + q, cs + k, k - q}, {k - q, k + q, cs + k}};
    for (std::size_t i = 0; i < plane; ++i) {
      double v[3] = {r[i] * bright, g[i] * bright, b[i] * bright};
      for (double& c : v) c = mean + contrast * (c - mean);
      const double y = luma(v[0], v[1], v[2]);
      for (double& c : v) c = y + sat * (c - y);
      double w[3];
      for (int a = 0; a < 3; ++a) w[a] = m[a][0] * v[0] + m[a][1] * v[1] + m[a][2] * v[2];
      r[i] = w[0], g[i] = w[1], b[i] = w[2];
    }
  }
  if (rng.bernoulli(spec.grayscale_prob)) {
    for (std::size_t i = 0; i < plane; ++i) r[i] = g[i] = b[i] = luma(r[i], g[i], b[i]);
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor::from_values({1, 3, T, T}, out, image.dtype());
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const AugmentationSpec& spec, std::uint64_t seed) {
  return {augment_view(image, spec, mix_seed(seed, 1)), augment_view(image, spec, mix_seed(seed, 2))};
}

Mlp::Mlp(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng, DType dtype) {
  fc1_ = register_module("fc1", std::make_unique<Linear>(in, hidden, rng, dtype));
  bn_ = register_module("bn", std::make_unique<BatchNorm2d>(hidden, dtype));
  fc2_ = register_module("fc2", std::make_unique<Linear>(hidden, out, rng, dtype));
}

Tensor Mlp::forward(const Tensor& x) { return fc2_->forward(silu(bn_->forward(fc1_->forward(x)))); }

SiameseModel::SiameseModel(const SiameseConfig& config, Rng& rng, DType dtype) : config_(config) {
  backbone_ = register_module("backbone", std::make_unique<Backbone>(config.stage_widths, rng, dtype));
  projector_ = register_module("projector", std::make_unique<Mlp>(config.stage_widths[3], config.projector_hidden,
                                                                  config.projection_dim, rng, dtype));
  predictor_ = register_module("predictor", std::make_unique<Mlp>(config.projection_dim, config.predictor_hidden,
                                                                  config.projection_dim, rng, dtype));
}

Tensor SiameseModel::encode(const Tensor& images) {
  return projector_->forward(spatial_mean(backbone_->forward(images)[2]));
}

Tensor SiameseModel::predict(const Tensor& z) { return predictor_->forward(z); }

SiameseOutputs siamese_forward(SiameseModel& model, const Tensor& xa, const Tensor& xb) {
  if (xa.shape() != xb.shape()) {
    throw ShapeError("siamese_forward: views differ, " + xa.shape().str() + " vs " + xb.shape().str());
  }
  SiameseOutputs o;
  o.za = model.encode(xa);
  o.zb = model.encode(xb);
  o.pa = model.predict(o.za);
  o.pb = model.predict(o.zb);
  o.loss = simsiam_loss(o.pa, o.pb, o.za, o.zb);
  return o;
}

void PretrainConfig::validate() const {
  if (!(lr > 0) || batch_size == 0 || epochs == 0) {
    throw std::invalid_argument("pretrain: lr, batch size and epochs must be positive");
  }
}

namespace {

Tensor stack(const std::vector<Tensor>& views) {
  const Shape first = views.front().shape();
  std::vector<double> values;
  for (const Tensor& v : views) {
    if (v.shape() != first) throw ShapeError("pretrain: mixed view sizes " + first.str() + " and " + v.shape().str());
    const auto x = v.values();
    values.insert(values.end(), x.begin(), x.end());
  }
  return Tensor::from_values({static_cast<std::int64_t>(views.size()), first.c, first.h, first.w}, values,
                             views.front().dtype());
}

}  // namespace

double pretrain_step(SiameseModel& model, Adam& optimizer, const std::vector<std::pair<Tensor, Tensor>>& views) {
  if (views.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  std::vector<Tensor> a, b;
  for (const auto& [va, vb] : views) {
    if (va.shape() != vb.shape()) {
      throw ShapeError("pretrain_step: views differ, " + va.shape().str() + " vs " + vb.shape().str());
    }
    a.push_back(va);
    b.push_back(vb);
  }
  model.train();
  optimizer.zero_grad();
  const SiameseOutputs o = siamese_forward(model, stack(a), stack(b));
  o.loss.backward();
  optimizer.step();
  return o.loss.item();
}

double collapse_metric(const Tensor& z) {
  const Shape s = z.shape();
  if (s.n < 2) throw std::invalid_argument("collapse_metric: needs at least two rows");
  const std::vector<double> v = l2_normalize(z).values();
  const std::int64_t d = s.c * s.h * s.w;
  double total = 0;
  for (std::int64_t j = 0; j < d; ++j) {
    double mean = 0, sq = 0;
    for (std::int64_t i = 0; i < s.n; ++i) mean += v[static_cast<std::size_t>(i * d + j)];
    mean /= static_cast<double>(s.n);
    for (std::int64_t i = 0; i < s.n; ++i) {
      const double e = v[static_cast<std::size_t>(i * d + j)] - mean;
      sq += e * e;
    }
    total += std::sqrt(sq / static_cast<double>(s.n));
  }
  return total / static_cast<double>(d);
}

double collapse_metric(SiameseModel& model, const Tensor& images) {
  const bool was_training = model.training();
  model.eval();
  NoGradGuard guard;
  const double m = collapse_metric(model.encode(images));
  model.train(was_training);
  return m;
}

double collapse_floor(std::int64_t dim) { return 0.25 / std::sqrt(static_cast<double>(dim)); }

void export_backbone(const SiameseModel& model, const std::filesystem::path& path) {
  std::vector<Parameter> keep;
  for (const Parameter& p : model.parameters()) {
    if (p.name.rfind("backbone.", 0) == 0) keep.push_back(p);
  }
  save_checkpoint(path, keep);
}

}  // namespace dpf
