#include "dpf/detector.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace dpf {

namespace {

struct NamedVariant {
  const char* name;
  VariantSpec spec;
};

const std::vector<NamedVariant>& variant_table() {
  static const std::vector<NamedVariant> table = {
      {"baseline", {false, false, false}},
      {"a", {false, true, false}},
      {"b", {false, false, true}},
      {"c", {false, true, true}},
      {"full", {true, true, true}},
  };
  return table;
}

double sigmoid_of(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit_of(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

VariantSpec VariantSpec::named(const std::string& name) {
  for (const auto& v : variant_table()) {
    if (name == v.name) return v.spec;
  }
  std::string known;
  for (const auto& v : variant_table()) known += std::string(known.empty() ? "" : ", ") + v.name;
  throw std::invalid_argument("unknown variant '" + name + "' (expected one of: " + known + ")");
}

std::string VariantSpec::name() const {
  for (const auto& v : variant_table()) {
    if (v.spec == *this) return v.name;
  }
  // Combinations outside the ablation table still get a stable label.
  return "custom-" + composition();
}

std::string VariantSpec::composition() const {
  std::string s;
  auto add = [&s](bool on, const char* part) {
    if (on) s += (s.empty() ? "" : "+") + std::string(part);
  };
  add(tdconv, "TDConv");
  add(tdsppf, "TDSPPF");
  add(dpafpn, "DPAFPN");
  return s.empty() ? "none" : s;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& v : variant_table()) n.emplace_back(v.name);
    return n;
  }();
  return names;
}

namespace {

AnchorSet pack_sorted(std::vector<AnchorSize> sizes) {
  std::stable_sort(sizes.begin(), sizes.end(),
                   [](const AnchorSize& a, const AnchorSize& b) { return a.w * a.h < b.w * b.h; });
  AnchorSet set;
  for (int i = 0; i < 9; ++i) {
    set.scales[static_cast<std::size_t>(i / 3)][static_cast<std::size_t>(i % 3)] =
        sizes[static_cast<std::size_t>(i)];
  }
  return set;
}

// IoU of two boxes sharing a centre.
double shape_iou(double w0, double h0, double w1, double h1) {
  const double inter = std::min(w0, w1) * std::min(h0, h1);
  return inter / (w0 * h0 + w1 * h1 - inter);
}

}  // namespace

AnchorSet default_anchors() {
  std::vector<AnchorSize> sizes;
  for (int i = 0; i < 9; ++i) {
    const double s = 0.04 * std::pow(10.0, i / 8.0);
    sizes.push_back({s, s});
  }
  return pack_sorted(sizes);
}

AnchorSet kmeans_anchors(const std::vector<Box>& boxes, std::uint64_t seed, int iterations) {
  std::vector<AnchorSize> pts;
  for (const Box& b : boxes) {
    if (b.w > 0 && b.h > 0) pts.push_back({b.w, b.h});
  }
  std::vector<AnchorSize> distinct = pts;
  std::sort(distinct.begin(), distinct.end(),
            [](const AnchorSize& a, const AnchorSize& b) { return a.w != b.w ? a.w < b.w : a.h < b.h; });
  distinct.erase(std::unique(distinct.begin(), distinct.end(),
                             [](const AnchorSize& a, const AnchorSize& b) { return a.w == b.w && a.h == b.h; }),
                 distinct.end());
  if (distinct.size() < 9) return default_anchors();

  // k-means++ seeding with 1 - IoU as the distance.
  Rng rng(mix_seed(seed, 0xA4C));
  auto dist = [](const AnchorSize& p, const AnchorSize& c) { return 1.0 - shape_iou(p.w, p.h, c.w, c.h); };
  std::vector<AnchorSize> centers = {distinct[rng.below(distinct.size())]};
  while (centers.size() < 9) {
    std::vector<double> d2(distinct.size());
    double total = 0;
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      double best = 1e300;
      for (const auto& c : centers) best = std::min(best, dist(distinct[i], c));
      d2[i] = best * best;
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (; pick + 1 < distinct.size() && r >= d2[pick]; ++pick) r -= d2[pick];
    }
    centers.push_back(distinct[pick]);
  }
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> sw(9, 0), sh(9, 0), cnt(9, 0);
    for (const auto& p : pts) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 9; ++c) {
        if (dist(p, centers[c]) < dist(p, centers[best])) best = c;
      }
      sw[best] += p.w, sh[best] += p.h, cnt[best] += 1;
    }
    bool moved = false;
    for (std::size_t c = 0; c < 9; ++c) {
      if (cnt[c] == 0) continue;  // keep an empty cluster where it is
      const AnchorSize next{sw[c] / cnt[c], sh[c] / cnt[c]};
      moved = moved || next.w != centers[c].w || next.h != centers[c].h;
      centers[c] = next;
    }
    if (!moved) break;
  }
  return pack_sorted(centers);
}

void DetectorConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("detector: num_classes must be >= 1");
  for (auto w : stage_widths) {
    if (w < 2 || w % 2) throw std::invalid_argument("detector: stage widths must be even and >= 2");
  }
  if (neck_width < 2 || neck_width % 2) throw std::invalid_argument("detector: neck_width must be even and >= 2");
  for (int i = 0; i < 9; ++i) {
    if (!(anchors.at(i).w > 0 && anchors.at(i).h > 0)) {
      throw std::invalid_argument("detector: anchor sizes must be positive");
    }
  }
}

Backbone::Backbone(const std::array<std::int64_t, 4>& widths, Rng& rng, DType dtype) : widths_(widths) {
  const std::int64_t stem_w = std::max<std::int64_t>(8, widths[0] / 2);
  stem_ = register_module("stem", std::make_unique<ConvBlock>(ConvSpec{3, stem_w, 3, 2, 1}, rng, dtype));
  std::int64_t prev = stem_w;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::int64_t w = widths[i];
    const std::string s = std::to_string(i);
    down_[i] = register_module("down" + s, std::make_unique<ConvBlock>(ConvSpec{prev, w, 3, 2, 1}, rng, dtype));
    reduce_[i] = register_module("reduce" + s, std::make_unique<ConvBlock>(ConvSpec{w, w / 2, 1, 1, 1}, rng, dtype));
    expand_[i] = register_module("expand" + s, std::make_unique<ConvBlock>(ConvSpec{w / 2, w, 3, 1, 1}, rng, dtype));
    prev = w;
  }
}

std::array<Tensor, 3> Backbone::forward(const Tensor& images) {
  if (images.shape().c != 3) {
    throw ShapeError("backbone expects 3-channel images, got " + images.shape().str());
  }
  Tensor x = stem_->forward(images);
  std::array<Tensor, 4> stages;
  for (std::size_t i = 0; i < 4; ++i) {
    x = down_[i]->forward(x);
    x = add(x, expand_[i]->forward(reduce_[i]->forward(x)));
    stages[i] = x;
  }
  return {stages[1], stages[2], stages[3]};
}

Detector::Detector(const DetectorConfig& config, Rng& rng, DType dtype) : config_(config) {
  config_.validate();
  backbone_ = register_module("backbone", std::make_unique<Backbone>(config_.stage_widths, rng, dtype));
  NeckConfig nc;
  nc.in_channels = backbone_->out_channels();
  nc.width = config_.neck_width;
  nc.tdconv = config_.variant.tdconv;
  nc.tdsppf = config_.variant.tdsppf;
  nc.deformable = config_.variant.dpafpn;
  nc.dilations = config_.dilations;
  neck_ = register_module("neck", std::make_unique<PathAggregationNeck>(nc, rng, dtype));
  const char* names[3] = {"head3", "head4", "head5"};
  const auto per_anchor = static_cast<std::int64_t>(5 + config_.num_classes);
  for (std::size_t s = 0; s < 3; ++s) {
    heads_[s] = register_module(
        names[s], std::make_unique<Conv2d>(ConvSpec{config_.neck_width, config_.head_channels(), 1, 1, 1}, true,
                                           rng, dtype));
    // Near-zero weights: every slot starts at its anchor shape in the cell
    // centre, away from the flat tails of the sigmoids. Low objectness keeps
    // the many negatives from swamping the first updates.
    Tensor& w = heads_[s]->weight();
    for (std::int64_t i = 0; i < w.numel(); ++i) w.set(i, 0.01 * w.at(i));
    Tensor& b = heads_[s]->bias();
    for (std::int64_t i = 0; i < b.numel(); ++i) b.set(i, i % per_anchor == 4 ? -4.0 : 0.0);
  }
}

std::array<Tensor, 3> Detector::forward(const Tensor& images) {
  const Shape& s = images.shape();
  if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("detector input sides must be positive multiples of 32, got " + s.str());
  }
  auto [c3, c4, c5] = backbone_->forward(images);
  PyramidOutputs p = neck_->forward(c3, c4, c5);
  return {heads_[0]->forward(p.p3), heads_[1]->forward(p.p4), heads_[2]->forward(p.p5)};
}

double anchor_ratio_score(const Box& box, const AnchorSize& a) {
  const double rw = box.w / a.w, rh = box.h / a.h;
  return std::max({rw, 1.0 / rw, rh, 1.0 / rh});
}

AssignmentResult assign_targets(const std::vector<Annotation>& gt, const AnchorSet& anchors,
                                const std::array<int, 3>& grid_sizes, int image) {
  AssignmentResult out;
  std::map<std::array<int, 4>, int> used;  // (scale, anchor, gy, gx) -> gt
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const Box& b = gt[g].box;
    int best = -1;
    double best_r = kMaxAnchorRatio;
    if (b.w > 0 && b.h > 0) {
      for (int a = 0; a < 9; ++a) {
        const double r = anchor_ratio_score(b, anchors.at(a));
        if (r < best_r) best_r = r, best = a;
      }
    }
    if (best < 0) {
      out.unmatched.push_back(static_cast<int>(g));
      continue;
    }
    Assignment as;
    as.image = image;
    as.gt_index = static_cast<int>(g);
    as.scale = best / 3;
    as.anchor = best % 3;
    const int grid = grid_sizes[static_cast<std::size_t>(as.scale)];
    as.gx = std::clamp(static_cast<int>(std::floor(b.cx * grid)), 0, grid - 1);
    as.gy = std::clamp(static_cast<int>(std::floor(b.cy * grid)), 0, grid - 1);
    as.target = b;
    as.cls = gt[g].cls;
    if (!used.emplace(std::array<int, 4>{as.scale, as.anchor, as.gy, as.gx}, as.gt_index).second) {
      out.unmatched.push_back(as.gt_index);
      continue;
    }
    out.positives.push_back(as);
  }
  return out;
}

Box decode_box(double tx, double ty, double tw, double th, int gx, int gy, int grid, const AnchorSize& anchor) {
  const double sx = sigmoid_of(tx), sy = sigmoid_of(ty), sw = sigmoid_of(tw), sh = sigmoid_of(th);
  return {(2.0 * sx - 0.5 + gx) / grid, (2.0 * sy - 0.5 + gy) / grid, anchor.w * 4.0 * sw * sw,
          anchor.h * 4.0 * sh * sh};
}

std::array<double, 4> encode_box(const Box& t, int gx, int gy, int grid, const AnchorSize& anchor) {
  const double sx = (t.cx * grid - gx + 0.5) / 2.0;
  const double sy = (t.cy * grid - gy + 0.5) / 2.0;
  const double sw = std::sqrt(t.w / anchor.w) / 2.0;
  const double sh = std::sqrt(t.h / anchor.h) / 2.0;
  for (double p : {sx, sy, sw, sh}) {
    if (!(p > 0 && p < 1)) throw std::domain_error("encode_box: target not reachable from this slot");
  }
  return {logit_of(sx), logit_of(sy), logit_of(sw), logit_of(sh)};
}

std::vector<Detection> decode_predictions(const std::array<Tensor, 3>& raw, std::int64_t n, const AnchorSet& anchors,
                                          int num_classes, double conf_threshold) {
  std::vector<Detection> out;
  // Scores are products of sigmoids and so strictly below one.
  if (conf_threshold >= 1.0) return out;
  const std::int64_t per_anchor = 5 + num_classes;
  for (std::size_t s = 0; s < 3; ++s) {
    const Shape& sh = raw[s].shape();
    if (sh.c != 3 * per_anchor) {
      throw ShapeError("decode_predictions: head has " + std::to_string(sh.c) + " channels, expected " +
                       std::to_string(3 * per_anchor));
    }
    if (n < 0 || n >= sh.n) throw std::out_of_range("decode_predictions: image index out of range");
    const std::vector<double> v = raw[s].values();
    auto at = [&](std::int64_t ch, std::int64_t y, std::int64_t x) {
      return v[static_cast<std::size_t>(((n * sh.c + ch) * sh.h + y) * sh.w + x)];
    };
    for (int a = 0; a < 3; ++a) {
      const std::int64_t base = a * per_anchor;
      for (std::int64_t y = 0; y < sh.h; ++y) {
        for (std::int64_t x = 0; x < sh.w; ++x) {
          const double obj = sigmoid_of(at(base + 4, y, x));
          int best_c = 0;
          double best_logit = at(base + 5, y, x);
          for (int c = 1; c < num_classes; ++c) {
            const double l = at(base + 5 + c, y, x);
            if (l > best_logit) best_logit = l, best_c = c;
          }
          const double score = obj * sigmoid_of(best_logit);
          if (score < conf_threshold) continue;
          Box b = decode_box(at(base, y, x), at(base + 1, y, x), at(base + 2, y, x), at(base + 3, y, x),
                             static_cast<int>(x), static_cast<int>(y), static_cast<int>(sh.w),
                             anchors.scales[s][static_cast<std::size_t>(a)]);
          const double x0 = std::clamp(b.cx - b.w / 2, 0.0, 1.0), x1 = std::clamp(b.cx + b.w / 2, 0.0, 1.0);
          const double y0 = std::clamp(b.cy - b.h / 2, 0.0, 1.0), y1 = std::clamp(b.cy + b.h / 2, 0.0, 1.0);
          out.push_back({{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0}, best_c, score});
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const Detection &a = detections[i], &b = detections[j];
    if (a.score != b.score) return a.score > b.score;
    return a.box.w * a.box.h > b.box.w * b.box.h;
  });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const Detection& d = detections[i];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.cls == d.cls && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

Tensor stack_images(const std::vector<const LabeledImage*>& batch, DType dtype) {
  if (batch.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Shape first = batch.front()->image.shape();
  if (first.n != 1 || first.c != 3) throw ShapeError("stack_images: expected (1,3,H,W), got " + first.str());
  if (first.h % 32 != 0 || first.w % 32 != 0) {
    throw ShapeError("image sides must be multiples of 32, got " + first.str());
  }
  const auto n = static_cast<std::int64_t>(batch.size());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n * first.numel()));
  for (const LabeledImage* img : batch) {
    if (!(img->image.shape() == first)) {
      throw ShapeError("stack_images: mixed sizes " + first.str() + " and " + img->image.shape().str());
    }
    const std::vector<double> v = img->image.values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor::from_values({n, 3, first.h, first.w}, values, dtype);
}

LossBreakdown detection_loss(Detector& model, const std::vector<const LabeledImage*>& batch,
                             const LossWeights& weights, std::size_t* positives) {
  const Tensor images = stack_images(batch, model.backbone().parameters().front().tensor.dtype());
  const DType dtype = images.dtype();
  const std::array<Tensor, 3> raw = model.forward(images);
  const int k = model.config().num_classes;
  const std::int64_t per_anchor = 5 + k;
  const std::array<int, 3> grids = {static_cast<int>(raw[0].shape().w), static_cast<int>(raw[1].shape().w),
                                    static_cast<int>(raw[2].shape().w)};

  std::array<std::vector<Assignment>, 3> by_scale;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (const Assignment& a : assign_targets(batch[i]->labels, model.config().anchors, grids, static_cast<int>(i)).positives) {
      by_scale[static_cast<std::size_t>(a.scale)].push_back(a);
    }
  }

  Tensor l_re = Tensor::scalar(0.0, dtype), l_co = Tensor::scalar(0.0, dtype), l_cl = Tensor::scalar(0.0, dtype);
  std::size_t n_pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const Shape& sh = raw[s].shape();
    auto flat = [&](std::int64_t n, std::int64_t ch, std::int64_t y, std::int64_t x) {
      return ((n * sh.c + ch) * sh.h + y) * sh.w + x;
    };
    // Objectness over every slot of this scale; positives get target 1.
    std::vector<std::int64_t> obj_idx;
    obj_idx.reserve(static_cast<std::size_t>(sh.n * 3 * sh.h * sh.w));
    for (std::int64_t n = 0; n < sh.n; ++n)
      for (std::int64_t a = 0; a < 3; ++a)
        for (std::int64_t y = 0; y < sh.h; ++y)
          for (std::int64_t x = 0; x < sh.w; ++x) obj_idx.push_back(flat(n, a * per_anchor + 4, y, x));
    std::vector<double> obj_target(obj_idx.size(), 0.0);
    const auto& pos = by_scale[s];
    n_pos += pos.size();
    for (const Assignment& a : pos) {
      const std::int64_t slot = ((static_cast<std::int64_t>(a.image) * 3 + a.anchor) * sh.h + a.gy) * sh.w + a.gx;
      obj_target[static_cast<std::size_t>(slot)] = 1.0;
    }
    const auto m = static_cast<std::int64_t>(obj_idx.size());
    l_co = add(l_co, confidence_loss(sigmoid(gather(raw[s], obj_idx)),
                                     Tensor::from_values({m, 1, 1, 1}, obj_target, dtype)));
    if (pos.empty()) continue;

    const auto np = static_cast<std::int64_t>(pos.size());
    std::array<std::vector<std::int64_t>, 4> box_idx;
    std::vector<std::int64_t> cls_idx;
    std::vector<double> offset_x, offset_y, inv_grid, anchor_w, anchor_h, targets, onehot;
    for (const Assignment& a : pos) {
      const std::int64_t base = a.anchor * per_anchor;
      for (std::size_t j = 0; j < 4; ++j) box_idx[j].push_back(flat(a.image, base + static_cast<std::int64_t>(j), a.gy, a.gx));
      for (int c = 0; c < k; ++c) {
        cls_idx.push_back(flat(a.image, base + 5 + c, a.gy, a.gx));
        onehot.push_back(c == a.cls ? 1.0 : 0.0);
      }
      offset_x.push_back(a.gx - 0.5);
      offset_y.push_back(a.gy - 0.5);
      inv_grid.push_back(1.0 / grids[s]);
      const AnchorSize& an = model.config().anchors.scales[s][static_cast<std::size_t>(a.anchor)];
      anchor_w.push_back(4.0 * an.w);
      anchor_h.push_back(4.0 * an.h);
      targets.insert(targets.end(), {a.target.cx, a.target.cy, a.target.w, a.target.h});
    }
    const Shape col{np, 1, 1, 1};
    auto constant = [&](const std::vector<double>& v) { return Tensor::from_values(col, v, dtype); };
    const Tensor g = constant(inv_grid);
    // cx = (2*sig(tx) - 0.5 + gx) / grid, w = anchor_w * (2*sig(tw))^2.
    auto centre = [&](const std::vector<std::int64_t>& idx, const std::vector<double>& off) {
      return mul(add(scale(sigmoid(gather(raw[s], idx)), 2.0), constant(off)), g);
    };
    auto extent = [&](const std::vector<std::int64_t>& idx, const std::vector<double>& anchor4) {
      const Tensor sg = sigmoid(gather(raw[s], idx));
      return mul(mul(sg, sg), constant(anchor4));
    };
    const std::array<Tensor, 4> parts = {centre(box_idx[0], offset_x), centre(box_idx[1], offset_y),
                                         extent(box_idx[2], anchor_w), extent(box_idx[3], anchor_h)};
    const Tensor pred = concat_channels(parts);
    l_re = add(l_re, eiou_loss_sum(pred, Tensor::from_values({np, 4, 1, 1}, targets, dtype)));
    const Tensor probs = reshape(sigmoid(gather(raw[s], cls_idx)), {np, k, 1, 1});
    l_cl = add(l_cl, classification_loss(probs, Tensor::from_values({np, k, 1, 1}, onehot, dtype)));
  }
  if (positives) *positives = n_pos;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  return total_loss(scale(l_re, inv_n), scale(l_co, inv_n), scale(l_cl, inv_n), weights);
}

StepStats train_step(Detector& model, Sgd& optimizer, const std::vector<const LabeledImage*>& batch,
                     const LossWeights& weights) {
  model.train();
  optimizer.zero_grad();
  StepStats st;
  const LossBreakdown lb = detection_loss(model, batch, weights, &st.positives);
  lb.total.backward();
  optimizer.step();
  st.l_re = lb.l_re.item();
  st.l_co = lb.l_co.item();
  st.l_cl = lb.l_cl.item();
  st.total = lb.total.item();
  return st;
}

std::vector<std::vector<Detection>> predict(Detector& model, const std::vector<const LabeledImage*>& images,
                                            double conf_threshold, double nms_threshold, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be >= 1");
  const bool was_training = model.training();
  model.eval();
  NoGradGuard guard;
  const DType dtype = model.backbone().parameters().front().tensor.dtype();
  std::vector<std::vector<Detection>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    const std::vector<const LabeledImage*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                                 images.begin() + static_cast<std::ptrdiff_t>(end));
    const std::array<Tensor, 3> raw = model.forward(stack_images(chunk, dtype));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back(nms(decode_predictions(raw, static_cast<std::int64_t>(i), model.config().anchors,
                                           model.config().num_classes, conf_threshold),
                        nms_threshold));
    }
  }
  model.train(was_training);
  return out;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), order_(n), rng_(mix_seed(seed, 0xBA7C)) {
  if (n == 0 || batch_size == 0) throw std::invalid_argument("BatchSampler: empty data or zero batch size");
  cursor_ = n;  // forces a shuffle on the first draw
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  while (out.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      std::iota(order_.begin(), order_.end(), 0);
      for (std::size_t i = order_.size(); i-- > 1;) std::swap(order_[i], order_[rng_.below(i + 1)]);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
    if (cursor_ == order_.size()) ++epoch_;
  }
  return out;
}

double warmup_lr(double base, std::size_t step, std::size_t warmup) {
  if (warmup == 0 || step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

double moving_average(const std::vector<double>& values, std::size_t end, std::size_t window) {
  if (end >= values.size() || window == 0) throw std::out_of_range("moving_average: bad index or window");
  const std::size_t begin = end + 1 >= window ? end + 1 - window : 0;
  double s = 0;
  for (std::size_t i = begin; i <= end; ++i) s += values[i];
  return s / static_cast<double>(end + 1 - begin);
}

std::vector<StepStats> train_detector(Detector& model, const std::vector<const LabeledImage*>& images,
                                      const TrainOptions& options, const StepCallback& on_step) {
  if (images.empty()) throw std::invalid_argument("train_detector: no training images");
  Sgd optimizer(model.trainable_parameters(), options.sgd);
  BatchSampler sampler(images.size(), options.batch_size, options.seed);
  std::vector<StepStats> history;
  history.reserve(options.steps);
  for (std::size_t step = 0; step < options.steps; ++step) {
    optimizer.options().lr = warmup_lr(options.sgd.lr, step, options.warmup_steps);
    std::vector<const LabeledImage*> batch;
    for (std::size_t i : sampler.next()) batch.push_back(images[i]);
    history.push_back(train_step(model, optimizer, batch, options.weights));
    if (on_step) on_step(step, history.back());
  }
  return history;
}

}  // namespace dpf
