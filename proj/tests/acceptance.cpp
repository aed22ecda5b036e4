// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; the exit code is 0 only when every selected
// criterion passes.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpf/blocks.h"
#include "dpf/checkpoint.h"
#include "dpf/cli.h"
#include "dpf/gradsuite.h"
#include "dpf/ssl.h"

namespace {

using namespace dpf;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::string detail;

  /// Records a failed check; the first few explain the failure.
  void check(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
    pass = false;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor uniform(Shape shape, Rng& rng, double lo = -1, double hi = 1, DType dtype = DType::kF64) {
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, dtype);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dpf_acceptance_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1 -------------------------------------------------------------------------
Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = run_gradcheck_suite();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0;
  std::string worst_op;
  for (const GradcheckEntry& e : r.entries) {
    o.check(e.passed, e.op + " rel err " + fmt("%.2e", e.worst));
    if (e.worst >= worst) worst = e.worst, worst_op = e.op;
  }
  std::set<std::string> ops;
  for (const GradcheckEntry& e : r.entries) ops.insert(e.op);
  for (const char* op : {"conv2d", "maxpool2d", "bilinear_sample", "deform_conv2d", "batchnorm2d", "silu", "sigmoid",
                         "eiou_loss_sum", "confidence_loss", "classification_loss", "simsiam_loss"}) {
    o.check(ops.count(op) == 1, std::string("no entry for ") + op);
  }
  // The suite must also be able to fail.
  GradcheckOptions fault;
  fault.corrupt_conv_backward = true;
  o.check(!run_gradcheck_suite(fault).passed(), "corrupted conv backward went unnoticed");
  o.check(secs < 60, "suite took " + fmt("%.1f", secs) + " s");
  if (o.pass) {
    o.detail = std::to_string(r.entries.size()) + " ops, worst " + fmt("%.2e", worst) + " (" + worst_op + "), " +
               fmt("%.2f", secs) + " s";
  }
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome eiou_correctness() {
  Outcome o;
  Rng rng(2024);
  const double cell = 0.01;
  // Edges on multiples of 2*cell: no raster sample falls on an edge, so the
  // oracle is exact up to its own counting.
  auto grid_box = [&] {
    const auto a = static_cast<std::int64_t>(rng.below(90));
    const auto b = a + 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(100 - a - 1)));
    const auto c = static_cast<std::int64_t>(rng.below(90));
    const auto d = c + 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(100 - c - 1)));
    const double s = 2 * cell;
    return Box{static_cast<double>(a + b) * s / 2, static_cast<double>(c + d) * s / 2,
               static_cast<double>(b - a) * s, static_cast<double>(d - c) * s};
  };
  double worst_raster = 0;
  for (int i = 0; i < 1000; ++i) {
    const Box p = grid_box(), q = grid_box();
    worst_raster = std::max(worst_raster, std::abs(iou(p, q) - rasterized_iou_oracle(p, q, cell)));
  }
  o.check(worst_raster <= 1e-3, "raster disagreement " + fmt("%.2e", worst_raster));

  const double w1 = std::abs(eiou({0, 0, 2, 2}, {1, 1, 2, 2}) - (1.0 / 7 - 1.0 / 9));
  const double w2 = std::abs(eiou({0, 0, 1, 1}, {0, 0, 3, 3}) - (1.0 / 9 - 8.0 / 9));
  o.check(w1 <= 1e-9, "worked case 1 off by " + fmt("%.2e", w1));
  o.check(w2 <= 1e-9, "worked case 2 off by " + fmt("%.2e", w2));

  double min_loss = INFINITY;
  std::size_t zero_noncoincident = 0, nonzero_coincident = 0;
  for (int i = 0; i < 100000; ++i) {
    const Box p{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.01, 4), rng.uniform(0.01, 4)};
    Box t{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.01, 4), rng.uniform(0.01, 4)};
    // A quarter of the pairs differ in a single coordinate only.
    switch (i % 8) {
      case 0: t = {p.cx, p.cy, p.w, t.h}; break;
      case 1: t = {p.cx + 1e-6, p.cy, p.w, p.h}; break;
      default: break;
    }
    const double l = eiou_loss(p, t);
    min_loss = std::min(min_loss, l);
    const bool same = p.cx == t.cx && p.cy == t.cy && p.w == t.w && p.h == t.h;
    zero_noncoincident += !same && !(l > 0);
    if (i % 10 == 0) nonzero_coincident += eiou_loss(p, p) != 0.0;
  }
  o.check(min_loss >= 0, "negative loss " + fmt("%.3e", min_loss));
  o.check(zero_noncoincident == 0, std::to_string(zero_noncoincident) + " distinct pairs with zero loss");
  o.check(nonzero_coincident == 0, std::to_string(nonzero_coincident) + " coincident pairs with nonzero loss");
  if (o.pass) {
    o.detail = "raster max diff " + fmt("%.1e", worst_raster) + ", worked cases to " + fmt("%.0e", std::max(w1, w2)) +
               ", 1e5 pairs min loss " + fmt("%.2e", min_loss);
  }
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome stop_gradient() {
  Outcome o;
  SiameseConfig sc;
  sc.stage_widths = {8, 8, 16, 16};
  sc.projector_hidden = 32;
  sc.projection_dim = 16;
  sc.predictor_hidden = 8;
  Rng rng(31);
  SiameseModel model(sc, rng, DType::kF64);

  // Loss-level: leaf targets receive exactly zero gradient.
  for (int trial = 0; trial < 20; ++trial) {
    Tensor pa = uniform({4, 16, 1, 1}, rng).set_requires_grad(true);
    Tensor pb = uniform({4, 16, 1, 1}, rng).set_requires_grad(true);
    Tensor za = uniform({4, 16, 1, 1}, rng).set_requires_grad(true);
    Tensor zb = uniform({4, 16, 1, 1}, rng).set_requires_grad(true);
    simsiam_loss(pa, pb, za, zb).backward();
    for (const Tensor* z : {&za, &zb}) {
      if (!z->has_grad()) continue;
      for (double g : z->grad_values()) o.check(g == 0.0, "target gradient " + fmt("%.3e", g));
    }
    double gp = 0;
    for (double g : pa.grad_values()) gp += std::abs(g);
    o.check(gp > 0, "predictor output received no gradient");
  }

  // Model-level: encoder gradients equal those of a constant-target surrogate.
  const Tensor xa = uniform({4, 3, 32, 32}, rng, 0, 1), xb = uniform({4, 3, 32, 32}, rng, 0, 1);
  const Tensor probe = find_parameter(model, "backbone.stem.conv.weight");
  model.zero_grad();
  siamese_forward(model, xa, xb).loss.backward();
  const auto full = probe.grad_values();
  model.zero_grad();
  const Tensor za = model.encode(xa), zb = model.encode(xb);
  const Tensor pa = model.predict(za), pb = model.predict(zb);
  simsiam_loss(pa, pb, Tensor::from_values(za.shape(), za.values(), DType::kF64),
               Tensor::from_values(zb.shape(), zb.values(), DType::kF64), false)
      .backward();
  o.check(probe.grad_values() == full, "encoder gradient depends on the target branch");

  // Symmetry and range over batches of real augmented views.
  AugmentationSpec aug;
  aug.target_size = 32;
  SceneSpec spec;
  spec.image_size = 64;
  double worst_sym = 0, lo = INFINITY, hi = -INFINITY;
  for (std::uint64_t b = 0; b < 25; ++b) {
    std::vector<Tensor> va, vb;
    for (std::uint64_t i = 0; i < 4; ++i) {
      auto [x, y] = augment_pair(generate_scene(spec, b * 4 + i).image, aug, b * 4 + i);
      va.push_back(Tensor::from_values(x.shape(), x.values(), DType::kF64));
      vb.push_back(Tensor::from_values(y.shape(), y.values(), DType::kF64));
    }
    auto stack = [](const std::vector<Tensor>& v) {
      std::vector<double> all;
      for (const Tensor& t : v) {
        const auto x = t.values();
        all.insert(all.end(), x.begin(), x.end());
      }
      return Tensor::from_values({4, 3, 32, 32}, all, DType::kF64);
    };
    const Tensor A = stack(va), B = stack(vb);
    const double ab = siamese_forward(model, A, B).loss.item();
    const double ba = siamese_forward(model, B, A).loss.item();
    worst_sym = std::max(worst_sym, std::abs(ab - ba));
    lo = std::min({lo, ab, ba});
    hi = std::max({hi, ab, ba});
  }
  o.check(worst_sym <= 1e-6, "asymmetry " + fmt("%.2e", worst_sym));
  o.check(lo >= -1 && hi <= 1, "loss outside [-1,1]: " + fmt("%.4f", lo) + ".." + fmt("%.4f", hi));
  if (o.pass) {
    o.detail = "target grads exactly 0, max |L(a,b)-L(b,a)| " + fmt("%.1e", worst_sym) + ", L in [" + fmt("%.3f", lo) +
               ", " + fmt("%.3f", hi) + "]";
  }
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome structural_reductions() {
  Outcome o;
  Rng rng(41);
  double deform = 0, td = 0;
  for (int trial = 0; trial < 5; ++trial) {
    DeformConv m(3, 4, 3, true, rng, DType::kF64);
    m.conv().bias().copy_values_from(uniform(m.conv().bias().shape(), rng));
    const Tensor x = uniform({2, 3, 9, 7}, rng);
    deform = std::max(deform, max_abs_diff(m.forward(x).values(),
                                           conv2d(x, m.conv().weight(), m.conv().bias(), {1, 1, 1}).values()));

    TDConv t(4, 6, 3, {1, 1, 1}, rng, DType::kF64);
    ConvBlock plain({4, 6, 3, 1, 1}, rng, DType::kF64);
    find_parameter(plain, "conv.weight").copy_values_from(find_parameter(t, "conv.weight"));
    const Tensor y = uniform({2, 4, 8, 6}, rng);
    td = std::max(td, max_abs_diff(t.forward(y).values(), plain.forward(y).values()));
  }
  o.check(deform <= 1e-6, "zero-offset deformable conv differs by " + fmt("%.2e", deform));
  o.check(td <= 1e-6, "TDConv(1,1,1) differs from a conv block by " + fmt("%.2e", td));

  Sppf sppf(3, 8, rng, DType::kF64);
  const SppfTrace tr = sppf.forward_traced(uniform({2, 3, 13, 11}, rng));
  o.check(tr.pooled[0].values() == maxpool2d(tr.reduced, 5, 1, 2).values(), "first pool != 5x5");
  o.check(tr.pooled[1].values() == maxpool2d(tr.reduced, 9, 1, 4).values(), "second pool != 9x9");
  o.check(tr.pooled[2].values() == maxpool2d(tr.reduced, 13, 1, 6).values(), "third pool != 13x13");

  for (auto [in, out, k] : {std::tuple{16, 16, 3}, {8, 32, 3}, {3, 5, 5}}) {
    TDConv t(in, out, k, kDefaultDilations, rng, DType::kF32);
    ConvBlock one({in, out, k, 1, 1}, rng, DType::kF32);
    o.check(t.parameter_count() == one.parameter_count(),
            "TDConv has " + std::to_string(t.parameter_count()) + " params, one branch " +
                std::to_string(one.parameter_count()));
  }
  if (o.pass) {
    o.detail = "deform vs conv " + fmt("%.1e", deform) + ", TDConv vs block " + fmt("%.1e", td) +
               ", SPPF pools exact, TDConv params = one branch";
  }
  return o;
}

// 5 -------------------------------------------------------------------------
Outcome detector_smoke() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SceneSpec spec;  // 128 x 128, 9 classes
  spec.seed = 7;
  std::vector<LabeledImage> images;
  for (std::uint64_t i = 0; i < 200; ++i) images.push_back(generate_scene(spec, i));
  auto anchors_for = [](const std::vector<LabeledImage>& imgs, std::size_t n) {
    std::vector<Box> boxes;
    for (std::size_t i = 0; i < n; ++i)
      for (const Annotation& a : imgs[i].labels) boxes.push_back(a.box);
    return kmeans_anchors(boxes, 1);
  };

  // (a) Loss decrease with the default recipe.
  std::vector<const LabeledImage*> all;
  for (const LabeledImage& im : images) all.push_back(&im);
  DetectorConfig dc;
  dc.variant = VariantSpec::named("full");
  dc.anchors = anchors_for(images, images.size());
  Rng rng(3);
  Detector model(dc, rng);
  TrainOptions opts;  // 300 steps, batch 8, lr 0.01, momentum 0.937, unit weights
  std::vector<double> totals;
  for (const StepStats& s : train_detector(model, all, opts)) totals.push_back(s.total);
  const double early = moving_average(totals, 9, 10), late = moving_average(totals, totals.size() - 1, 10);
  const double ratio = late / early;
  o.check(std::isfinite(ratio) && ratio < 0.5, "loss ratio " + fmt("%.3f", ratio));

  // (b) Overfit a 32-image subset.
  std::vector<const LabeledImage*> subset(all.begin(), all.begin() + 32);
  std::vector<std::vector<Annotation>> gt;
  for (const LabeledImage* im : subset) gt.push_back(im->labels);
  DetectorConfig oc = dc;
  oc.anchors = anchors_for(images, 32);
  Rng rng2(3);
  Detector small(oc, rng2);
  TrainOptions fit;
  fit.steps = 600;
  fit.sgd.lr = 0.005;
  fit.weights.re = 5;
  fit.seed = 5;
  train_detector(small, subset, fit);
  const double map = evaluate(predict(small, subset, 0.001, 0.6), gt, oc.num_classes).map50;
  o.check(map >= 0.8, "overfit mAP@0.5 " + fmt("%.3f", map));

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(secs <= 900, "took " + fmt("%.0f", secs) + " s");
  if (o.pass) {
    o.detail = "loss MA " + fmt("%.2f", early) + " -> " + fmt("%.2f", late) + " (ratio " + fmt("%.3f", ratio) +
               "), overfit mAP@0.5 " + fmt("%.3f", map) + ", " + fmt("%.0f", secs) + " s";
  }
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome ssl_smoke() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SceneSpec spec;
  spec.seed = 3;
  std::vector<Tensor> images;
  for (std::uint64_t i = 0; i < 64; ++i) images.push_back(generate_scene(spec, i).image);
  Rng rng(1);
  SiameseModel model(SiameseConfig{}, rng);
  // Above the 1e-4 default: 200 steps at that rate stay within batch noise.
  Adam opt(model.trainable_parameters(), {5e-4});
  AugmentationSpec aug;
  aug.target_size = 64;
  BatchSampler sampler(images.size(), 4, 2);
  std::vector<double> losses;
  for (std::uint64_t s = 0; s < 200; ++s) {
    std::vector<std::pair<Tensor, Tensor>> views;
    for (std::size_t i : sampler.next()) views.push_back(augment_pair(images[i], aug, s * 64 + i));
    losses.push_back(pretrain_step(model, opt, views));
  }
  std::vector<Tensor> probe_views;
  for (std::size_t i = 0; i < 16; ++i) probe_views.push_back(augment_view(images[i], AugmentationSpec::identity(64), 0));
  std::vector<double> v;
  for (const Tensor& t : probe_views) {
    const auto x = t.values();
    v.insert(v.end(), x.begin(), x.end());
  }
  const double collapse = collapse_metric(model, Tensor::from_values({16, 3, 64, 64}, v));
  const double floor = collapse_floor(SiameseConfig{}.projection_dim);
  const double first = moving_average(losses, 9, 10), last = moving_average(losses, losses.size() - 1, 10);
  o.check(first - last >= 0.1, "loss fell only " + fmt("%.3f", first - last));
  o.check(collapse > floor, "collapse metric " + fmt("%.4f", collapse) + " <= floor " + fmt("%.4f", floor));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(secs <= 300, "took " + fmt("%.0f", secs) + " s");
  if (o.pass) {
    o.detail = "loss " + fmt("%.3f", first) + " -> " + fmt("%.3f", last) + ", collapse " + fmt("%.4f", collapse) +
               " > floor " + fmt("%.4f", floor) + ", " + fmt("%.0f", secs) + " s";
  }
  return o;
}

// 7 -------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome ablation() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = scratch("ablate");
  RunConfig cfg;
  cfg.set("data.dir", (dir / "data").string());
  cfg.set("train.epochs", "3");
  std::ostringstream log;
  o.check(cmd_gen(cfg, log) == kExitOk, "gen failed");
  std::string tables[2];
  for (int run = 0; run < 2; ++run) {
    cfg.set("ablate.out", (dir / ("run" + std::to_string(run))).string());
    std::ostringstream out;
    const int rc = run_guarded([&] { return cmd_ablate(cfg, out); }, out);
    o.check(rc == kExitOk, "ablate exit " + std::to_string(rc) + ": " + out.str().substr(out.str().rfind('\n', out.str().size() - 2) + 1));
    tables[run] = slurp(dir / ("run" + std::to_string(run)) / "ablation.csv");
  }
  std::istringstream in(tables[0]);
  std::vector<std::string> rows;
  for (std::string l; std::getline(in, l);) rows.push_back(l);
  o.check(rows.size() == 6, "table has " + std::to_string(rows.size()) + " lines");
  const std::vector<std::pair<std::string, std::string>> expected = {
      {"baseline", "none"}, {"a", "TDSPPF"}, {"b", "DPAFPN"}, {"c", "TDSPPF+DPAFPN"}, {"full", "TDConv+TDSPPF+DPAFPN"}};
  std::string summary;
  for (std::size_t r = 1; r < rows.size() && r <= expected.size(); ++r) {
    std::vector<std::string> cells;
    std::stringstream ss(rows[r]);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    o.check(cells.size() == 24, "row " + std::to_string(r) + " has " + std::to_string(cells.size()) + " cells");
    if (cells.size() < 4) continue;
    o.check(cells[0] == expected[r - 1].first && cells[1] == expected[r - 1].second, "row " + rows[r]);
    for (std::size_t i = 2; i < cells.size(); ++i) o.check(std::isfinite(std::stod(cells[i])), "non-finite " + rows[r]);
    summary += (summary.empty() ? "" : " ") + cells[0] + "=" + cells[2].substr(0, 5);
  }
  o.check(!tables[0].empty() && tables[0] == tables[1], "the two runs differ");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(secs <= 1800, "took " + fmt("%.0f", secs) + " s");
  fs::remove_all(dir);
  if (o.pass) o.detail = "5 rows, identical across 2 runs, mAP@0.5 " + summary + ", " + fmt("%.0f", secs) + " s";
  return o;
}

// 8 -------------------------------------------------------------------------
Outcome metric_oracle() {
  Outcome o;
  auto det = [](Box b, double s) { return Detection{b, 0, s}; };
  const Box g1{0.1, 0.1, 0.1, 0.1}, g2{0.5, 0.5, 0.1, 0.1}, g3{0.8, 0.2, 0.1, 0.1}, far{0.3, 0.9, 0.05, 0.05};

  // T F T F(duplicate) T over 3 targets: envelope 1, 2/3, 3/5 -> 34/45.
  const ApResult a = average_precision({{det(g1, 0.9), det(far, 0.8), det(g2, 0.7), det(g1, 0.6), det(g3, 0.5)}},
                                       {{g1, g2, g3}}, 0.5);
  const std::vector<PRPoint> table = {{1. / 3, 1}, {1. / 3, .5}, {2. / 3, 2. / 3}, {2. / 3, .5}, {1, .6}};
  o.check(a.curve.size() == table.size(), "case 1 curve length");
  for (std::size_t i = 0; i < std::min(a.curve.size(), table.size()); ++i) {
    o.check(std::abs(a.curve[i].recall - table[i].recall) <= 1e-9 &&
                std::abs(a.curve[i].precision - table[i].precision) <= 1e-9,
            "case 1 PR point " + std::to_string(i));
  }
  o.check(std::abs(a.ap - 34.0 / 45.0) <= 1e-9, "case 1 AP " + fmt("%.12f", a.ap));

  // Two images, T T F F T over 4 targets.
  const ApResult b = average_precision({{det(g1, 0.95), det(far, 0.7)}, {det(g2, 0.9), det(far, 0.8), det(g3, 0.6)}},
                                       {{g1}, {g2, g3, g1}}, 0.5);
  o.check(std::abs(b.ap - (0.25 + 0.25 + 0.25 * 0.6)) <= 1e-9, "case 2 AP " + fmt("%.12f", b.ap));

  // IoU 0.6 detection ranked first: a hit at 0.5, a miss at 0.75.
  const Box shifted{g2.cx + 0.025, g2.cy, 0.1, 0.1};
  const std::vector<std::vector<Detection>> c = {{det(shifted, 0.9), det(g2, 0.8)}};
  o.check(std::abs(average_precision(c, {{g2}}, 0.5).ap - 1.0) <= 1e-9, "case 3 AP at 0.5");
  o.check(std::abs(average_precision(c, {{g2}}, 0.75).ap - 0.5) <= 1e-9, "case 3 AP at 0.75");

  // mAP is exactly the mean of the present classes' APs.
  Rng rng(81);
  std::vector<std::vector<Annotation>> gt(8);
  std::vector<std::vector<Detection>> pred(8);
  for (std::size_t i = 0; i < 8; ++i) {
    for (int k = 0; k < 5; ++k) {
      const Box g{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};
      const int cls = static_cast<int>(rng.below(4));
      gt[i].push_back({g, cls});
      if (rng.bernoulli(0.8)) pred[i].push_back({{g.cx + rng.uniform(-0.03, 0.03), g.cy, g.w, g.h}, cls, rng.uniform()});
      if (rng.bernoulli(0.3)) pred[i].push_back({{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.1, 0.1}, cls, rng.uniform()});
    }
  }
  const MetricsReport r = evaluate(pred, gt, 6);
  double sum = 0;
  int present = 0;
  for (std::size_t k = 0; k < r.ap50.size(); ++k) {
    if (r.present[k]) sum += r.ap50[k], ++present;
  }
  o.check(present > 1 && r.map50 == sum / present, "mAP " + fmt("%.17g", r.map50) + " vs mean " + fmt("%.17g", sum / present));

  std::vector<std::vector<Detection>> perfect;
  for (const auto& img : gt) {
    perfect.emplace_back();
    for (const Annotation& g : img) perfect.back().push_back({g.box, g.cls, 1.0});
  }
  const double one = evaluate(perfect, gt, 6).map50;
  o.check(one == 1.0, "ground truth as predictions gives " + fmt("%.17g", one));
  if (o.pass) o.detail = "3 hand tables to 1e-9, mAP = mean of " + std::to_string(present) + " class APs, GT-as-pred = 1.0";
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome persistence() {
  Outcome o;
  const fs::path dir = scratch("persist");
  for (DType dtype : {DType::kF32, DType::kF64}) {
    DetectorConfig dc;
    dc.variant = VariantSpec::named("full");
    Rng r1(91), r2(92);
    Detector a(dc, r1, dtype), b(dc, r2, dtype);
    // Perturb running statistics so that buffers are exercised too.
    for (const Parameter& p : a.parameters()) {
      if (!p.trainable) Tensor(p.tensor).copy_values_from(uniform(p.tensor.shape(), r1, 0.5, 1.5, dtype));
    }
    save_checkpoint(dir / "a.ckpt", a.parameters());
    load_checkpoint(dir / "a.ckpt", b);
    const auto pa = a.parameters(), pb = b.parameters();
    bool same = pa.size() == pb.size();
    for (std::size_t i = 0; same && i < pa.size(); ++i) {
      same = pa[i].name == pb[i].name && pa[i].tensor.values() == pb[i].tensor.values();
    }
    o.check(same, std::string(dtype == DType::kF32 ? "f32" : "f64") + " round trip not bit-exact");
    save_checkpoint(dir / "b.ckpt", b.parameters());
    o.check(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"), "re-saved checkpoint differs byte-wise");
  }

  Rng rs(93);
  SiameseModel ssl(SiameseConfig{}, rs);
  export_backbone(ssl, dir / "backbone.ckpt");
  Rng rd(94);
  Detector det(DetectorConfig{}, rd);
  std::size_t backbone = 0;
  for (const Parameter& p : det.parameters()) backbone += p.name.rfind("backbone.", 0) == 0;
  LoadOptions lo;
  lo.prefix = "backbone.";
  const LoadReport rep = load_checkpoint(dir / "backbone.ckpt", det, lo);
  o.check(rep.matched.size() == backbone,
          "matched " + std::to_string(rep.matched.size()) + " of " + std::to_string(backbone) + " backbone tensors");
  o.check(rep.unmatched_in_file.empty(), "export holds non-backbone tensors");
  o.check(find_parameter(det, "backbone.stem.conv.weight").values() ==
              find_parameter(ssl, "backbone.stem.conv.weight").values(),
          "backbone weights not transferred");
  fs::remove_all(dir);
  if (o.pass) o.detail = "f32/f64 bit-exact, backbone export matched " + std::to_string(backbone) + "/" + std::to_string(backbone);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},       {2, "EIoU correctness", eiou_correctness},
      {3, "stop-gradient contract", stop_gradient}, {4, "structural reductions", structural_reductions},
      {5, "detector smoke training", detector_smoke}, {6, "SSL smoke training", ssl_smoke},
      {7, "ablation harness", ablation},             {8, "metric oracle", metric_oracle},
      {9, "persistence", persistence},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %d %-24s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
