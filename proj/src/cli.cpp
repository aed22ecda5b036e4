#include "dpf/cli.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dpf/checkpoint.h"
#include "dpf/gradsuite.h"
#include "dpf/render.h"
#include "dpf/ssl.h"
#include "json.hpp"

namespace dpf {

namespace fs = std::filesystem;
using json = nlohmann::json;

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const VerificationError& e) {
    err << "verification failed: " << e.what() << "\n";
    return kExitVerification;
  } catch (const CheckpointError& e) {
    const bool mismatch = e.kind() == CheckpointError::Kind::kShapeMismatch ||
                          e.kind() == CheckpointError::Kind::kMissingName;
    err << (mismatch ? "verification failed: " : "i/o error: ") << e.what() << "\n";
    return mismatch ? kExitVerification : kExitIo;
  } catch (const DataError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitVerification;
  }
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::size_t positive(const RunConfig& c, const std::string& key) {
  const std::int64_t v = c.integer(key);
  if (v < 1) throw UsageError(key + " must be positive, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

void print_config(const RunConfig& config, const std::string& command, std::ostream& out) {
  out << "# " << command << " resolved config\n";
  std::istringstream lines(config.dump());
  for (std::string line; std::getline(lines, line);) out << "#   " << line << "\n";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot write " + path.string());
  f << text;
  if (!f) throw std::ios_base::failure("short write to " + path.string());
}

fs::path prepare_dir(const std::string& dir, const RunConfig& config) {
  fs::create_directories(dir);
  write_file(fs::path(dir) / "config.txt", config.dump());
  return dir;
}

/// Appends to a JSON-lines file and mirrors each record to `out`.
class JsonLog {
 public:
  JsonLog(const fs::path& path, std::ostream& out) : file_(path, std::ios::trunc), out_(out), path_(path) {
    if (!file_) throw std::ios_base::failure("cannot write " + path.string());
  }
  void write(const json& record) {
    const std::string line = record.dump();
    file_ << line << "\n" << std::flush;
    if (!file_) throw std::ios_base::failure("short write to " + path_.string());
    out_ << line << "\n";
  }

 private:
  std::ofstream file_;
  std::ostream& out_;
  fs::path path_;
};

struct Dataset {
  Manifest manifest;
  std::vector<LabeledImage> images;
  std::vector<const LabeledImage*> ptrs;
};

Dataset load_split(const fs::path& dir, const std::string& split) {
  if (!fs::exists(dir / "manifest.txt")) {
    throw DataError("no dataset at " + dir.string() + " (manifest.txt missing); run 'gen' first");
  }
  Dataset d;
  d.manifest = read_manifest(dir);
  d.images = load_images(dir, read_split(dir, split), d.manifest.spec.num_classes);
  if (d.images.empty()) throw DataError("split '" + split + "' of " + dir.string() + " is empty");
  for (const LabeledImage& im : d.images) d.ptrs.push_back(&im);
  return d;
}

std::vector<std::vector<Annotation>> ground_truth(const Dataset& d) {
  std::vector<std::vector<Annotation>> gt;
  for (const LabeledImage& im : d.images) gt.push_back(im.labels);
  return gt;
}

Tensor stack_views(const std::vector<Tensor>& views) {
  std::vector<double> v;
  for (const Tensor& t : views) {
    const auto x = t.values();
    v.insert(v.end(), x.begin(), x.end());
  }
  const Shape s = views.front().shape();
  return Tensor::from_values({static_cast<std::int64_t>(views.size()), s.c, s.h, s.w}, v, views.front().dtype());
}

json report_record(const MetricsReport& r) {
  return {{"mAP", r.map50}, {"mAR", r.mar}};
}

}  // namespace

SceneSpec scene_spec(const RunConfig& c) {
  SceneSpec s;
  s.image_size = static_cast<int>(c.integer("data.size"));
  s.num_classes = static_cast<int>(c.integer("data.classes"));
  s.min_targets = static_cast<int>(c.integer("data.min_targets"));
  s.max_targets = static_cast<int>(c.integer("data.max_targets"));
  s.occlusion_prob = c.number("data.occlusion");
  s.turbidity = c.number("data.turbidity");
  s.seed = static_cast<std::uint64_t>(c.integer("data.seed"));
  s.validate();
  return s;
}

std::array<std::int64_t, 4> parse_widths(const std::string& text) {
  std::array<std::int64_t, 4> w{};
  std::istringstream in(text);
  std::string tok;
  std::size_t i = 0;
  while (std::getline(in, tok, ',')) {
    if (i == 4) throw UsageError("model.widths: expected four comma-separated widths, got '" + text + "'");
    try {
      std::size_t pos = 0;
      w[i] = std::stoll(tok, &pos);
      if (pos != tok.size() || w[i] < 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw UsageError("model.widths: bad width '" + tok + "'");
    }
    ++i;
  }
  if (i != 4) throw UsageError("model.widths: expected four comma-separated widths, got '" + text + "'");
  return w;
}

std::vector<std::string> class_names(int num_classes) {
  const auto& defaults = default_class_names();
  std::vector<std::string> names;
  for (int k = 0; k < num_classes; ++k) {
    names.push_back(static_cast<std::size_t>(k) < defaults.size() ? defaults[static_cast<std::size_t>(k)]
                                                                  : "class" + std::to_string(k));
  }
  return names;
}

std::string dataset_hash(const fs::path& dir) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const char* bytes, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) h = (h ^ static_cast<unsigned char>(bytes[i])) * 1099511628211ull;
  };
  auto feed = [&](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot read " + p.string());
    const std::string name = p.filename().string();
    mix(name.data(), name.size());
    char buf[4096];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) mix(buf, static_cast<std::size_t>(f.gcount()));
  };
  feed(dir / "manifest.txt");
  for (const char* list : {"train.txt", "val.txt"}) {
    if (fs::exists(dir / list)) feed(dir / list);
  }
  for (const std::string& id : read_split(dir, "all")) {
    feed(dir / "labels" / (id + ".txt"));
    feed(dir / "images" / (id + ".ppm"));
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void write_model_card(const fs::path& path, const DetectorConfig& c) {
  json anchors = json::array();
  for (int i = 0; i < 9; ++i) anchors.push_back({c.anchors.at(i).w, c.anchors.at(i).h});
  const json card = {{"variant", c.variant.name()},
                     {"num_classes", c.num_classes},
                     {"stage_widths", c.stage_widths},
                     {"neck_width", c.neck_width},
                     {"dilations", c.dilations},
                     {"anchors", anchors}};
  write_file(path, card.dump(2) + "\n");
}

DetectorConfig read_model_card(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot read model card " + path.string());
  DetectorConfig c;
  try {
    const json card = json::parse(f);
    c.variant = VariantSpec::named(card.at("variant").get<std::string>());
    c.num_classes = card.at("num_classes").get<int>();
    c.stage_widths = card.at("stage_widths").get<std::array<std::int64_t, 4>>();
    c.neck_width = card.at("neck_width").get<std::int64_t>();
    c.dilations = card.at("dilations").get<Dilations>();
    const auto anchors = card.at("anchors").get<std::vector<std::array<double, 2>>>();
    if (anchors.size() != 9) throw DataError("expected 9 anchors");
    for (std::size_t i = 0; i < 9; ++i) c.anchors.scales[i / 3][i % 3] = {anchors[i][0], anchors[i][1]};
  } catch (const json::exception& e) {
    throw DataError("malformed model card " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void load_model_weights(const fs::path& checkpoint, Detector& model, std::ostream& out) {
  std::map<std::string, Shape> in_file;
  for (const NamedTensor& t : read_checkpoint(checkpoint)) in_file[t.name] = t.tensor.shape();
  std::vector<std::string> missing, unexpected, misshaped;
  std::set<std::string> names;
  for (const Parameter& p : model.parameters()) {
    names.insert(p.name);
    const auto it = in_file.find(p.name);
    if (it == in_file.end()) {
      missing.push_back(p.name);
    } else if (it->second != p.tensor.shape()) {
      misshaped.push_back(p.name + " (file " + it->second.str() + ", model " + p.tensor.shape().str() + ")");
    }
  }
  for (const auto& [name, shape] : in_file) {
    if (!names.count(name)) unexpected.push_back(name);
  }
  if (missing.empty() && unexpected.empty() && misshaped.empty()) {
    load_checkpoint(checkpoint, model);
    return;
  }
  out << "checkpoint " << checkpoint.string() << " does not match the model:\n";
  for (const auto& n : missing) out << "  missing in checkpoint: " << n << "\n";
  for (const auto& n : unexpected) out << "  not in model:          " << n << "\n";
  for (const auto& n : misshaped) out << "  shape mismatch:        " << n << "\n";
  throw VerificationError(std::to_string(missing.size()) + " missing, " + std::to_string(unexpected.size()) +
                          " unexpected and " + std::to_string(misshaped.size()) + " mis-shaped tensors in " +
                          checkpoint.string());
}

int cmd_gen(const RunConfig& config, std::ostream& out) {
  print_config(config, "gen", out);
  const SceneSpec spec = scene_spec(config);
  const fs::path dir = config.str("data.dir");
  generate_dataset(dir, spec, positive(config, "data.count"));
  const Split split = split_dataset(dir, config.number("data.split"),
                                    static_cast<std::uint64_t>(config.integer("data.split_seed")));
  const Manifest m = read_manifest(dir);
  out << "generated " << m.count << " images (" << m.targets << " targets, " << spec.num_classes
      << " classes) in " << dir.string() << "\n";
  out << "train " << split.train.size() << " / val " << split.val.size() << "\n";
  out << "manifest hash " << dataset_hash(dir) << "\n";
  return kExitOk;
}

int cmd_pretrain(const RunConfig& config, std::ostream& out) {
  print_config(config, "pretrain", out);
  PretrainConfig pc;
  pc.lr = config.number("ssl.lr");
  pc.batch_size = positive(config, "ssl.batch");
  pc.epochs = positive(config, "ssl.epochs");
  pc.seed = static_cast<std::uint64_t>(config.integer("ssl.seed"));
  pc.validate();
  AugmentationSpec aug;
  aug.target_size = config.integer("ssl.view_size");
  aug.seed = pc.seed;
  aug.validate();

  const Dataset data = load_split(config.str("data.dir"), "train");
  const fs::path dir = prepare_dir(config.str("ssl.out"), config);
  SiameseConfig sc;
  sc.stage_widths = parse_widths(config.str("model.widths"));
  sc.projection_dim = config.integer("ssl.projection_dim");
  Rng rng(static_cast<std::uint64_t>(config.integer("model.seed")));
  SiameseModel model(sc, rng);
  Adam optimizer(model.trainable_parameters(), {pc.lr});

  // Fixed probe batch for the collapse metric: un-augmented, resized views.
  std::vector<Tensor> probe_views;
  for (std::size_t i = 0; i < std::min<std::size_t>(data.images.size(), 64); ++i) {
    probe_views.push_back(augment_view(data.images[i].image, AugmentationSpec::identity(aug.target_size), 0));
  }
  if (probe_views.size() < 2) throw DataError("pretrain needs at least two training images");
  const Tensor probe = stack_views(probe_views);
  const double floor = collapse_floor(sc.projection_dim);

  const std::size_t n = data.images.size();
  const std::size_t steps_per_epoch = (n + pc.batch_size - 1) / pc.batch_size;
  BatchSampler sampler(n, pc.batch_size, pc.seed);
  JsonLog log(dir / "pretrain_log.jsonl", out);
  std::size_t step = 0;
  double collapse = 0;
  for (std::size_t epoch = 1; epoch <= pc.epochs; ++epoch) {
    double total = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<std::pair<Tensor, Tensor>> views;
      for (std::size_t i : sampler.next()) views.push_back(augment_pair(data.images[i].image, aug, step * n + i));
      const double loss = pretrain_step(model, optimizer, views);
      if (!std::isfinite(loss)) throw VerificationError("SSL loss became non-finite at step " + std::to_string(step));
      total += loss;
    }
    collapse = collapse_metric(model, probe);
    log.write({{"epoch", epoch},
               {"steps", step},
               {"loss", total / static_cast<double>(steps_per_epoch)},
               {"collapse", collapse},
               {"collapse_floor", floor}});
  }
  export_backbone(model, dir / "backbone.ckpt");
  out << "backbone written to " << (dir / "backbone.ckpt").string() << "\n";
  if (!(collapse > floor)) {
    out << "collapse metric " << fixed(collapse) << " is at or below the floor " << fixed(floor) << "\n";
    return kExitVerification;
  }
  return kExitOk;
}

TrainOutcome train_and_evaluate(const RunConfig& config, const VariantSpec& variant, const fs::path& out_dir,
                                std::ostream& out) {
  const fs::path data_dir = config.str("data.dir");
  const Dataset train = load_split(data_dir, "train");
  const Dataset val = load_split(data_dir, "val");
  fs::create_directories(out_dir);
  write_file(out_dir / "config.txt", config.dump());

  DetectorConfig dc;
  dc.variant = variant;
  dc.num_classes = train.manifest.spec.num_classes;
  dc.stage_widths = parse_widths(config.str("model.widths"));
  dc.neck_width = config.integer("model.neck_width");
  if (config.flag("train.kmeans_anchors")) {
    std::vector<Box> boxes;
    for (const LabeledImage& im : train.images)
      for (const Annotation& a : im.labels) boxes.push_back(a.box);
    dc.anchors = kmeans_anchors(boxes, static_cast<std::uint64_t>(config.integer("train.seed")));
  }
  dc.validate();

  Rng rng(static_cast<std::uint64_t>(config.integer("model.seed")));
  Detector model(dc, rng);
  if (const std::string init = config.str("train.init_backbone"); !init.empty()) {
    LoadOptions lo;
    lo.prefix = "backbone.";
    const LoadReport rep = load_checkpoint(init, model, lo);
    if (!rep.unmatched_in_file.empty()) {
      throw VerificationError(init + " holds " + std::to_string(rep.unmatched_in_file.size()) +
                              " tensors the backbone lacks, e.g. " + rep.unmatched_in_file.front());
    }
    out << "initialised " << rep.matched.size() << " backbone tensors from " << init << "\n";
  }

  SgdOptions sgd;
  sgd.lr = config.number("train.lr");
  sgd.momentum = config.number("train.momentum");
  sgd.weight_decay = config.number("train.weight_decay");
  if (!(sgd.lr > 0)) throw UsageError("train.lr must be positive");
  Sgd optimizer(model.trainable_parameters(), sgd);
  const LossWeights weights{config.number("train.w_re"), config.number("train.w_co"), config.number("train.w_cl")};
  const std::size_t batch = positive(config, "train.batch");
  const std::size_t epochs = positive(config, "train.epochs");
  const std::int64_t warmup = config.integer("train.warmup");
  if (warmup < 0) throw UsageError("train.warmup must be non-negative");
  const double conf = config.number("eval.conf"), nms_iou = config.number("eval.nms");

  const std::size_t n = train.images.size();
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  BatchSampler sampler(n, batch, static_cast<std::uint64_t>(config.integer("train.seed")));
  const auto val_gt = ground_truth(val);
  JsonLog log(out_dir / "train_log.jsonl", out);
  TrainOutcome outcome;
  outcome.best_map = -1;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      optimizer.options().lr = warmup_lr(sgd.lr, step, static_cast<std::size_t>(warmup));
      std::vector<const LabeledImage*> b;
      for (std::size_t i : sampler.next()) b.push_back(train.ptrs[i]);
      const StepStats st = train_step(model, optimizer, b, weights);
      if (!std::isfinite(st.total)) {
        throw VerificationError(variant.name() + ": training diverged (non-finite loss) at step " +
                                std::to_string(step));
      }
      rec.l_re += st.l_re;
      rec.l_co += st.l_co;
      rec.l_cl += st.l_cl;
      rec.total += st.total;
    }
    const auto k = static_cast<double>(steps_per_epoch);
    rec.l_re /= k, rec.l_co /= k, rec.l_cl /= k, rec.total /= k;
    rec.report = evaluate(predict(model, val.ptrs, conf, nms_iou), val_gt, dc.num_classes);
    json line = {{"epoch", epoch}, {"steps", step},   {"l_re", rec.l_re}, {"l_co", rec.l_co},
                 {"l_cl", rec.l_cl}, {"total", rec.total}};
    line.update(report_record(rec.report));
    log.write(line);
    if (rec.report.map50 > outcome.best_map) {
      outcome.best_map = rec.report.map50;
      outcome.best_epoch = epoch;
      outcome.best_report = rec.report;
      save_checkpoint(out_dir / "best.ckpt", model.parameters());
    }
    outcome.epochs.push_back(std::move(rec));
  }
  write_model_card(out_dir / "model.json", dc);
  return outcome;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  print_config(config, "train", out);
  const VariantSpec variant = VariantSpec::named(config.str("model.variant"));
  out << "variant " << variant.name() << " (" << variant.composition() << ")\n";
  const fs::path dir = config.str("train.out");
  const TrainOutcome r = train_and_evaluate(config, variant, dir, out);
  out << "best mAP@0.5 " << fixed(r.best_map) << " at epoch " << r.best_epoch << " -> "
      << (dir / "best.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  print_config(config, "eval", out);
  const Dataset data = load_split(config.str("data.dir"), config.str("eval.split"));
  const auto gt = ground_truth(data);
  const int k = data.manifest.spec.num_classes;
  std::vector<std::vector<Detection>> preds;
  std::string model_name;
  if (config.flag("eval.oracle")) {
    model_name = "ground-truth";
    for (const auto& labels : gt) {
      std::vector<Detection> d;
      for (const Annotation& a : labels) d.push_back({a.box, a.cls, 1.0});
      preds.push_back(std::move(d));
    }
  } else {
    const fs::path model_dir = config.str("eval.model");
    const DetectorConfig dc = read_model_card(model_dir / "model.json");
    if (dc.num_classes != k) {
      throw VerificationError("model predicts " + std::to_string(dc.num_classes) + " classes, dataset has " +
                              std::to_string(k));
    }
    Rng rng(0);
    Detector model(dc, rng);
    load_model_weights(model_dir / "best.ckpt", model, out);
    model_name = dc.variant.name();
    preds = predict(model, data.ptrs, config.number("eval.conf"), config.number("eval.nms"));
  }
  const MetricsReport report = evaluate(preds, gt, k);
  const fs::path dir = prepare_dir(config.str("eval.out"), config);
  const auto names = class_names(k);
  write_file(dir / "metrics.json", report_json(report, model_name, names));
  write_file(dir / "metrics.csv", report_csv({{model_name, report}}, names));
  out << "model " << model_name << ": " << report.images << " images, " << report.targets << " targets\n";
  for (int c = 0; c < k; ++c) {
    const auto i = static_cast<std::size_t>(c);
    out << "  " << names[i] << " AP50 " << (report.present[i] ? fixed(report.ap50[i]) : std::string("n/a")) << "\n";
  }
  out << "mAP@0.5 " << fixed(report.map50) << "  mAR " << fixed(report.mar) << "\n";
  out << "reports written to " << (dir / "metrics.json").string() << " and " << (dir / "metrics.csv").string()
      << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out) {
  print_config(config, "gradcheck", out);
  GradcheckOptions o;
  o.tolerance = config.number("gradcheck.tolerance");
  o.corrupt_conv_backward = config.flag("gradcheck.fault");
  const GradcheckReport r = run_gradcheck_suite(o);
  for (const GradcheckEntry& e : r.entries) {
    char line[128];
    std::snprintf(line, sizeof line, "%-22s %.3e  %s\n", e.op.c_str(), e.worst, e.passed ? "ok" : "FAIL");
    out << line;
  }
  const auto failed = std::count_if(r.entries.begin(), r.entries.end(), [](const auto& e) { return !e.passed; });
  out << r.entries.size() << " ops checked, " << failed << " failed (tolerance " << o.tolerance << ")\n";
  return r.passed() ? kExitOk : kExitVerification;
}

int cmd_ablate(const RunConfig& config, std::ostream& out) {
  print_config(config, "ablate", out);
  const fs::path dir = prepare_dir(config.str("ablate.out"), config);
  std::vector<std::pair<VariantSpec, TrainOutcome>> rows;
  for (const std::string& name : variant_names()) {
    const VariantSpec v = VariantSpec::named(name);
    out << "== variant " << name << " (" << v.composition() << ")\n";
    rows.emplace_back(v, train_and_evaluate(config, v, dir / name, out));
  }

  const std::vector<double> thresholds = rows.front().second.best_report.thresholds;
  std::ostringstream csv;
  csv << "variant,composition,mAP,mAR";
  for (double t : thresholds) csv << ",mAP@" << fixed(t, 2);
  for (double t : thresholds) csv << ",mAR@" << fixed(t, 2);
  csv << "\n";
  json table = json::array();
  for (const auto& [v, r] : rows) {
    const MetricsReport& m = r.best_report;
    std::vector<double> all = {m.map50, m.mar};
    all.insert(all.end(), m.map_at.begin(), m.map_at.end());
    all.insert(all.end(), m.mar_at.begin(), m.mar_at.end());
    for (double x : all) {
      if (!std::isfinite(x)) throw VerificationError("variant " + v.name() + " produced a non-finite metric");
    }
    csv << v.name() << "," << v.composition() << "," << fixed(m.map50) << "," << fixed(m.mar);
    for (double x : m.map_at) csv << "," << fixed(x);
    for (double x : m.mar_at) csv << "," << fixed(x);
    csv << "\n";
    table.push_back({{"variant", v.name()},
                     {"composition", v.composition()},
                     {"best_epoch", r.best_epoch},
                     {"mAP", m.map50},
                     {"mAR", m.mar},
                     {"thresholds", m.thresholds},
                     {"mAP_at", m.map_at},
                     {"mAR_at", m.mar_at}});
  }
  write_file(dir / "ablation.csv", csv.str());
  write_file(dir / "ablation.json", table.dump(2) + "\n");

  char line[160];
  std::snprintf(line, sizeof line, "%-9s %-22s %9s %9s %9s\n", "variant", "composition", "mAP@0.5", "mAP@.5:.95",
                "mAR");
  out << line;
  for (const auto& [v, r] : rows) {
    const MetricsReport& m = r.best_report;
    double coco = 0;
    for (double x : m.map_at) coco += x;
    coco /= static_cast<double>(m.map_at.size());
    std::snprintf(line, sizeof line, "%-9s %-22s %9.4f %9.4f %9.4f\n", v.name().c_str(), v.composition().c_str(),
                  m.map50, coco, m.mar);
    out << line;
  }
  out << "table written to " << (dir / "ablation.csv").string() << "\n";
  return kExitOk;
}

int cmd_render(const RunConfig& config, std::ostream& out) {
  print_config(config, "render", out);
  Dataset data = load_split(config.str("data.dir"), config.str("render.split"));
  if (const std::int64_t limit = config.integer("render.limit"); limit > 0 &&
                                                                 static_cast<std::size_t>(limit) < data.ptrs.size()) {
    data.ptrs.resize(static_cast<std::size_t>(limit));
  }
  const fs::path model_dir = config.str("render.model");
  const DetectorConfig dc = read_model_card(model_dir / "model.json");
  Rng rng(0);
  Detector model(dc, rng);
  load_model_weights(model_dir / "best.ckpt", model, out);
  const auto preds = predict(model, data.ptrs, config.number("render.conf"), config.number("eval.nms"));
  const fs::path dir = prepare_dir(config.str("render.out"), config);
  std::size_t missed = 0;
  for (std::size_t i = 0; i < data.ptrs.size(); ++i) {
    const LabeledImage& im = *data.ptrs[i];
    const RenderResult r = render_detections(im.image, preds[i], im.labels);
    write_ppm(dir / (im.id + ".ppm"), r.image);
    missed += r.missed.size();
    out << im.id << ": " << r.predicted.size() << " predicted, " << r.missed.size() << " missed of "
        << im.labels.size() << "\n";
  }
  out << data.ptrs.size() << " images rendered to " << dir.string() << ", " << missed << " missed targets in red\n";
  return kExitOk;
}

}  // namespace dpf
