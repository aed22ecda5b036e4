#include "dpf/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace dpf {

double rasterized_iou_oracle(const Box& a, const Box& b, double cell) {
  if (!(cell > 0)) throw std::invalid_argument("rasterized_iou_oracle: cell must be > 0");
  const double x0 = std::min(a.cx - a.w / 2, b.cx - b.w / 2);
  const double y0 = std::min(a.cy - a.h / 2, b.cy - b.h / 2);
  const double x1 = std::max(a.cx + a.w / 2, b.cx + b.w / 2);
  const double y1 = std::max(a.cy + a.h / 2, b.cy + b.h / 2);
  const auto nx = static_cast<std::int64_t>(std::ceil((x1 - x0) / cell));
  const auto ny = static_cast<std::int64_t>(std::ceil((y1 - y0) / cell));
  auto inside = [](const Box& q, double x, double y) {
    return std::abs(x - q.cx) <= q.w / 2 && std::abs(y - q.cy) <= q.h / 2;
  };
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t j = 0; j < ny; ++j) {
    const double y = y0 + (static_cast<double>(j) + 0.5) * cell;
    for (std::int64_t i = 0; i < nx; ++i) {
      const double x = x0 + (static_cast<double>(i) + 0.5) * cell;
      const bool ia = inside(a, x, y), ib = inside(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ApResult average_precision(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<std::vector<Box>>& ground_truth,
                           double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("average_precision: image count mismatch");
  }
  struct Ref {
    std::size_t image, index;
    double score;
  };
  std::vector<Ref> order;
  ApResult r;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    r.num_gt += ground_truth[i].size();
    for (std::size_t k = 0; k < detections[i].size(); ++k) order.push_back({i, k, detections[i][k].score});
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Ref& a, const Ref& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> taken(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i) taken[i].assign(ground_truth[i].size(), false);
  std::size_t tp = 0;
  for (std::size_t n = 0; n < order.size(); ++n) {
    const Ref& ref = order[n];
    const Box& box = detections[ref.image][ref.index].box;
    double best = -1;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < ground_truth[ref.image].size(); ++k) {
      if (taken[ref.image][k]) continue;
      const double o = iou(box, ground_truth[ref.image][k]);
      if (o > best) best = o, best_k = k;
    }
    if (best >= iou_threshold) {
      taken[ref.image][best_k] = true;
      ++tp;
    }
    const double recall = r.num_gt ? static_cast<double>(tp) / static_cast<double>(r.num_gt) : 0.0;
    r.curve.push_back({recall, static_cast<double>(tp) / static_cast<double>(n + 1)});
  }
  if (r.num_gt == 0) return r;
  r.max_recall = r.curve.empty() ? 0.0 : r.curve.back().recall;

  // All-points interpolation: sweep from the right keeping the running max precision.
  double envelope = 0, area = 0;
  for (std::size_t n = r.curve.size(); n-- > 0;) {
    envelope = std::max(envelope, r.curve[n].precision);
    const double prev_recall = n ? r.curve[n - 1].recall : 0.0;
    area += (r.curve[n].recall - prev_recall) * envelope;
  }
  r.ap = area;
  return r;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

MetricsReport evaluate(const std::vector<std::vector<Detection>>& predictions,
                       const std::vector<std::vector<Annotation>>& ground_truth, int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("evaluate: num_classes must be >= 1");
  if (predictions.size() != ground_truth.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) +
                                " prediction lists for " + std::to_string(ground_truth.size()) +
                                " images");
  }
  const auto k = static_cast<std::size_t>(num_classes);
  const std::size_t images = ground_truth.size();
  // Per class, per image.
  std::vector<std::vector<std::vector<Detection>>> dets(k, std::vector<std::vector<Detection>>(images));
  std::vector<std::vector<std::vector<Box>>> gts(k, std::vector<std::vector<Box>>(images));
  MetricsReport rep;
  rep.num_classes = num_classes;
  rep.images = images;
  for (std::size_t i = 0; i < images; ++i) {
    for (const Detection& d : predictions[i]) {
      if (d.cls < 0 || d.cls >= num_classes) {
        throw std::invalid_argument("evaluate: prediction class " + std::to_string(d.cls) +
                                    " outside [0," + std::to_string(num_classes) + ")");
      }
      dets[static_cast<std::size_t>(d.cls)][i].push_back(d);
    }
    for (const Annotation& a : ground_truth[i]) {
      if (a.cls < 0 || a.cls >= num_classes) {
        throw std::invalid_argument("evaluate: ground-truth class " + std::to_string(a.cls) +
                                    " outside [0," + std::to_string(num_classes) + ")");
      }
      gts[static_cast<std::size_t>(a.cls)][i].push_back(a.box);
      ++rep.targets;
    }
  }

  rep.thresholds = coco_thresholds();
  rep.ap50.assign(k, 0.0);
  rep.present.assign(k, false);
  for (std::size_t c = 0; c < k; ++c) {
    for (const auto& g : gts[c]) rep.present[c] = rep.present[c] || !g.empty();
  }
  const auto n_present = static_cast<double>(std::count(rep.present.begin(), rep.present.end(), true));
  for (double thr : rep.thresholds) {
    double ap_sum = 0, rec_sum = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (!rep.present[c]) continue;
      const ApResult r = average_precision(dets[c], gts[c], thr);
      ap_sum += r.ap;
      rec_sum += r.max_recall;
      if (thr == rep.thresholds.front()) rep.ap50[c] = r.ap;
    }
    rep.map_at.push_back(n_present > 0 ? ap_sum / n_present : 0.0);
    rep.mar_at.push_back(n_present > 0 ? rec_sum / n_present : 0.0);
  }
  // Same arithmetic as the mean of the reported per-class values.
  double s = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (rep.present[c]) s += rep.ap50[c];
  }
  rep.map50 = n_present > 0 ? s / n_present : 0.0;
  rep.mar = std::accumulate(rep.mar_at.begin(), rep.mar_at.end(), 0.0) /
            static_cast<double>(rep.mar_at.size());
  return rep;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : "class" + std::to_string(c);
}

}  // namespace

std::string report_json(const MetricsReport& report, const std::string& model,
                        const std::vector<std::string>& class_names) {
  // Values are rounded to 6 decimals so the JSON and CSV renderings agree.
  auto r6 = [](double v) { return std::stod(fixed6(v)); };
  nlohmann::ordered_json j;
  j["model"] = model;
  j["images"] = report.images;
  j["targets"] = report.targets;
  j["mAP50"] = r6(100.0 * report.map50);
  j["mAR"] = r6(100.0 * report.mar);
  nlohmann::ordered_json ap = nlohmann::ordered_json::object();
  nlohmann::ordered_json absent = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.ap50.size(); ++c) {
    if (report.present[c]) {
      ap[class_name(class_names, c)] = r6(100.0 * report.ap50[c]);
    } else {
      absent.push_back(class_name(class_names, c));
    }
  }
  j["AP50"] = ap;
  j["absent_classes"] = absent;
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
    curve.push_back({{"iou", r6(report.thresholds[t])},
                     {"mAP", r6(100.0 * report.map_at[t])},
                     {"mAR", r6(100.0 * report.mar_at[t])}});
  }
  j["by_iou"] = curve;
  return j.dump(2) + "\n";
}

std::string report_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                       const std::vector<std::string>& class_names) {
  std::size_t k = class_names.size();
  for (const auto& [name, rep] : rows) k = std::max(k, rep.ap50.size());
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"model", "mAP"};
  for (std::size_t c = 0; c < k; ++c) header.push_back(class_name(class_names, c));
  cells.push_back(header);
  for (const auto& [name, rep] : rows) {
    std::vector<std::string> line = {name, fixed6(100.0 * rep.map50)};
    for (std::size_t c = 0; c < k; ++c) {
      line.push_back(c < rep.ap50.size() && rep.present[c] ? fixed6(100.0 * rep.ap50[c]) : "-");
    }
    cells.push_back(line);
  }
  // Aligned columns: pad every cell but the last to its column width.
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += "," + std::string(width[i] - line[i].size(), ' ');
    }
    out += "\n";
  }
  return out;
}

}  // namespace dpf
