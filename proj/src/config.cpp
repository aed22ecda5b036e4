#include "dpf/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dpf {

namespace {

using T = RunConfig::Type;

struct Default {
  const char* key;
  T type;
  const char* value;
  const char* help;
};

// Desk-scale defaults; full-scale values are reachable by overriding them.
constexpr Default kDefaults[] = {
    {"data.dir", T::kString, "data", "dataset directory"},
    {"data.count", T::kInt, "200", "images to generate"},
    {"data.classes", T::kInt, "9", "number of categories"},
    {"data.size", T::kInt, "128", "image side in pixels (multiple of 32)"},
    {"data.seed", T::kInt, "7", "generator seed"},
    {"data.split", T::kFloat, "0.9", "train fraction"},
    {"data.split_seed", T::kInt, "0", "shuffle seed of the train/val split"},
    {"data.min_targets", T::kInt, "1", "fewest objects per image"},
    {"data.max_targets", T::kInt, "6", "most objects per image"},
    {"data.occlusion", T::kFloat, "0.3", "probability an object may overlap another"},
    {"data.turbidity", T::kFloat, "0.03", "std-dev of additive pixel noise"},

    {"model.variant", T::kString, "full", "baseline | a | b | c | full"},
    {"model.widths", T::kString, "16,32,64,128", "backbone stage widths"},
    {"model.neck_width", T::kInt, "64", "neck channel width"},
    {"model.seed", T::kInt, "0", "parameter initialisation seed"},

    {"ssl.lr", T::kFloat, "0.0001", "Adam learning rate"},
    {"ssl.batch", T::kInt, "4", "images per step"},
    {"ssl.epochs", T::kInt, "5", "passes over the train split"},
    {"ssl.view_size", T::kInt, "64", "side of the augmented views"},
    {"ssl.projection_dim", T::kInt, "128", "encoder output dimension"},
    {"ssl.seed", T::kInt, "0", "sampling and augmentation seed"},
    {"ssl.out", T::kString, "runs/ssl", "output directory"},

    {"train.epochs", T::kInt, "10", "passes over the train split"},
    {"train.batch", T::kInt, "8", "images per step"},
    {"train.lr", T::kFloat, "0.01", "SGD learning rate"},
    {"train.momentum", T::kFloat, "0.937", "SGD momentum"},
    {"train.weight_decay", T::kFloat, "0", "SGD weight decay"},
    {"train.warmup", T::kInt, "50", "linear warmup steps"},
    {"train.w_re", T::kFloat, "1", "regression loss weight"},
    {"train.w_co", T::kFloat, "1", "objectness loss weight"},
    {"train.w_cl", T::kFloat, "1", "classification loss weight"},
    {"train.seed", T::kInt, "0", "batch order seed"},
    {"train.init_backbone", T::kString, "", "backbone checkpoint to start from"},
    {"train.kmeans_anchors", T::kBool, "true", "fit anchors to the train boxes"},
    {"train.out", T::kString, "runs/train", "output directory"},

    {"eval.model", T::kString, "runs/train", "directory holding best.ckpt and model.json"},
    {"eval.split", T::kString, "val", "train | val | all"},
    {"eval.conf", T::kFloat, "0.001", "score threshold"},
    {"eval.nms", T::kFloat, "0.6", "NMS IoU threshold"},
    {"eval.out", T::kString, "runs/eval", "output directory"},
    {"eval.oracle", T::kBool, "false", "score the ground truth itself instead of a model"},

    {"ablate.out", T::kString, "runs/ablate", "output directory"},

    {"render.model", T::kString, "runs/train", "directory holding best.ckpt and model.json"},
    {"render.split", T::kString, "val", "train | val | all"},
    {"render.limit", T::kInt, "8", "images to render (0 = all)"},
    {"render.conf", T::kFloat, "0.25", "score threshold"},
    {"render.out", T::kString, "runs/render", "output directory"},

    {"gradcheck.fault", T::kBool, "false", "corrupt the conv2d backward (negative control)"},
    {"gradcheck.tolerance", T::kFloat, "0.0001", "maximum relative error"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool parse_bool(const std::string& v, bool* out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return *out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return *out = false, true;
  return false;
}

bool parse_int(const std::string& v, std::int64_t* out) {
  const char* end = v.data() + v.size();
  auto r = std::from_chars(v.data(), end, *out);
  return r.ec == std::errc() && r.ptr == end && !v.empty();
}

bool parse_float(const std::string& v, double* out) {
  if (v.empty()) return false;
  std::size_t pos = 0;
  try {
    *out = std::stod(v, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == v.size();
}

}  // namespace

RunConfig::RunConfig() {
  for (const Default& d : kDefaults) {
    index_[d.key] = entries_.size();
    entries_.push_back({d.key, d.type, d.value, d.help});
  }
}

const RunConfig::Entry& RunConfig::find(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) throw UsageError("unknown config key '" + key + "'");
  return entries_[it->second];
}

bool RunConfig::has(const std::string& key) const { return index_.count(key) != 0; }

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = index_.find(key);
  if (it == index_.end()) throw UsageError("unknown config key '" + key + "'");
  Entry& e = entries_[it->second];
  const std::string v = trim(value);
  bool b;
  std::int64_t i;
  double f;
  bool ok = true;
  switch (e.type) {
    case T::kString: break;
    case T::kInt: ok = parse_int(v, &i); break;
    case T::kFloat: ok = parse_float(v, &f); break;
    case T::kBool: ok = parse_bool(v, &b); break;
  }
  if (!ok) throw UsageError("config key '" + key + "': cannot parse '" + v + "'");
  e.value = v;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw UsageError(where + "expected 'key = value'");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(where + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  merge_text(ss.str(), path.string());
}

const std::string& RunConfig::str(const std::string& key) const { return find(key).value; }

std::int64_t RunConfig::integer(const std::string& key) const {
  const Entry& e = find(key);
  std::int64_t v = 0;
  if (e.type != T::kInt || !parse_int(e.value, &v)) throw UsageError("config key '" + key + "' is not an integer");
  return v;
}

double RunConfig::number(const std::string& key) const {
  const Entry& e = find(key);
  double v = 0;
  if ((e.type != T::kFloat && e.type != T::kInt) || !parse_float(e.value, &v)) {
    throw UsageError("config key '" + key + "' is not a number");
  }
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const Entry& e = find(key);
  bool v = false;
  if (e.type != T::kBool || !parse_bool(e.value, &v)) throw UsageError("config key '" + key + "' is not a boolean");
  return v;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const Entry& e : entries_) out += e.key + " = " + e.value + "\n";
  return out;
}

}  // namespace dpf
