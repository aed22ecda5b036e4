#include "dpf/data.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dpf/random.h"

namespace dpf {
namespace fs = std::filesystem;

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"starfish", "scallop", "holothurian",
                                                 "fish",     "lobster", "octopus",
                                                 "sea_snake", "turtle", "echinus"};
  return names;
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SceneSpec: " + m); };
  if (image_size < 8) fail("image_size must be >= 8");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (min_targets < 0 || max_targets < min_targets) fail("bad target count range");
  if (!(min_side > 0 && min_side <= max_side && max_side <= 1)) fail("bad side range");
  if (!(occlusion_prob >= 0 && occlusion_prob <= 1)) fail("occlusion_prob must be in [0,1]");
  if (!(contrast_lo > 0 && contrast_lo <= contrast_hi && contrast_hi <= 1)) fail("bad contrast range");
  if (turbidity < 0) fail("turbidity must be >= 0");
}

namespace {

/// Round-trips through the label file's decimal representation.
double canonical(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return std::strtod(buf, nullptr);
}

std::array<double, 3> hsv(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (double& ch : rgb) ch += v - c;
  return rgb;
}

/// Class silhouettes on the box-normalised square u, v in [-1, 1] (v down).
bool silhouette(int cls, double u, double v) {
  const double r = std::hypot(u, v);
  const double th = std::atan2(v, u);
  switch (cls % 9) {
    case 0:  // five-armed star
      return r <= 0.45 + 0.55 * std::pow(std::abs(std::cos(2.5 * (th + std::numbers::pi / 2))), 3);
    case 1:  // fan: half ellipse on a flat base
      return u * u + (v - 1) * (v - 1) / 4 <= 1;
    case 2:  // capsule
      return std::abs(v) <= 0.55 ? true : u * u + (std::abs(v) - 0.55) * (std::abs(v) - 0.55) / 0.2025 <= 1;
    case 3:  // body plus tail
      return (u + 0.3) * (u + 0.3) / 0.49 + v * v <= 1 || (u >= 0.3 && std::abs(v) <= (u - 0.3) / 0.7);
    case 4:  // plus sign
      return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
    case 5:  // dome with legs
      return v <= 0 ? u * u + v * v <= 1 : std::fmod(std::abs(u) * 3.5, 1.0) < 0.55;
    case 6:  // sine band
      return std::abs(v - 0.65 * std::sin(3.0 * u)) <= 0.35;
    case 7:  // diamond
      return std::abs(u) + std::abs(v) <= 1.0;
    default:  // spiky disc
      return r <= 0.7 + 0.3 * std::abs(std::cos(6 * th));
  }
}

struct PixelBox {
  double x0, y0, w, h;
};

double overlap_area(const Box& a, const Box& b) {
  const double iw = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const double ih = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  return std::max(0.0, iw) * std::max(0.0, ih);
}

}  // namespace

LabeledImage generate_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, index));
  const int size = spec.image_size;
  const auto npx = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  std::vector<double> img(3 * npx);

  // Blue-green water with a vertical light falloff.
  const std::array<double, 3> water = {0.05 + 0.1 * rng.uniform(), 0.3 + 0.2 * rng.uniform(),
                                       0.4 + 0.2 * rng.uniform()};
  for (int y = 0; y < size; ++y) {
    const double fall = 1.0 - 0.35 * y / size;
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) img[c * npx + static_cast<std::size_t>(y * size + x)] = water[c] * fall;
    }
  }

  LabeledImage out;
  out.id = image_id(index);
  const int count = spec.min_targets +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_targets - spec.min_targets + 1)));
  const double log_lo = std::log(spec.min_side), log_hi = std::log(spec.max_side);
  for (int t = 0; t < count; ++t) {
    const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
    const double side = std::exp(rng.uniform(log_lo, log_hi));
    const double aspect = std::exp(rng.uniform(-0.4, 0.4));
    const double w = std::clamp(side * aspect, spec.min_side, spec.max_side);
    const double h = std::clamp(side / aspect, spec.min_side, spec.max_side);
    const bool occluding = !out.labels.empty() && rng.bernoulli(spec.occlusion_prob);
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double x0 = canonical(rng.uniform(0, 1 - w));
      const double y0 = canonical(rng.uniform(0, 1 - h));
      const double wc = canonical(w), hc = canonical(h);
      const Box b{canonical(x0 + wc / 2), canonical(y0 + hc / 2), wc, hc};
      bool ok = true;
      bool touches = false;
      for (const Annotation& a : out.labels) {
        const double inter = overlap_area(a.box, b);
        touches |= inter > 0;
        // An occluder may cover part of an earlier target but never most of it.
        if (occluding ? iou(a.box, b) > 0.5 || inter > 0.6 * a.box.w * a.box.h : inter > 0) {
          ok = false;
        }
      }
      if (ok && (!occluding || touches)) {
        out.labels.push_back({b, cls});
        break;
      }
    }
  }

  for (const Annotation& a : out.labels) {
    const PixelBox pb{(a.box.cx - a.box.w / 2) * size, (a.box.cy - a.box.h / 2) * size,
                      a.box.w * size, a.box.h * size};
    const auto color = hsv(static_cast<double>(a.cls) / spec.num_classes, 0.8, 0.95);
    const double alpha = 0.9;
    const int xa = std::max(0, static_cast<int>(std::floor(pb.x0)));
    const int xb = std::min(size - 1, static_cast<int>(std::ceil(pb.x0 + pb.w)));
    const int ya = std::max(0, static_cast<int>(std::floor(pb.y0)));
    const int yb = std::min(size - 1, static_cast<int>(std::ceil(pb.y0 + pb.h)));
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        const double u = ((x + 0.5) - pb.x0) / pb.w * 2 - 1;
        const double v = ((y + 0.5) - pb.y0) / pb.h * 2 - 1;
        if (std::abs(u) > 1 || std::abs(v) > 1 || !silhouette(a.cls, u, v)) continue;
        const double shade = 0.75 + 0.25 * (1 - v) / 2;
        for (int c = 0; c < 3; ++c) {
          double& px = img[c * npx + static_cast<std::size_t>(y * size + x)];
          px = (1 - alpha) * px + alpha * color[c] * shade;
        }
      }
    }
  }

  // Haze veil, global contrast compression, turbidity noise.
  const double haze = rng.uniform(0.0, 0.25);
  const double contrast = rng.uniform(spec.contrast_lo, spec.contrast_hi);
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < npx; ++i) {
      double& px = img[c * npx + i];
      px = (1 - haze) * px + haze * water[c];
      mean += px;
    }
    mean /= static_cast<double>(npx);
    for (std::size_t i = 0; i < npx; ++i) {
      double& px = img[c * npx + i];
      px = mean + contrast * (px - mean) + spec.turbidity * rng.normal();
      px = std::round(std::clamp(px, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  out.image = Tensor::from_values({1, 3, size, size}, img, DType::kF32);
  return out;
}

void write_ppm(const fs::path& path, const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("write_ppm: expected (1,3,H,W), got " + s.str());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P6\n" << s.w << " " << s.h << "\n255\n";
  const auto v = image.values();
  const auto plane = static_cast<std::size_t>(s.h * s.w);
  std::vector<unsigned char> bytes(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      bytes[3 * i + c] = static_cast<unsigned char>(std::lround(std::clamp(v[c * plane + i], 0.0, 1.0) * 255.0));
    }
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to " + path.string());
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    while (f) {
      const int ch = f.get();
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(ch)) {
        if (!t.empty()) break;
      } else if (ch != EOF) {
        t.push_back(static_cast<char>(ch));
      }
    }
    return t;
  };
  if (token() != "P6") throw DataError(path.string() + ": not a binary PPM");
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w < 1 || h < 1 || maxval != 255) throw DataError(path.string() + ": unsupported PPM header");
  const auto plane = static_cast<std::size_t>(w * h);
  std::vector<unsigned char> bytes(3 * plane);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  std::vector<double> v(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) v[c * plane + i] = bytes[3 * i + c] / 255.0;
  }
  return Tensor::from_values({1, 3, h, w}, v, DType::kF32);
}

std::string format_labels(const std::vector<Annotation>& labels) {
  std::string out;
  char line[128];
  for (const Annotation& a : labels) {
    std::snprintf(line, sizeof line, "%d %.6f %.6f %.6f %.6f\n", a.cls, a.box.cx, a.box.cy, a.box.w,
                  a.box.h);
    out += line;
  }
  return out;
}

std::vector<Annotation> parse_labels(const std::string& text, int num_classes) {
  std::vector<Annotation> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Annotation a;
    if (!(ls >> a.cls >> a.box.cx >> a.box.cy >> a.box.w >> a.box.h)) {
      throw DataError("label line " + std::to_string(lineno) + ": expected 'class cx cy w h'");
    }
    if (a.cls < 0 || a.cls >= num_classes) {
      throw DataError("label line " + std::to_string(lineno) + ": class id " + std::to_string(a.cls) +
                      " out of range");
    }
    out.push_back(a);
  }
  return out;
}

std::string image_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void generate_dataset(const fs::path& dir, const SceneSpec& spec, std::size_t count) {
  spec.validate();
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::size_t targets = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const LabeledImage scene = generate_scene(spec, i);
    write_ppm(dir / "images" / (scene.id + ".ppm"), scene.image);
    write_text(dir / "labels" / (scene.id + ".txt"), format_labels(scene.labels));
    targets += scene.labels.size();
  }
  std::ostringstream m;
  m << "format=dpf-synthetic-1\n"
    << "seed=" << spec.seed << "\n"
    << "image_size=" << spec.image_size << "\n"
    << "num_classes=" << spec.num_classes << "\n"
    << "min_targets=" << spec.min_targets << "\n"
    << "max_targets=" << spec.max_targets << "\n"
    << "min_side=" << fmt_double(spec.min_side) << "\n"
    << "max_side=" << fmt_double(spec.max_side) << "\n"
    << "occlusion_prob=" << fmt_double(spec.occlusion_prob) << "\n"
    << "contrast_lo=" << fmt_double(spec.contrast_lo) << "\n"
    << "contrast_hi=" << fmt_double(spec.contrast_hi) << "\n"
    << "turbidity=" << fmt_double(spec.turbidity) << "\n"
    << "count=" << count << "\n"
    << "targets=" << targets << "\n";
  write_text(dir / "manifest.txt", m.str());
}

Manifest read_manifest(const fs::path& dir) {
  std::istringstream in(read_text(dir / "manifest.txt"));
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw DataError("manifest in " + dir.string() + " lacks '" + k + "'");
    return it->second;
  };
  Manifest m;
  try {
    m.spec.seed = std::stoull(get("seed"));
    m.spec.image_size = std::stoi(get("image_size"));
    m.spec.num_classes = std::stoi(get("num_classes"));
    m.spec.min_targets = std::stoi(get("min_targets"));
    m.spec.max_targets = std::stoi(get("max_targets"));
    m.spec.min_side = std::stod(get("min_side"));
    m.spec.max_side = std::stod(get("max_side"));
    m.spec.occlusion_prob = std::stod(get("occlusion_prob"));
    m.spec.contrast_lo = std::stod(get("contrast_lo"));
    m.spec.contrast_hi = std::stod(get("contrast_hi"));
    m.spec.turbidity = std::stod(get("turbidity"));
    m.count = std::stoull(get("count"));
    m.targets = std::stoull(get("targets"));
  } catch (const std::logic_error&) {
    throw DataError("malformed manifest in " + dir.string());
  }
  return m;
}

Split split_ids(std::vector<std::string> ids, double ratio, std::uint64_t seed) {
  if (ids.size() < 10) {
    throw std::invalid_argument("split needs at least 10 images, got " + std::to_string(ids.size()));
  }
  if (!(ratio > 0 && ratio < 1)) throw std::invalid_argument("split ratio must be in (0,1)");
  Rng rng(mix_seed(seed, 0x5917));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ids.size())));
  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

Split split_dataset(const fs::path& dir, double ratio, std::uint64_t seed) {
  const Manifest m = read_manifest(dir);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < m.count; ++i) ids.push_back(image_id(i));
  Split s = split_ids(std::move(ids), ratio, seed);
  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (const auto& id : v) out += id + "\n";
    return out;
  };
  write_text(dir / "train.txt", join(s.train));
  write_text(dir / "val.txt", join(s.val));
  return s;
}

std::vector<std::string> read_split(const fs::path& dir, const std::string& split) {
  std::vector<std::string> ids;
  if (split == "all") {
    const Manifest m = read_manifest(dir);
    for (std::size_t i = 0; i < m.count; ++i) ids.push_back(image_id(i));
    return ids;
  }
  if (split != "train" && split != "val") {
    throw std::invalid_argument("unknown split '" + split + "' (expected train, val or all)");
  }
  std::istringstream in(read_text(dir / (split + ".txt")));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::vector<LabeledImage> load_images(const fs::path& dir, const std::vector<std::string>& ids,
                                      int num_classes) {
  std::vector<LabeledImage> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    LabeledImage li;
    li.id = id;
    li.image = read_ppm(dir / "images" / (id + ".ppm"));
    li.labels = parse_labels(read_text(dir / "labels" / (id + ".txt")), num_classes);
    out.push_back(std::move(li));
  }
  return out;
}

}  // namespace dpf
