#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpf/losses.h"
#include "dpf/tensor.h"

namespace dpf {

/// Category names in report column order.
const std::vector<std::string>& default_class_names();

/// Parameters of the synthetic scene generator. Sizes are fractions of the
/// image side.
struct SceneSpec {
  int image_size = 128;
  int num_classes = 9;
  int min_targets = 1;
  int max_targets = 6;
  double min_side = 0.04;
  double max_side = 0.40;
  /// Probability that a target is allowed to overlap an earlier one.
  double occlusion_prob = 0.3;
  double contrast_lo = 0.45;
  double contrast_hi = 0.9;
  /// Std-dev of the additive per-pixel noise.
  double turbidity = 0.03;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One ground-truth object; box normalised to [0,1] in (cx, cy, w, h).
struct Annotation {
  Box box;
  int cls = 0;
};

struct LabeledImage {
  std::string id;
  /// (1,3,H,W) f32, values k/255.
  Tensor image;
  std::vector<Annotation> labels;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic in (spec, index). Label coordinates are already rounded to
/// the 6 decimals of the label file, and pixels to 8 bits.
LabeledImage generate_scene(const SceneSpec& spec, std::uint64_t index);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

/// "class cx cy w h" per line, 6 decimals.
std::string format_labels(const std::vector<Annotation>& labels);
std::vector<Annotation> parse_labels(const std::string& text, int num_classes);

std::string image_id(std::uint64_t index);

/// Writes images/NNNNNN.ppm, labels/NNNNNN.txt and manifest.txt under `dir`.
void generate_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t count);

struct Manifest {
  SceneSpec spec;
  std::size_t count = 0;
  std::size_t targets = 0;
};
Manifest read_manifest(const std::filesystem::path& dir);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

/// Seeded shuffle, train size round(ratio * n). Rejects n < 10.
Split split_ids(std::vector<std::string> ids, double ratio, std::uint64_t seed);
/// Splits a generated dataset and writes train.txt / val.txt beside the manifest.
Split split_dataset(const std::filesystem::path& dir, double ratio = 0.9, std::uint64_t seed = 0);

/// Reads "train" / "val" list files, or every image when `split` is "all".
std::vector<std::string> read_split(const std::filesystem::path& dir, const std::string& split);
std::vector<LabeledImage> load_images(const std::filesystem::path& dir,
                                      const std::vector<std::string>& ids, int num_classes);

}  // namespace dpf
