#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpf/nn.h"

namespace dpf {

/// Binary little-endian format: "DPFK", u32 version, u32 count, then per
/// tensor u16 name length, name bytes, u8 rank, u32 dims[rank], u8 dtype tag
/// (0 = f32, 1 = f64) and the raw values. No padding anywhere.
inline constexpr char kCheckpointMagic[4] = {'D', 'P', 'F', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kShapeMismatch, kMissingName };

  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& params);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

struct LoadReport {
  std::vector<std::string> matched;
  /// Names in the file that the model does not have.
  std::vector<std::string> unmatched_in_file;
  /// Model names (within the prefix filter) absent from the file.
  std::vector<std::string> missing_in_file;
};

struct LoadOptions {
  /// Reject when any model parameter is absent from the file.
  bool strict = true;
  /// Restrict matching to model names starting with this prefix.
  std::string prefix;
};

/// Copies file values into the module's parameters by name. Values are
/// converted to the parameter dtype when the stored dtype differs. Shape
/// mismatches always throw; missing names throw only in strict mode.
LoadReport load_checkpoint(const std::filesystem::path& path, const Module& module,
                           const LoadOptions& options = {});

}  // namespace dpf
