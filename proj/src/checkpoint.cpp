#include "dpf/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>
#include <unordered_set>

namespace dpf {

namespace {

using Kind = CheckpointError::Kind;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError(Kind::kTruncated, "checkpoint '" + path_ + "' is truncated while reading " +
                                                  what + " at byte " + std::to_string(pos_));
    }
  }
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& params) {
  Writer w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  std::unordered_set<std::string> seen;
  for (const auto& p : params) {
    if (!seen.insert(p.name).second) {
      throw std::invalid_argument("save_checkpoint: duplicate name '" + p.name + "'");
    }
    if (p.name.size() > 0xFFFF) throw std::invalid_argument("save_checkpoint: name too long");
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name);
    const Shape& s = p.tensor.shape();
    w.u8(4);
    for (std::int64_t d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    w.u8(static_cast<std::uint8_t>(p.tensor.dtype()));
    if (p.tensor.dtype() == DType::kF32) {
      for (float v : p.tensor.data<float>()) w.u32(std::bit_cast<std::uint32_t>(v));
    } else {
      for (double v : p.tensor.data<double>()) w.u64(std::bit_cast<std::uint64_t>(v));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError(Kind::kIo, "write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError(Kind::kBadMagic, "'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(r.le(4, "version"));
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kBadVersion, "checkpoint '" + path.string() + "' has version " +
                                                 std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointVersion));
  }
  const auto count = static_cast<std::uint32_t>(r.le(4, "tensor count"));
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = static_cast<std::size_t>(r.le(2, "name length"));
    std::string name = r.str(name_len, "name");
    const auto rank = static_cast<int>(r.le(1, "rank"));
    if (rank < 1 || rank > 4) {
      throw CheckpointError(Kind::kShapeMismatch,
                            "tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    }
    std::int64_t dims[4] = {1, 1, 1, 1};
    for (int d = 0; d < rank; ++d) dims[4 - rank + d] = static_cast<std::int64_t>(r.le(4, "dims"));
    const auto tag = static_cast<std::uint8_t>(r.le(1, "dtype"));
    if (tag > 1) {
      throw CheckpointError(Kind::kShapeMismatch,
                            "tensor '" + name + "' has unknown dtype tag " + std::to_string(tag));
    }
    const auto dtype = static_cast<DType>(tag);
    Tensor t = Tensor::zeros({dims[0], dims[1], dims[2], dims[3]}, dtype);
    if (dtype == DType::kF32) {
      for (float& v : t.data<float>()) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4, "data")));
    } else {
      for (double& v : t.data<double>()) v = std::bit_cast<double>(r.le(8, "data"));
    }
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

LoadReport load_checkpoint(const std::filesystem::path& path, const Module& module,
                           const LoadOptions& options) {
  const auto stored = read_checkpoint(path);
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& nt : stored) by_name[nt.name] = &nt.tensor;

  LoadReport report;
  std::unordered_set<std::string> model_names;
  std::vector<std::pair<Tensor, const Tensor*>> assignments;
  for (const auto& p : module.parameters()) {
    model_names.insert(p.name);
    if (p.name.rfind(options.prefix, 0) != 0) continue;
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      report.missing_in_file.push_back(p.name);
      continue;
    }
    if (it->second->shape() != p.tensor.shape()) {
      throw CheckpointError(Kind::kShapeMismatch, "shape mismatch for '" + p.name + "': file " +
                                                      it->second->shape().str() + ", model " +
                                                      p.tensor.shape().str());
    }
    assignments.emplace_back(p.tensor, it->second);
    report.matched.push_back(p.name);
  }
  for (const auto& nt : stored) {
    if (!model_names.contains(nt.name)) report.unmatched_in_file.push_back(nt.name);
  }
  if (options.strict && !report.missing_in_file.empty()) {
    std::string names;
    for (const auto& n : report.missing_in_file) names += (names.empty() ? "" : ", ") + n;
    throw CheckpointError(Kind::kMissingName,
                          "checkpoint '" + path.string() + "' lacks parameters: " + names);
  }
  for (auto& [dst, src] : assignments) dst.copy_values_from(*src);
  return report;
}

}  // namespace dpf
