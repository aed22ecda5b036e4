#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpf {

/// Bad flags, unknown keys, malformed values: exit code 1 territory.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "section.key = value" configuration with typed, validated entries.
/// Every key has a default; setting a key that does not exist throws.
class RunConfig {
 public:
  enum class Type { kString, kInt, kFloat, kBool };

  struct Entry {
    std::string key;
    Type type = Type::kString;
    std::string value;
    std::string help;
  };

  RunConfig();

  /// Throws UsageError on unknown keys and on values that do not parse as
  /// the key's type.
  void set(const std::string& key, const std::string& value);
  /// "key = value" lines; '#' starts a comment. Throws UsageError naming the
  /// line on unknown keys or syntax errors.
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  /// Reads and merges a file; an unreadable file is a std::ios_base::failure.
  void merge_file(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  double number(const std::string& key) const;
  bool flag(const std::string& key) const;

  const std::vector<Entry>& entries() const { return entries_; }
  /// Every resolved key, one "key = value" line each, in definition order.
  std::string dump() const;

 private:
  const Entry& find(const std::string& key) const;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dpf
